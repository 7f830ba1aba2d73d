// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0
//
// datapallet — single entry point over the pallet library.
//
// Exit codes: 0 success; 2 usage/input error; 3 missing pallet; 4 integrity
// failure; `run` passes the child's exit code through on node failure; 1 is
// reserved for unexpected internal errors.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "datapallet/datapallet.hpp"

namespace dp = datapallet;

namespace {

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kUsage = 2;
constexpr int kMissing = 3;
constexpr int kIntegrity = 4;

struct GlobalConfig {
  std::string hub_path = "./pallet-hub";
  bool deterministic = false;
  bool json = false;
};

dp::Hub open_hub(const GlobalConfig& cfg) { return dp::Hub::init(cfg.hub_path); }

// Subcommands taking <id-or-path> accept either a 64-hex pallet id (resolved
// through the hub) or a filesystem path to a .pallet image.
dp::PalletImage resolve_image(const GlobalConfig& cfg, const std::string& ref) {
  if (dp::PalletId::looks_like_id(ref))
    return open_hub(cfg).get(dp::PalletId::from_hex(ref));
  return dp::PalletImage::open(ref);
}

void print_json(const dp::json& j) { std::cout << j.dump() << "\n"; }

// ---------------------------------------------------------------------------
// wrap
// ---------------------------------------------------------------------------

int cmd_wrap(const GlobalConfig& cfg, const std::string& path,
             const std::string& kind, const std::string& name) {
  if (!dp::fs::exists(path))
    throw dp::ValidationError("no such file or directory: " + path);

  dp::Hub hub = open_hub(cfg);
  dp::fs::path work =
      dp::make_unique_dir(dp::fs::temp_directory_path(), "wrap-");
  dp::StagingPallet staging = dp::StagingPallet::create(work, cfg.deterministic);
  staging.add_tree(path);

  dp::ProvenanceAnnotation a;
  a.kind = dp::pallet_kind_from_string(kind);
  a.node_name = name;
  if (!cfg.deterministic) a.created_at = dp::rfc3339_now();

  dp::PalletImage image = dp::seal(staging, a, work / "wrapped.pallet");
  dp::PalletId id = hub.put(image);
  dp::remove_tree(work);

  if (cfg.json)
    print_json(dp::json{{"id", id.hex()}});
  else
    std::cout << id.hex() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const GlobalConfig& cfg, const dp::WorkflowNodeSpec& spec,
            const dp::RunOptions& opts, const std::string& report_path) {
  dp::Hub hub = open_hub(cfg);
  try {
    auto [id, report] = dp::run_node(spec, hub, opts);
    dp::write_file(report_path, report.to_json().dump() + "\n");
    if (cfg.json)
      print_json(dp::json{{"output_id", id.hex()},
                          {"report", report.to_json()}});
    else
      std::cout << id.hex() << "\n";
    return kOk;
  } catch (const dp::NodeError& e) {
    dp::write_file(report_path, e.report().to_json().dump() + "\n");
    std::cerr << "error: " << e.what() << "\n";
    int code = e.report().exit_code;
    return code > 0 ? code : kInternal;
  }
}

// ---------------------------------------------------------------------------
// inspect / verify / extract
// ---------------------------------------------------------------------------

dp::json verification_to_json(const dp::VerificationReport& v) {
  dp::json parts = dp::json::array();
  for (const auto& [kind, ok] : v.partitions_ok)
    parts.push_back(dp::json{{"kind", dp::to_string(kind)}, {"ok", ok}});
  return dp::json{
      {"id_ok", v.id_ok}, {"partitions_ok", parts}, {"all_ok", v.all_ok()}};
}

void print_verification_text(const dp::VerificationReport& v) {
  std::cout << "id_ok: " << (v.id_ok ? "true" : "false") << "\n";
  for (const auto& [kind, ok] : v.partitions_ok)
    std::cout << dp::to_string(kind) << ": " << (ok ? "ok" : "CORRUPT") << "\n";
}

int cmd_inspect(const GlobalConfig& cfg, const std::string& ref) {
  dp::PalletImage image = resolve_image(cfg, ref);
  dp::VerificationReport v = dp::verify(image);

  dp::json j = dp::json::object();
  j["id"] = image.id().hex();
  j["file"] = image.path().string();
  j["file_size"] = image.file_size();
  dp::json parts = dp::json::array();
  for (const dp::PartitionDescriptor& p : image.header().partitions) {
    parts.push_back(dp::json{{"kind", dp::to_string(p.kind)},
                             {"offset", p.offset},
                             {"length", p.length},
                             {"sha256", dp::to_hex(p.digest)}});
  }
  j["partitions"] = parts;
  j["verify"] = verification_to_json(v);
  if (v.all_ok())
    j["annotation"] = dp::json::parse(
        image.read_partition(dp::PartitionKind::annotations));

  if (cfg.json) {
    print_json(j);
  } else {
    std::cout << "id:        " << image.id().hex() << "\n";
    std::cout << "file:      " << image.path().string() << "\n";
    std::cout << "size:      " << image.file_size() << " bytes\n";
    std::cout << "verify:    " << (v.all_ok() ? "ok" : "FAILED") << "\n";
    std::cout << "partitions:\n";
    for (const dp::PartitionDescriptor& p : image.header().partitions) {
      std::printf("  %-13s offset=%-8llu length=%-10llu sha256=%s\n",
                  dp::to_string(p.kind).c_str(),
                  static_cast<unsigned long long>(p.offset),
                  static_cast<unsigned long long>(p.length),
                  dp::to_hex(p.digest).c_str());
    }
    if (v.all_ok()) {
      std::cout << "annotation:\n";
      dp::json a = dp::json::parse(
          image.read_partition(dp::PartitionKind::annotations));
      std::cout << a.dump(2) << "\n";
    } else {
      print_verification_text(v);
    }
  }
  return v.all_ok() ? kOk : kIntegrity;
}

int cmd_verify(const GlobalConfig& cfg, const std::string& ref) {
  dp::PalletImage image = resolve_image(cfg, ref);
  dp::VerificationReport v = dp::verify(image);
  if (cfg.json)
    print_json(verification_to_json(v));
  else
    print_verification_text(v);
  return v.all_ok() ? kOk : kIntegrity;
}

int cmd_extract(const GlobalConfig& cfg, const std::string& ref,
                const std::string& dest) {
  dp::PalletImage image = resolve_image(cfg, ref);
  dp::fs::create_directories(dest);
  std::vector<std::string> files = dp::extract(image, dest);
  if (cfg.json) {
    print_json(dp::json{{"id", image.id().hex()}, {"files", files}});
  } else {
    for (const std::string& f : files) std::cout << f << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// ancestry
// ---------------------------------------------------------------------------

int cmd_ancestry(const GlobalConfig& cfg, const std::string& id_hex, int depth,
                 bool want_dependents, bool want_dot) {
  if (!dp::PalletId::looks_like_id(id_hex))
    throw dp::ValidationError("ancestry expects a 64-hex pallet id, got \"" +
                              id_hex + "\"");
  dp::Hub hub = open_hub(cfg);
  dp::PalletId id = dp::PalletId::from_hex(id_hex);
  dp::AncestryGraph g = want_dependents ? dp::dependents(hub, id)
                                        : dp::ancestors(hub, id, depth);
  if (cfg.json && !want_dot)
    print_json(dp::graph_to_json(g));
  else
    std::cout << dp::render_dot(g);
  return kOk;
}

// ---------------------------------------------------------------------------
// hub
// ---------------------------------------------------------------------------

int cmd_hub_init(const GlobalConfig& cfg) {
  dp::Hub hub = open_hub(cfg);
  if (cfg.json)
    print_json(dp::json{{"root", hub.root().string()}});
  else
    std::cout << "hub ready at " << hub.root().string() << "\n";
  return kOk;
}

int cmd_hub_list(const GlobalConfig& cfg, const std::string& kind_filter) {
  dp::Hub hub = open_hub(cfg);
  std::optional<dp::PalletKind> kind;
  if (!kind_filter.empty()) kind = dp::pallet_kind_from_string(kind_filter);
  std::vector<dp::HubEntry> entries = hub.list(kind);
  if (cfg.json) {
    dp::json out = dp::json::array();
    for (const dp::HubEntry& e : entries) out.push_back(e.to_json());
    print_json(out);
  } else {
    for (const dp::HubEntry& e : entries) {
      std::printf("%s  %-12s %10llu  %s\n", e.id.hex().c_str(),
                  dp::to_string(e.kind).c_str(),
                  static_cast<unsigned long long>(e.size),
                  e.node_name.c_str());
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int cmd_bench_space(const GlobalConfig& cfg) {
  dp::SpaceReport r = dp::measure_space();
  if (cfg.json)
    print_json(r.to_json());
  else
    std::cout << r.to_table();
  return kOk;
}

int cmd_bench_node(const GlobalConfig& cfg, dp::WorkflowNodeSpec spec,
                   bool synthetic, int sleep_ms, int output_kb, int trials,
                   const std::string& backend) {
  dp::Hub hub = open_hub(cfg);
  if (synthetic) {
    dp::SyntheticFixture fx =
        dp::make_synthetic_fixture(hub, sleep_ms, output_kb);
    spec = fx.spec;
  } else {
    spec.validate();
  }
  spec.deterministic = spec.deterministic || cfg.deterministic;
  dp::RunOptions opts;
  opts.backend = backend;
  dp::TimingReport r = dp::measure_node(spec, hub, trials, opts);
  if (cfg.json)
    print_json(r.to_json());
  else
    std::cout << r.to_table();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalConfig cfg;

  CLI::App app{"hash-identified data pallets: wrap, run, verify, trace"};
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--hub", cfg.hub_path, "pallet hub directory")
      ->envname("DATAPALLET_HUB")
      ->capture_default_str();
  app.add_flag("--deterministic", cfg.deterministic,
               "omit timestamps so identical content seals to identical ids");
  app.add_flag("--json", cfg.json, "machine-readable canonical JSON output");

  // wrap
  std::string wrap_path, wrap_kind, wrap_name;
  CLI::App* wrap = app.add_subcommand(
      "wrap", "seal a file or directory into a new pallet");
  wrap->add_option("path", wrap_path, "file or directory to wrap")->required();
  wrap->add_option("--kind", wrap_kind, "pallet kind")
      ->required()
      ->check(CLI::IsMember({"application", "input_deck"}));
  wrap->add_option("--name", wrap_name, "node name recorded in the annotation")
      ->required();

  // run
  dp::WorkflowNodeSpec run_spec;
  std::string run_app, run_deck, run_backend = "staging_snapshot";
  std::vector<std::string> run_inputs;
  std::string run_report = "report.json";
  bool run_keep = false;
  CLI::App* run = app.add_subcommand(
      "run", "execute a workflow node and capture its outputs into a pallet");
  run->add_option("--app", run_app, "application pallet id")->required();
  run->add_option("--deck", run_deck, "input deck pallet id")->required();
  // One id per occurrence, so a following "--" still starts the command.
  run->add_option("--input", run_inputs, "input pallet id (repeatable)")
      ->type_size(1)
      ->allow_extra_args(false);
  run->add_option("--name", run_spec.node_name, "workflow node name")
      ->required();
  run->add_option("--backend", run_backend, "capture backend")
      ->check(CLI::IsMember({"staging_snapshot", "passthrough_shim"}))
      ->capture_default_str();
  run->add_option("--report", run_report, "where to write the run report")
      ->capture_default_str();
  run->add_flag("--keep-workspace", run_keep,
                "keep the node workspace instead of tearing it down");
  run->add_option("command", run_spec.command,
                  "command template; placeholders {APP} {DECK} {IN:i} {OUT}")
      ->required();

  // inspect / verify / extract
  std::string inspect_ref;
  CLI::App* inspect = app.add_subcommand(
      "inspect", "show a pallet's id, partitions, and annotation");
  inspect->add_option("pallet", inspect_ref, "pallet id or image path")
      ->required();

  std::string verify_ref;
  CLI::App* verify = app.add_subcommand(
      "verify", "recompute a pallet's digests and report integrity");
  verify->add_option("pallet", verify_ref, "pallet id or image path")
      ->required();

  std::string extract_ref, extract_dest;
  CLI::App* extract = app.add_subcommand(
      "extract", "materialize a pallet's files into a directory");
  extract->add_option("pallet", extract_ref, "pallet id or image path")
      ->required();
  extract->add_option("dest", extract_dest, "destination directory")
      ->required();

  // ancestry
  std::string anc_id;
  int anc_depth = -1;
  bool anc_dependents = false, anc_dot = false;
  CLI::App* ancestry = app.add_subcommand(
      "ancestry", "trace the provenance links of a pallet");
  ancestry->add_option("pallet", anc_id, "pallet id")->required();
  ancestry->add_option("--depth", anc_depth,
                       "link hops to follow (-1 = unlimited)")
      ->capture_default_str();
  ancestry->add_flag("--dependents", anc_dependents,
                     "walk forward to pallets derived from this one");
  ancestry->add_flag("--dot", anc_dot, "force Graphviz output");

  // hub
  CLI::App* hub_cmd = app.add_subcommand("hub", "manage the pallet hub");
  hub_cmd->require_subcommand(1);
  CLI::App* hub_init = hub_cmd->add_subcommand(
      "init", "create (or reopen) the hub directory");
  std::string hub_list_kind;
  CLI::App* hub_list = hub_cmd->add_subcommand(
      "list", "list stored pallets sorted by id");
  hub_list->add_option("--kind", hub_list_kind, "filter by pallet kind")
      ->check(CLI::IsMember({"application", "input_deck", "data_pallet"}));

  // bench
  CLI::App* bench = app.add_subcommand(
      "bench", "measure space and timing overheads");
  bench->require_subcommand(1);
  CLI::App* bench_space = bench->add_subcommand(
      "space", "bytes on disk for probe pallets, with reference figures");
  dp::WorkflowNodeSpec bench_spec;
  std::string bench_app, bench_deck, bench_backend = "staging_snapshot";
  std::vector<std::string> bench_inputs;
  bool bench_synthetic = false;
  int bench_trials = 1000, bench_sleep_ms = 25, bench_output_kb = 100;
  CLI::App* bench_node = bench->add_subcommand(
      "node", "per-phase timing over repeated node runs");
  bench_node->add_option("--trials", bench_trials, "number of runs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench_node->add_flag("--synthetic", bench_synthetic,
                       "use the bundled synthetic workload");
  bench_node->add_option("--sleep-ms", bench_sleep_ms,
                         "synthetic workload runtime")
      ->capture_default_str();
  bench_node->add_option("--output-kb", bench_output_kb,
                         "synthetic workload output size")
      ->capture_default_str();
  bench_node->add_option("--app", bench_app, "application pallet id");
  bench_node->add_option("--deck", bench_deck, "input deck pallet id");
  bench_node->add_option("--input", bench_inputs, "input pallet id")
      ->type_size(1)
      ->allow_extra_args(false);
  bench_node->add_option("--name", bench_spec.node_name, "workflow node name");
  bench_node->add_option("--backend", bench_backend, "capture backend")
      ->check(CLI::IsMember({"staging_snapshot", "passthrough_shim"}))
      ->capture_default_str();
  bench_node->add_option("command", bench_spec.command, "command template");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (wrap->parsed()) return cmd_wrap(cfg, wrap_path, wrap_kind, wrap_name);
    if (run->parsed()) {
      run_spec.application_id = dp::PalletId::from_hex(run_app);
      run_spec.input_deck_id = dp::PalletId::from_hex(run_deck);
      for (const std::string& in : run_inputs)
        run_spec.input_pallet_ids.push_back(dp::PalletId::from_hex(in));
      run_spec.deterministic = cfg.deterministic;
      dp::RunOptions opts;
      opts.backend = run_backend;
      opts.keep_workspace = run_keep;
      return cmd_run(cfg, run_spec, opts, run_report);
    }
    if (inspect->parsed()) return cmd_inspect(cfg, inspect_ref);
    if (verify->parsed()) return cmd_verify(cfg, verify_ref);
    if (extract->parsed()) return cmd_extract(cfg, extract_ref, extract_dest);
    if (ancestry->parsed())
      return cmd_ancestry(cfg, anc_id, anc_depth, anc_dependents, anc_dot);
    if (hub_cmd->parsed()) {
      if (hub_init->parsed()) return cmd_hub_init(cfg);
      if (hub_list->parsed()) return cmd_hub_list(cfg, hub_list_kind);
    }
    if (bench->parsed()) {
      if (bench_space->parsed()) return cmd_bench_space(cfg);
      if (bench_node->parsed()) {
        if (!bench_synthetic) {
          if (bench_app.empty() || bench_deck.empty() ||
              bench_spec.command.empty())
            throw dp::ValidationError(
                "bench node needs --synthetic or --app/--deck plus a command");
          bench_spec.application_id = dp::PalletId::from_hex(bench_app);
          bench_spec.input_deck_id = dp::PalletId::from_hex(bench_deck);
          for (const std::string& in : bench_inputs)
            bench_spec.input_pallet_ids.push_back(dp::PalletId::from_hex(in));
        }
        return cmd_bench_node(cfg, bench_spec, bench_synthetic, bench_sleep_ms,
                              bench_output_kb, bench_trials, bench_backend);
      }
    }
    std::cerr << "error: no subcommand\n";
    return kUsage;
  } catch (const dp::NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const dp::IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const dp::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const dp::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const dp::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
