// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <grp.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "datapallet/annotation.hpp"
#include "datapallet/capture.hpp"
#include "datapallet/errors.hpp"
#include "datapallet/format.hpp"
#include "datapallet/fsutil.hpp"
#include "datapallet/hub.hpp"
#include "datapallet/pallet_id.hpp"

extern char** environ;

namespace datapallet {

// One workflow node: run application A with input deck D (and optional input
// pallets) and capture whatever it creates into a new annotated pallet.
//
// Command placeholders: {APP} {DECK} {OUT} expand to the workspace extract
// directories; {IN:i} to the i-th input pallet's directory. Expansion is
// plain substring replacement inside every argv element.
struct WorkflowNodeSpec {
  std::string node_name;
  PalletId application_id;
  PalletId input_deck_id;
  std::vector<PalletId> input_pallet_ids;
  std::vector<std::string> command;
  std::map<std::string, std::string> env;
  bool deterministic = false;

  void validate() const {
    if (node_name.empty())
      throw ValidationError("workflow node needs a non-empty node_name");
    if (command.empty())
      throw ValidationError("workflow node needs a non-empty command");
    if (application_id.empty() || input_deck_id.empty())
      throw ValidationError(
          "workflow node needs application_id and input_deck_id");
    for (const std::string& arg : command) {
      size_t pos = 0;
      while ((pos = arg.find("{IN:", pos)) != std::string::npos) {
        size_t end = arg.find('}', pos);
        if (end == std::string::npos)
          throw ValidationError("unterminated {IN:i} placeholder in \"" + arg +
                                "\"");
        std::string idx_str = arg.substr(pos + 4, end - pos - 4);
        size_t idx = 0;
        try {
          idx = std::stoul(idx_str);
        } catch (const std::exception&) {
          throw ValidationError("bad {IN:i} placeholder index \"" + idx_str +
                                "\"");
        }
        if (idx >= input_pallet_ids.size())
          throw ValidationError(
              "{IN:" + idx_str + "} refers past the " +
              std::to_string(input_pallet_ids.size()) + " input pallet(s)");
        pos = end + 1;
      }
    }
  }
};

// Workspace layout: <root>/{app,deck,in0..inN,out,quarantine}
//
// app/deck/in* hold read-only extracts of the upstream pallets. out/ starts
// empty and doubles as the staging pallet root. The workspace root carries
// the sticky bit so an unprivileged node process cannot rename or unlink the
// read-only extracts, only add stray files of its own (which the post-run
// diff flags).
struct Workspace {
  fs::path root;
  fs::path app_dir;
  fs::path deck_dir;
  std::vector<fs::path> input_dirs;
  fs::path out_dir;
  fs::path quarantine_dir;

  std::string expand(const std::string& arg) const {
    std::string out = arg;
    auto replace_all = [&](const std::string& token, const std::string& value) {
      size_t pos = 0;
      while ((pos = out.find(token, pos)) != std::string::npos) {
        out.replace(pos, token.size(), value);
        pos += value.size();
      }
    };
    replace_all("{APP}", app_dir.string());
    replace_all("{DECK}", deck_dir.string());
    replace_all("{OUT}", out_dir.string());
    for (size_t i = 0; i < input_dirs.size(); ++i)
      replace_all("{IN:" + std::to_string(i) + "}", input_dirs[i].string());
    return out;
  }

  std::vector<std::string> expand_command(
      const std::vector<std::string>& argv) const {
    std::vector<std::string> out;
    out.reserve(argv.size());
    for (const std::string& arg : argv) out.push_back(expand(arg));
    return out;
  }
};

// Per-run timing breakdown plus outcome. All times in seconds.
//   t_prepare   capture setup and upstream extraction
//   t_spawn     process spin up / tear down (wall minus self-reported app
//               time when the command reports one, else 0, folded into t_app)
//   t_app       command runtime
//   t_seal      pallet creation and storage into the hub
//   t_teardown  workspace cleanup
struct RunReport {
  double t_prepare = 0;
  double t_spawn = 0;
  double t_app = 0;
  double t_seal = 0;
  double t_teardown = 0;
  double t_total = 0;
  int exit_code = -1;
  std::optional<PalletId> output_id;
  std::vector<std::string> escaped_writes;

  json to_json() const {
    json j = json::object();
    j["t_prepare"] = t_prepare;
    j["t_spawn"] = t_spawn;
    j["t_app"] = t_app;
    j["t_seal"] = t_seal;
    j["t_teardown"] = t_teardown;
    j["t_total"] = t_total;
    j["exit_code"] = exit_code;
    if (output_id) j["output_id"] = output_id->hex();
    j["escaped_writes"] = escaped_writes;
    return j;
  }
};

// Nonzero node exit. The workspace is preserved under quarantine for
// inspection; the partial report rides along.
class NodeError : public Error {
public:
  NodeError(std::string what, RunReport report, fs::path workspace_root)
      : Error(std::move(what)),
        report_(std::move(report)),
        workspace_root_(std::move(workspace_root)) {}

  const RunReport& report() const { return report_; }
  const fs::path& workspace_root() const { return workspace_root_; }

private:
  RunReport report_;
  fs::path workspace_root_;
};

struct RunOptions {
  // Parent directory for workspaces. Must be traversable by the unprivileged
  // uid the node process runs as when the runner itself is root; the system
  // temp directory qualifies.
  fs::path run_parent = fs::temp_directory_path();
  std::string backend = "staging_snapshot";
  bool keep_workspace = false;
};

namespace detail {

// When the runner is root, plain permission bits would not protect the
// read-only extracts from the node process. The child drops to this uid/gid
// (nobody/nogroup) before exec so the kernel enforces them.
constexpr uid_t kUnprivilegedUid = 65534;
constexpr gid_t kUnprivilegedGid = 65534;

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct ChildResult {
  int exit_code = -1;
  double wall_seconds = 0;
};

inline ChildResult spawn_and_wait(const std::vector<std::string>& argv,
                                  const std::map<std::string, std::string>& env,
                                  const fs::path& cwd) {
  std::map<std::string, std::string> merged;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view kv(*e);
    size_t eq = kv.find('=');
    if (eq != std::string_view::npos)
      merged[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
  }
  for (const auto& [k, v] : env) merged[k] = v;
  std::vector<std::string> env_strings;
  env_strings.reserve(merged.size());
  for (const auto& [k, v] : merged) env_strings.push_back(k + "=" + v);

  std::vector<char*> c_argv;
  for (const std::string& a : argv)
    c_argv.push_back(const_cast<char*>(a.c_str()));
  c_argv.push_back(nullptr);
  std::vector<char*> c_env;
  for (const std::string& e : env_strings)
    c_env.push_back(const_cast<char*>(e.c_str()));
  c_env.push_back(nullptr);

  auto t0 = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) throw IoError("fork failed");
  if (pid == 0) {
    if (::chdir(cwd.c_str()) != 0) _exit(124);
    if (::geteuid() == 0) {
      if (::setgroups(0, nullptr) != 0 || ::setgid(kUnprivilegedGid) != 0 ||
          ::setuid(kUnprivilegedUid) != 0)
        _exit(125);
    }
    ::execvpe(c_argv[0], c_argv.data(), c_env.data());
    _exit(127);
  }
  int status = 0;
  if (::waitpid(pid, &status, 0) < 0) throw IoError("waitpid failed");
  ChildResult r;
  r.wall_seconds = seconds_since(t0);
  if (WIFEXITED(status))
    r.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    r.exit_code = 128 + WTERMSIG(status);
  return r;
}

// Content fingerprint of everything in the workspace outside the output
// root. Compared before/after the run to flag writes that escaped out/.
inline std::map<std::string, std::string> workspace_fingerprint(
    const Workspace& ws) {
  std::map<std::string, std::string> prints;
  for (auto it = fs::recursive_directory_iterator(ws.root);
       it != fs::recursive_directory_iterator(); ++it) {
    fs::path rel = fs::relative(it->path(), ws.root);
    std::string rel_str = rel.generic_string();
    if (rel_str == "out" || rel_str.starts_with("out/")) {
      it.disable_recursion_pending();
      if (rel_str == "out") continue;
    }
    if (rel_str == "out" || rel_str.starts_with("out/")) continue;
    if (it->is_directory()) {
      prints[rel_str] = "dir";
    } else if (it->is_symlink()) {
      prints[rel_str] = "symlink:" + fs::read_symlink(it->path()).string();
    } else if (it->is_regular_file()) {
      prints[rel_str] = to_hex(Sha256::of(read_file(it->path())));
    } else {
      prints[rel_str] = "special";
    }
  }
  return prints;
}

inline std::vector<std::string> fingerprint_diff(
    const std::map<std::string, std::string>& before,
    const std::map<std::string, std::string>& after) {
  std::vector<std::string> changed;
  for (const auto& [path, print] : after) {
    auto it = before.find(path);
    if (it == before.end())
      changed.push_back(path + " (created)");
    else if (it->second != print)
      changed.push_back(path + " (modified)");
  }
  for (const auto& [path, print] : before)
    if (after.find(path) == after.end()) changed.push_back(path + " (removed)");
  return changed;
}

}  // namespace detail

// Extracts the application, input deck, and input pallets into a fresh
// workspace. Every referenced pallet must resolve in the hub and verify;
// the runner never executes against unverified inputs.
inline Workspace prepare_workspace(const WorkflowNodeSpec& spec, const Hub& hub,
                                   const fs::path& run_parent) {
  spec.validate();

  Workspace ws;
  ws.root = make_unique_dir(run_parent, "node-" + spec.node_name + "-");
  ws.app_dir = ws.root / "app";
  ws.deck_dir = ws.root / "deck";
  ws.out_dir = ws.root / "out";
  ws.quarantine_dir = ws.root / "quarantine";

  auto fetch = [&](const PalletId& id, const char* role) -> PalletImage {
    try {
      return hub.get(id);
    } catch (const NotFoundError&) {
      throw NotFoundError("missing " + std::string(role) + " pallet: " +
                          id.hex());
    }
  };

  PalletImage app = fetch(spec.application_id, "application");
  PalletImage deck = fetch(spec.input_deck_id, "input deck");
  std::vector<PalletImage> inputs;
  inputs.reserve(spec.input_pallet_ids.size());
  for (size_t i = 0; i < spec.input_pallet_ids.size(); ++i)
    inputs.push_back(fetch(spec.input_pallet_ids[i],
                           ("input[" + std::to_string(i) + "]").c_str()));

  fs::create_directories(ws.app_dir);
  fs::create_directories(ws.deck_dir);
  fs::create_directories(ws.out_dir);
  fs::create_directories(ws.quarantine_dir);
  extract(app, ws.app_dir);
  extract(deck, ws.deck_dir);
  for (size_t i = 0; i < inputs.size(); ++i) {
    fs::path dir = ws.root / ("in" + std::to_string(i));
    fs::create_directories(dir);
    extract(inputs[i], dir);
    ws.input_dirs.push_back(dir);
  }

  make_tree_read_only(ws.app_dir);
  make_tree_read_only(ws.deck_dir);
  for (const fs::path& dir : ws.input_dirs) make_tree_read_only(dir);
  set_file_mode(ws.out_dir, 0777);       // node process owns this tree
  set_file_mode(ws.quarantine_dir, 0700);
  set_file_mode(ws.root, 01777);         // sticky: extracts cannot be renamed
  return ws;
}

// Builds a staging pallet over the output root holding exactly the files the
// backend observed. The staging root is the output directory itself; nothing
// is copied.
inline StagingPallet capture_outputs(const Workspace& ws,
                                     CaptureBackend& backend,
                                     bool deterministic = false) {
  std::vector<std::string> files = backend.finish();
  StagingPallet staging = StagingPallet::adopt(ws.out_dir, deterministic);
  for (const std::string& rel : files) {
    try {
      staging.register_existing(rel);
    } catch (const IoError& e) {
      throw IoError("capture failed for created file \"" + rel +
                    "\": " + e.what());
    }
  }
  return staging;
}

// Runs one workflow node end to end: prepare, execute, capture, seal, store.
// On success returns the new pallet's id and the phase timings. On nonzero
// exit throws NodeError; the workspace moves to quarantine and no pallet is
// stored.
inline std::pair<PalletId, RunReport> run_node(const WorkflowNodeSpec& spec,
                                               Hub& hub,
                                               const RunOptions& opts = {}) {
  auto t_start = std::chrono::steady_clock::now();
  RunReport report;

  std::unique_ptr<CaptureBackend> backend = make_capture_backend(opts.backend);
  Workspace ws = prepare_workspace(spec, hub, opts.run_parent);
  backend->start(ws.out_dir);
  std::map<std::string, std::string> before = detail::workspace_fingerprint(ws);
  report.t_prepare = detail::seconds_since(t_start);

  std::vector<std::string> argv = ws.expand_command(spec.command);
  std::map<std::string, std::string> env = spec.env;
  fs::path selftime_path = ws.root / "selftime";
  env["DATAPALLET_SELFTIME_FILE"] = selftime_path.string();

  detail::ChildResult child = detail::spawn_and_wait(argv, env, ws.out_dir);
  report.exit_code = child.exit_code;

  // A cooperating command reports its own pure-application runtime through
  // DATAPALLET_SELFTIME_FILE; the remainder of the child wall time is then
  // attributable to spin up / tear down. Otherwise everything counts as app
  // time.
  report.t_app = child.wall_seconds;
  if (fs::exists(selftime_path)) {
    try {
      double self = std::stod(read_file(selftime_path));
      if (self >= 0 && self <= child.wall_seconds) {
        report.t_app = self;
        report.t_spawn = child.wall_seconds - self;
      }
    } catch (const std::exception&) {
      // unparsable self-report: keep the wall-clock attribution
    }
  }

  auto finish_report = [&](const std::map<std::string, std::string>& after) {
    report.escaped_writes = detail::fingerprint_diff(before, after);
    std::erase_if(report.escaped_writes, [](const std::string& p) {
      return p.starts_with("selftime ") || p == "selftime (created)";
    });
  };

  auto write_report = [&](const fs::path& dir) {
    try {
      write_file(dir / "report.json", report.to_json().dump() + "\n");
    } catch (const Error&) {
      // report persistence is best-effort
    }
  };

  if (child.exit_code != 0) {
    std::map<std::string, std::string> after =
        detail::workspace_fingerprint(ws);
    finish_report(after);
    report.t_total = detail::seconds_since(t_start);
    // Preserve the evidence: everything moves under quarantine/.
    std::error_code ec;
    make_tree_writable(ws.app_dir);
    make_tree_writable(ws.deck_dir);
    for (const fs::path& d : ws.input_dirs) make_tree_writable(d);
    for (const fs::path& d : {ws.app_dir, ws.deck_dir, ws.out_dir}) {
      fs::rename(d, ws.quarantine_dir / d.filename(), ec);
    }
    for (const fs::path& d : ws.input_dirs)
      fs::rename(d, ws.quarantine_dir / d.filename(), ec);
    write_report(ws.root);
    throw NodeError("node '" + spec.node_name + "' exited with code " +
                        std::to_string(child.exit_code) +
                        "; workspace preserved at " +
                        (ws.root / "quarantine").string(),
                    report, ws.root);
  }

  auto t_seal_start = std::chrono::steady_clock::now();
  StagingPallet staging = capture_outputs(ws, *backend, spec.deterministic);
  ProvenanceAnnotation annotation;
  annotation.kind = PalletKind::data_pallet;
  annotation.application_id = spec.application_id;
  annotation.input_deck_id = spec.input_deck_id;
  annotation.input_pallet_ids = spec.input_pallet_ids;
  annotation.node_name = spec.node_name;
  {
    std::string joined;
    for (size_t i = 0; i < argv.size(); ++i) {
      if (i > 0) joined += ' ';
      joined += argv[i];
    }
    annotation.command = joined;
  }
  if (!spec.deterministic) annotation.created_at = rfc3339_now();

  fs::path image_path = ws.root / "output.pallet";
  PalletImage image = seal(staging, annotation, image_path);
  PalletId output_id = hub.put(image);
  report.t_seal = detail::seconds_since(t_seal_start);
  report.output_id = output_id;

  std::map<std::string, std::string> after = detail::workspace_fingerprint(ws);
  std::erase_if(after, [](const auto& kv) {
    return kv.first == "output.pallet" || kv.first == "report.json";
  });
  finish_report(after);

  auto t_teardown_start = std::chrono::steady_clock::now();
  if (!opts.keep_workspace) {
    make_tree_writable(ws.app_dir);
    make_tree_writable(ws.deck_dir);
    for (const fs::path& d : ws.input_dirs) make_tree_writable(d);
    remove_tree(ws.app_dir);
    remove_tree(ws.deck_dir);
    for (const fs::path& d : ws.input_dirs) remove_tree(d);
    remove_tree(ws.out_dir);
    remove_tree(ws.quarantine_dir);
    fs::remove(image_path);
    fs::remove(selftime_path);
  }
  report.t_teardown = detail::seconds_since(t_teardown_start);
  report.t_total = detail::seconds_since(t_start);
  write_report(ws.root);
  return {output_id, report};
}

// Runs the specs in order, appending each produced pallet id to the next
// spec's input_pallet_ids. A failing node aborts the chain at that node.
inline std::vector<PalletId> chain_nodes(std::vector<WorkflowNodeSpec> specs,
                                         Hub& hub,
                                         const RunOptions& opts = {}) {
  std::vector<PalletId> produced;
  for (size_t i = 0; i < specs.size(); ++i) {
    if (i > 0) specs[i].input_pallet_ids.push_back(produced.back());
    auto [id, report] = run_node(specs[i], hub, opts);
    produced.push_back(id);
  }
  return produced;
}

}  // namespace datapallet
