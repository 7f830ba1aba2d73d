// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "datapallet/ancestry.hpp"
#include "datapallet/hub.hpp"
#include "datapallet/runner.hpp"
#include "testutil.hpp"

using namespace datapallet;
using testutil::TempDir;

namespace {

struct SeedFile {
  std::string path;
  std::string content;
  uint32_t mode = 0644;
};

// Wraps a small file set into a sealed pallet and stores it in the hub.
PalletId put_pallet(Hub& hub, const fs::path& scratch, PalletKind kind,
                    const std::string& name,
                    const std::vector<SeedFile>& files) {
  StagingPallet staging = StagingPallet::create(scratch, /*deterministic=*/true);
  for (const SeedFile& f : files) staging.add_file(f.path, f.content, f.mode);
  ProvenanceAnnotation a;
  a.kind = kind;
  a.node_name = name;
  fs::path out = scratch / ("seed-" + name + "-" + unique_suffix() + ".pallet");
  PalletImage image = seal(staging, a, out);
  PalletId id = hub.put(image);
  fs::remove(out);
  return id;
}

// Shared scenery: a hub holding one tiny application and one input deck,
// plus a run parent directory for workspaces.
struct RunFixture {
  TempDir tmp{"runner"};
  Hub hub;
  PalletId app_id;
  PalletId deck_id;

  RunFixture() : hub(Hub::init(tmp / "hub")) {
    fs::create_directories(tmp / "runs");
    app_id = put_pallet(hub, tmp.path(), PalletKind::application, "step-app",
                        {{"app.sh", "#!/bin/sh\necho from-app\n", 0755},
                         {"lib/util.sh", "helper() { :; }\n", 0644}});
    deck_id = put_pallet(hub, tmp.path(), PalletKind::input_deck, "step-deck",
                         {{"params.txt", "alpha=1\nbeta=2\n"}});
  }

  WorkflowNodeSpec spec(std::vector<std::string> command,
                        const std::string& name = "step") const {
    WorkflowNodeSpec s;
    s.node_name = name;
    s.application_id = app_id;
    s.input_deck_id = deck_id;
    s.command = std::move(command);
    s.deterministic = true;
    return s;
  }

  RunOptions opts() const {
    RunOptions o;
    o.run_parent = tmp / "runs";
    return o;
  }
};

// Extracts a pallet from the hub into a fresh directory and returns the
// oracle view of the tree.
testutil::FileSet extract_to_oracle(const Hub& hub, const PalletId& id,
                                    const fs::path& parent) {
  fs::path dir = make_unique_dir(parent, "extract-");
  extract(hub.get(id), dir);
  return testutil::walk_tree_oracle(dir);
}

}  // namespace

TEST_CASE("spec validation rejects malformed nodes") {
  WorkflowNodeSpec s;
  s.node_name = "n";
  s.application_id = PalletId::from_digest(Sha256::of("a"));
  s.input_deck_id = PalletId::from_digest(Sha256::of("d"));
  s.command = {"true"};
  REQUIRE_NOTHROW(s.validate());

  SECTION("empty name") {
    s.node_name.clear();
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SECTION("empty command") {
    s.command.clear();
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SECTION("missing application id") {
    s.application_id = PalletId();
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SECTION("input placeholder out of range") {
    s.command = {"cat", "{IN:0}/x"};
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SECTION("unterminated input placeholder") {
    s.command = {"cat", "{IN:0/x"};
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SECTION("non-numeric input placeholder") {
    s.command = {"cat", "{IN:zero}/x"};
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
}

TEST_CASE("prepare_workspace lays out extracted trees") {
  RunFixture fx;
  PalletId in_a =
      put_pallet(fx.hub, fx.tmp.path(), PalletKind::input_deck, "in-a",
                 {{"a.dat", "AAA"}});
  PalletId in_b =
      put_pallet(fx.hub, fx.tmp.path(), PalletKind::input_deck, "in-b",
                 {{"b.dat", "BBB"}});

  WorkflowNodeSpec s = fx.spec({"true"});
  s.input_pallet_ids = {in_a, in_b};

  Workspace ws = prepare_workspace(s, fx.hub, fx.tmp / "runs");

  CHECK(fs::is_directory(ws.app_dir));
  CHECK(fs::is_directory(ws.deck_dir));
  CHECK(fs::is_directory(ws.out_dir));
  CHECK(fs::is_directory(ws.quarantine_dir));
  REQUIRE(ws.input_dirs.size() == 2);
  CHECK(ws.input_dirs[0] == ws.root / "in0");
  CHECK(ws.input_dirs[1] == ws.root / "in1");

  CHECK(read_file(ws.app_dir / "app.sh") == "#!/bin/sh\necho from-app\n");
  CHECK(read_file(ws.deck_dir / "params.txt") == "alpha=1\nbeta=2\n");
  CHECK(read_file(ws.input_dirs[0] / "a.dat") == "AAA");
  CHECK(read_file(ws.input_dirs[1] / "b.dat") == "BBB");

  // Extracted trees are locked; the output root is wide open.
  CHECK((file_mode_bits(ws.app_dir) & 0222) == 0);
  CHECK((file_mode_bits(ws.app_dir / "app.sh") & 0222) == 0);
  CHECK(file_mode_bits(ws.out_dir) == 0777);

  // Placeholder expansion maps onto the real directories.
  CHECK(ws.expand("{APP}/app.sh") == (ws.app_dir / "app.sh").string());
  CHECK(ws.expand("{DECK}") == ws.deck_dir.string());
  CHECK(ws.expand("{IN:1}/b.dat") == (ws.input_dirs[1] / "b.dat").string());
  CHECK(ws.expand("{OUT}") == ws.out_dir.string());
  CHECK(ws.expand("no placeholders") == "no placeholders");

  make_tree_writable(ws.root);
}

TEST_CASE("prepare_workspace names the missing pallet") {
  RunFixture fx;
  PalletId ghost = PalletId::from_digest(Sha256::of("never stored"));
  WorkflowNodeSpec s = fx.spec({"true"});
  s.input_pallet_ids = {ghost};

  try {
    prepare_workspace(s, fx.hub, fx.tmp / "runs");
    FAIL("expected NotFoundError");
  } catch (const NotFoundError& e) {
    std::string msg = e.what();
    CHECK(msg.find(ghost.hex()) != std::string::npos);
    CHECK(msg.find("input[0]") != std::string::npos);
  }
}

TEST_CASE("run_node seals command output into an annotated pallet") {
  RunFixture fx;
  WorkflowNodeSpec s =
      fx.spec({"sh", "-c", "printf 'hello world\\n' > greeting.txt"});

  auto [id, report] = run_node(s, fx.hub, fx.opts());

  CHECK(report.exit_code == 0);
  REQUIRE(report.output_id.has_value());
  CHECK(*report.output_id == id);
  CHECK(report.escaped_writes.empty());
  CHECK(fx.hub.contains(id));

  testutil::FileSet files = extract_to_oracle(fx.hub, id, fx.tmp.path());
  REQUIRE(files.size() == 1);
  CHECK(files.at("greeting.txt").content == "hello world\n");

  // The stored annotation carries the full lineage, read back from the hub
  // rather than from anything the runner kept in memory.
  ProvenanceAnnotation a = fx.hub.get(id).annotation();
  CHECK(a.kind == PalletKind::data_pallet);
  CHECK(a.application_id == fx.app_id);
  CHECK(a.input_deck_id == fx.deck_id);
  CHECK(a.input_pallet_ids.empty());
  CHECK(a.node_name == "step");
  CHECK(a.command.find("greeting.txt") != std::string::npos);
  CHECK(!a.created_at.has_value());  // deterministic run
}

TEST_CASE("run_node records a timestamp outside deterministic mode") {
  RunFixture fx;
  WorkflowNodeSpec s = fx.spec({"sh", "-c", "echo x > x.txt"});
  s.deterministic = false;

  auto [id, report] = run_node(s, fx.hub, fx.opts());
  ProvenanceAnnotation a = fx.hub.get(id).annotation();
  REQUIRE(a.created_at.has_value());
  CHECK(is_rfc3339_utc(*a.created_at));
}

TEST_CASE("run_node with no output files still produces a pallet") {
  RunFixture fx;
  auto [id, report] = run_node(fx.spec({"true"}), fx.hub, fx.opts());

  CHECK(fx.hub.contains(id));
  PalletImage image = fx.hub.get(id);
  CHECK(decode_archive(image.read_partition(PartitionKind::data_archive))
            .empty());
  CHECK(image.annotation().kind == PalletKind::data_pallet);
}

TEST_CASE("run_node expands placeholders against the workspace") {
  RunFixture fx;
  PalletId input =
      put_pallet(fx.hub, fx.tmp.path(), PalletKind::input_deck, "mesh-in",
                 {{"mesh.dat", "tetrahedra\n"}});
  WorkflowNodeSpec s = fx.spec(
      {"sh", "-c", "cat \"$1\" \"$2\" > merged.txt", "merge",
       "{DECK}/params.txt", "{IN:0}/mesh.dat"});
  s.input_pallet_ids = {input};

  auto [id, report] = run_node(s, fx.hub, fx.opts());

  testutil::FileSet files = extract_to_oracle(fx.hub, id, fx.tmp.path());
  CHECK(files.at("merged.txt").content == "alpha=1\nbeta=2\ntetrahedra\n");

  ProvenanceAnnotation a = fx.hub.get(id).annotation();
  REQUIRE(a.input_pallet_ids.size() == 1);
  CHECK(a.input_pallet_ids[0] == input);
}

TEST_CASE("run_node passes spec environment to the command") {
  RunFixture fx;
  WorkflowNodeSpec s =
      fx.spec({"sh", "-c", "printf '%s' \"$DATASET_TAG\" > tag.txt"});
  s.env["DATASET_TAG"] = "run-42";

  auto [id, report] = run_node(s, fx.hub, fx.opts());
  testutil::FileSet files = extract_to_oracle(fx.hub, id, fx.tmp.path());
  CHECK(files.at("tag.txt").content == "run-42");
}

TEST_CASE("failing node quarantines the workspace and stores nothing") {
  RunFixture fx;
  size_t pallets_before = fx.hub.list().size();
  WorkflowNodeSpec s =
      fx.spec({"sh", "-c", "echo partial > partial.txt; exit 7"}, "bad-step");

  fs::path preserved;
  try {
    run_node(s, fx.hub, fx.opts());
    FAIL("expected NodeError");
  } catch (const NodeError& e) {
    CHECK(e.report().exit_code == 7);
    CHECK_FALSE(e.report().output_id.has_value());
    CHECK(std::string(e.what()).find("code 7") != std::string::npos);
    preserved = e.workspace_root();
  }

  // No pallet appeared in the hub.
  CHECK(fx.hub.list().size() == pallets_before);

  // The evidence moved under quarantine/, report included.
  REQUIRE(fs::is_directory(preserved / "quarantine" / "out"));
  CHECK(read_file(preserved / "quarantine" / "out" / "partial.txt") ==
        "partial\n");
  CHECK(fs::is_directory(preserved / "quarantine" / "app"));
  CHECK(fs::is_directory(preserved / "quarantine" / "deck"));
  REQUIRE(fs::exists(preserved / "report.json"));
  json rep = json::parse(read_file(preserved / "report.json"));
  CHECK(rep.at("exit_code") == 7);
  CHECK_FALSE(rep.contains("output_id"));

  make_tree_writable(preserved);
}

TEST_CASE("deterministic reruns reproduce the output id") {
  RunFixture fx;
  WorkflowNodeSpec s =
      fx.spec({"sh", "-c", "printf 'stable' > result.dat"}, "repro");

  auto [id1, r1] = run_node(s, fx.hub, fx.opts());
  auto [id2, r2] = run_node(s, fx.hub, fx.opts());
  CHECK(id1 == id2);
}

TEST_CASE("write attempts against extracted inputs fail") {
  RunFixture fx;
  PalletId input =
      put_pallet(fx.hub, fx.tmp.path(), PalletKind::input_deck, "locked-in",
                 {{"data.bin", "precious"}});

  testutil::FileSet app_before =
      extract_to_oracle(fx.hub, fx.app_id, fx.tmp.path());
  testutil::FileSet in_before =
      extract_to_oracle(fx.hub, input, fx.tmp.path());

  // The node tries to overwrite, append to, and delete upstream files. Every
  // attempt must fail; the run itself still exits 0 and reports each failed
  // attempt into its own output so the test can see the attack actually ran.
  WorkflowNodeSpec s = fx.spec(
      {"sh", "-c",
       "( echo clobber > {APP}/app.sh ) 2>/dev/null && echo app-write >> won.txt;"
       "( echo clobber >> {IN:0}/data.bin ) 2>/dev/null && echo in-append >> won.txt;"
       "( rm -f {DECK}/params.txt ) 2>/dev/null && echo deck-rm >> won.txt;"
       "echo done > attack.log; true"},
      "attacker");
  s.input_pallet_ids = {input};

  RunOptions o = fx.opts();
  o.keep_workspace = true;
  auto [id, report] = run_node(s, fx.hub, o);
  CHECK(report.exit_code == 0);

  testutil::FileSet produced = extract_to_oracle(fx.hub, id, fx.tmp.path());
  CHECK(produced.count("won.txt") == 0);
  CHECK(produced.count("attack.log") == 1);

  // The kept workspace still holds the pristine bytes.
  fs::path ws_root;
  for (const auto& e : fs::directory_iterator(fx.tmp / "runs"))
    if (e.path().filename().string().starts_with("node-attacker-"))
      ws_root = e.path();
  REQUIRE(!ws_root.empty());
  CHECK(read_file(ws_root / "app" / "app.sh") ==
        app_before.at("app.sh").content);
  CHECK(read_file(ws_root / "in0" / "data.bin") == "precious");
  CHECK(fs::exists(ws_root / "deck" / "params.txt"));

  // And the hub copies are untouched: re-extraction is byte-identical.
  testutil::FileSet app_after =
      extract_to_oracle(fx.hub, fx.app_id, fx.tmp.path());
  testutil::FileSet in_after = extract_to_oracle(fx.hub, input, fx.tmp.path());
  CHECK(app_after == app_before);
  CHECK(in_after == in_before);

  make_tree_writable(ws_root);
}

TEST_CASE("writes outside the output root are reported, not captured") {
  RunFixture fx;
  // The workspace root is sticky and world-writable, so the child can plant
  // a file next to out/ — exactly the escape the fingerprint sweep exists
  // to catch.
  WorkflowNodeSpec s = fx.spec(
      {"sh", "-c", "echo legit > kept.txt; echo sneak > {OUT}/../escaped.txt"},
      "escapee");

  auto [id, report] = run_node(s, fx.hub, fx.opts());

  REQUIRE(report.escaped_writes.size() == 1);
  CHECK(report.escaped_writes[0] == "escaped.txt (created)");

  testutil::FileSet produced = extract_to_oracle(fx.hub, id, fx.tmp.path());
  CHECK(produced.count("kept.txt") == 1);
  CHECK(produced.count("escaped.txt") == 0);
}

TEST_CASE("report timings nest inside the total") {
  RunFixture fx;
  auto [id, report] =
      run_node(fx.spec({"sh", "-c", "echo r > r.txt"}), fx.hub, fx.opts());

  CHECK(report.t_prepare > 0.0);
  CHECK(report.t_app > 0.0);
  CHECK(report.t_seal > 0.0);
  CHECK(report.t_teardown > 0.0);
  CHECK(report.t_total >=
        report.t_prepare + report.t_app + report.t_seal);
  CHECK(report.t_total >= report.t_teardown);

  // report.json persists at the run root with the exact field set.
  fs::path ws_root;
  for (const auto& e : fs::directory_iterator(fx.tmp / "runs"))
    if (e.path().filename().string().starts_with("node-step-"))
      ws_root = e.path();
  REQUIRE(!ws_root.empty());
  json rep = json::parse(read_file(ws_root / "report.json"));
  std::set<std::string> keys;
  for (const auto& [k, v] : rep.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"escaped_writes", "exit_code",
                                      "output_id", "t_app", "t_prepare",
                                      "t_seal", "t_spawn", "t_teardown",
                                      "t_total"});
  CHECK(rep.at("output_id") == id.hex());
}

TEST_CASE("self-reported app time splits spawn overhead from app runtime") {
  RunFixture fx;
  WorkflowNodeSpec s = fx.spec(
      {"sh", "-c",
       "printf '0.0001' > \"$DATAPALLET_SELFTIME_FILE\"; echo x > x.txt"},
      "selftimer");

  auto [id, report] = run_node(s, fx.hub, fx.opts());

  // The child self-reported 0.1 ms of pure app time; the rest of its wall
  // clock shows up as spin up / tear down.
  CHECK(report.t_app == Catch::Approx(0.0001));
  CHECK(report.t_spawn > 0.0);
  // The selftime file itself never counts as an escaped write.
  CHECK(report.escaped_writes.empty());
}

TEST_CASE("chain_nodes feeds each output into the next node") {
  RunFixture fx;
  std::vector<WorkflowNodeSpec> chain;
  chain.push_back(
      fx.spec({"sh", "-c", "printf 'stage0\\n' > carried.txt"}, "gen"));
  chain.push_back(fx.spec(
      {"sh", "-c", "cat \"$1\" > carried.txt; printf 'stage1\\n' >> carried.txt",
       "x", "{IN:0}/carried.txt"},
      "grow"));
  chain.push_back(fx.spec(
      {"sh", "-c", "cat \"$1\" > carried.txt; printf 'stage2\\n' >> carried.txt",
       "x", "{IN:0}/carried.txt"},
      "finish"));
  // The downstream specs start with no inputs; chain_nodes wires them.
  REQUIRE(chain[1].input_pallet_ids.empty());

  std::vector<PalletId> produced = chain_nodes(chain, fx.hub, fx.opts());
  REQUIRE(produced.size() == 3);

  testutil::FileSet last =
      extract_to_oracle(fx.hub, produced[2], fx.tmp.path());
  CHECK(last.at("carried.txt").content == "stage0\nstage1\nstage2\n");

  // Each stored annotation names its actual upstream pallet.
  ProvenanceAnnotation a1 = fx.hub.get(produced[1]).annotation();
  REQUIRE(a1.input_pallet_ids.size() == 1);
  CHECK(a1.input_pallet_ids[0] == produced[0]);
  ProvenanceAnnotation a2 = fx.hub.get(produced[2]).annotation();
  REQUIRE(a2.input_pallet_ids.size() == 1);
  CHECK(a2.input_pallet_ids[0] == produced[1]);
}

TEST_CASE("a failing link aborts the chain at that node") {
  RunFixture fx;
  std::vector<WorkflowNodeSpec> chain;
  chain.push_back(fx.spec({"sh", "-c", "echo a > a.txt"}, "ok-node"));
  chain.push_back(fx.spec({"sh", "-c", "exit 3"}, "broken-node"));
  chain.push_back(fx.spec({"sh", "-c", "echo c > c.txt"}, "never-runs"));

  size_t before = fx.hub.list().size();
  CHECK_THROWS_AS(chain_nodes(chain, fx.hub, fx.opts()), NodeError);
  // Exactly one pallet (from the first node) was added.
  CHECK(fx.hub.list().size() == before + 1);
}

TEST_CASE("both capture backends seal identical pallets") {
  RunFixture fx;
  WorkflowNodeSpec s = fx.spec(
      {"sh", "-c",
       "mkdir -p sub/deeper; echo one > sub/one.txt; echo two > sub/deeper/two.txt;"
       "echo tmp > tmp.txt; rm tmp.txt; echo final > final.txt"},
      "dual");

  RunOptions snap = fx.opts();
  snap.backend = "staging_snapshot";
  RunOptions live = fx.opts();
  live.backend = "passthrough_shim";

  auto [id_snap, r1] = run_node(s, fx.hub, snap);
  auto [id_live, r2] = run_node(s, fx.hub, live);

  // Same files observed, same deterministic annotation: the image bytes and
  // therefore the ids agree.
  CHECK(id_snap == id_live);
}

TEST_CASE("run_node teardown leaves only the report behind") {
  RunFixture fx;
  auto [id, report] =
      run_node(fx.spec({"sh", "-c", "echo z > z.txt"}, "tidy"), fx.hub,
               fx.opts());

  fs::path ws_root;
  for (const auto& e : fs::directory_iterator(fx.tmp / "runs"))
    if (e.path().filename().string().starts_with("node-tidy-"))
      ws_root = e.path();
  REQUIRE(!ws_root.empty());

  std::vector<std::string> leftovers;
  for (const auto& e : fs::directory_iterator(ws_root))
    leftovers.push_back(e.path().filename().string());
  CHECK(leftovers == std::vector<std::string>{"report.json"});
}
