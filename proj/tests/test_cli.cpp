#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>

#include "padst/cli.hpp"
#include "padst/dst.hpp"
#include "padst/expressivity.hpp"

using namespace padst;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("padst_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const char* leaf) const { return (path / leaf).string(); }
};

// Swallows a stream for the duration of a scope; keeps expected error chatter
// out of the test log and lets assertions read what a command printed.
struct Capture {
  std::ostream& stream;
  std::ostringstream buf;
  std::streambuf* saved;
  explicit Capture(std::ostream& s) : stream(s), saved(s.rdbuf(buf.rdbuf())) {}
  ~Capture() { stream.rdbuf(saved); }
  std::string text() const { return buf.str(); }
};

Json base_config(std::uint64_t seed) {
  Json cfg;
  cfg["version"] = 1;
  cfg["seed"] = seed;
  cfg["dataset"] = {{"name", "permuted-diag"}, {"d0", 4}, {"samples", 48}, {"density", 0.5}};
  cfg["net"] = {{"widths", Json::array({4, 4})},
                {"structure", {{"family", "diagonal"}, {"density", 0.5}}},
                {"perm_init", "soft_uniform"}};
  cfg["train"] = {{"epochs", 3}, {"batch_size", 16}, {"dst_interval", 2},
                  {"lr", 0.05},  {"lambda_perm", 0.1}};
  return cfg;
}

int run_train(const Json& cfg, const TempDir& dir, const char* out_leaf = "out") {
  write_text_file(dir.file("config.json"), cfg.dump(2) + "\n");
  Capture out(std::cout);
  Capture err(std::cerr);
  return cmd_train({dir.file("config.json"), (dir.path / out_leaf).string()});
}

const std::regex kIsoUtc(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)");
const std::regex kHex16("[0-9a-f]{16}");

}  // namespace

TEST_CASE("the thread cap reads and clamps its environment variable") {
  const char* saved = std::getenv("PADST_THREADS");
  std::string saved_copy = saved ? saved : "";

  ::unsetenv("PADST_THREADS");
  CHECK(env_thread_cap() == 1);
  ::setenv("PADST_THREADS", "4", 1);
  CHECK(env_thread_cap() == 4);
  ::setenv("PADST_THREADS", "999", 1);
  CHECK(env_thread_cap() == 64);
  ::setenv("PADST_THREADS", "0", 1);
  CHECK(env_thread_cap() == 1);
  ::setenv("PADST_THREADS", "-3", 1);
  CHECK(env_thread_cap() == 1);
  ::setenv("PADST_THREADS", "junk", 1);
  CHECK(env_thread_cap() == 1);
  ::setenv("PADST_THREADS", "12x", 1);
  CHECK(env_thread_cap() == 1);

  if (saved)
    ::setenv("PADST_THREADS", saved_copy.c_str(), 1);
  else
    ::unsetenv("PADST_THREADS");
}

TEST_CASE("synthetic datasets are reproducible and sized as configured") {
  Json cfg = base_config(5)["dataset"];
  Dataset a = dataset_from_config(cfg, 5);
  Dataset b = dataset_from_config(cfg, 5);
  REQUIRE(a.size() == 48);
  CHECK(a.inputs.front().size() == 4);
  CHECK(a.targets.front().size() == 4);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  Dataset c = dataset_from_config(cfg, 6);
  CHECK(a.inputs != c.inputs);

  Json teacher = {{"name", "dense-teacher"}, {"d0", 3}, {"hidden", 5}, {"out_dim", 2},
                  {"samples", 10}};
  Dataset t = dataset_from_config(teacher, 1);
  CHECK(t.size() == 10);
  CHECK(t.inputs.front().size() == 3);
  CHECK(t.targets.front().size() == 2);

  CHECK_THROWS_AS(dataset_from_config({{"name", "nope"}}, 1), std::invalid_argument);
  Json stray = cfg;
  stray["extra"] = 1;
  CHECK_THROWS_AS(dataset_from_config(stray, 1), std::invalid_argument);
}

TEST_CASE("csv datasets load strictly and cite bad lines") {
  TempDir dir;
  write_text_file(dir.file("data.csv"), "x0,x1,y0\n1.5,2,0.25\n-1,0.5,3\n");
  Json cfg = {{"name", "csv"}, {"path", dir.file("data.csv")}, {"in_dim", 2}, {"out_dim", 1}};
  Dataset d = dataset_from_config(cfg, 1);
  REQUIRE(d.size() == 2);
  CHECK(d.inputs[0] == std::vector<double>{1.5, 2.0});
  CHECK(d.targets[1] == std::vector<double>{3.0});

  write_text_file(dir.file("badhead.csv"), "a,b,c\n1,2,3\n");
  Json bad_head = cfg;
  bad_head["path"] = dir.file("badhead.csv");
  CHECK_THROWS_WITH_AS(dataset_from_config(bad_head, 1),
                       doctest::Contains("header mismatch"), std::invalid_argument);

  write_text_file(dir.file("badnum.csv"), "x0,x1,y0\n1,2,3\n1,zap,3\n");
  Json bad_num = cfg;
  bad_num["path"] = dir.file("badnum.csv");
  CHECK_THROWS_WITH_AS(dataset_from_config(bad_num, 1), doctest::Contains("line 3"),
                       std::invalid_argument);

  write_text_file(dir.file("short.csv"), "x0,x1,y0\n1,2\n");
  Json short_row = cfg;
  short_row["path"] = dir.file("short.csv");
  CHECK_THROWS_WITH_AS(dataset_from_config(short_row, 1), doctest::Contains("expected 3 fields"),
                       std::invalid_argument);
}

TEST_CASE("net construction honours every config knob") {
  Json cfg = base_config(9);
  SmallNet net = build_net_from_config(cfg);
  REQUIRE(net.layers.size() == 2);
  CHECK(net.input_dim() == 4);
  CHECK(net.output_dim() == 4);
  CHECK_FALSE(net.layers[0].perm.hardened());
  CHECK(net.layers[0].side == PermSide::Column);
  CHECK(net.layers[0].bias.has_value());

  SmallNet again = build_net_from_config(cfg);
  CHECK(checkpoint_to_json(net) == checkpoint_to_json(again));
  Json other = cfg;
  other["seed"] = 10;
  CHECK(checkpoint_to_json(build_net_from_config(other)) != checkpoint_to_json(net));

  Json hard = cfg;
  hard["net"]["perm_init"] = "identity";
  hard["net"]["bias"] = false;
  hard["net"]["perm_side"] = "row";
  SmallNet hnet = build_net_from_config(hard);
  CHECK(hnet.layers[0].perm.hardened());
  CHECK(identity_distance(hnet.layers[0].perm) == 1.0);
  CHECK(hnet.layers[0].side == PermSide::Row);
  CHECK_FALSE(hnet.layers[0].bias.has_value());

  Json random_hard = cfg;
  random_hard["net"]["perm_init"] = "random_hard";
  CHECK(build_net_from_config(random_hard).layers[0].perm.hardened());

  Json bad_side = cfg;
  bad_side["net"]["perm_side"] = "diagonal";
  CHECK_THROWS_AS(build_net_from_config(bad_side), std::invalid_argument);
  Json bad_init = cfg;
  bad_init["net"]["perm_init"] = "warm";
  CHECK_THROWS_AS(build_net_from_config(bad_init), std::invalid_argument);
  Json bad_width = cfg;
  bad_width["net"]["widths"] = Json::array({4, 0});
  CHECK_THROWS_AS(build_net_from_config(bad_width), std::invalid_argument);
  Json stray = cfg;
  stray["net"]["colour"] = "red";
  CHECK_THROWS_AS(build_net_from_config(stray), std::invalid_argument);
}

TEST_CASE("training options fall back to defaults and reject strangers") {
  Json cfg = base_config(1);
  TrainConfig t = train_config_from_json(cfg);
  CHECK(t.epochs == 3);
  CHECK(t.batch_size == 16);
  CHECK(t.dst_interval == 2);
  CHECK(t.lr == 0.05);
  CHECK(t.seed == 1);
  CHECK(t.momentum == 0.0);  // untouched default

  Json bare;
  bare["version"] = 1;
  bare["seed"] = 7;
  TrainConfig d = train_config_from_json(bare);
  CHECK(d.epochs == TrainConfig{}.epochs);
  CHECK(d.seed == 7);

  Json stray = cfg;
  stray["train"]["warmup"] = 10;
  CHECK_THROWS_WITH_AS(train_config_from_json(stray), doctest::Contains("warmup"),
                       std::invalid_argument);
}

TEST_CASE("a full training command writes its four artifacts") {
  TempDir dir;
  Json cfg = base_config(21);
  {
    write_text_file(dir.file("config.json"), cfg.dump(2) + "\n");
    Capture out(std::cout);
    Capture err(std::cerr);
    int rc = cmd_train({dir.file("config.json"), (dir.path / "out").string()});
    CHECK(rc == kExitOk);
    CHECK(out.text().substr(0, 7) == "train: ");
    CHECK(err.text().empty());
  }

  fs::path out = dir.path / "out";
  for (const char* leaf : {"checkpoint.json", "report.json", "report.csv", "manifest.json"})
    CHECK(fs::exists(out / leaf));

  SmallNet net = load_checkpoint((out / "checkpoint.json").string());
  CHECK(net.layers.size() == 2);

  Json report = Json::parse(read_text_file((out / "report.json").string()));
  CHECK(report.at("epochs").size() == 3);
  CHECK(report.at("total_steps").get<long long>() == 9);  // ceil(48/16) * 3

  std::string csv = read_text_file((out / "report.csv").string());
  CHECK(csv.rfind("epoch,task_loss,total_penalty,penalty_l0,penalty_l1,hardened_l0,hardened_l1\n",
                  0) == 0);

  Json manifest = Json::parse(read_text_file((out / "manifest.json").string()));
  CHECK(manifest.at("version") == 1);
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("seed") == 21);
  CHECK(manifest.at("outputs") ==
        Json::array({"checkpoint.json", "report.csv", "report.json"}));
  CHECK(std::regex_match(manifest.at("config_hash").get<std::string>(), kHex16));
  CHECK(std::regex_match(manifest.at("timestamp").get<std::string>(), kIsoUtc));
  CHECK(manifest.at("config_hash").get<std::string>() == config_hash_hex(cfg));
}

TEST_CASE("training runs are byte-reproducible given the config") {
  TempDir dir;
  Json cfg = base_config(33);
  CHECK(run_train(cfg, dir, "a") == kExitOk);
  CHECK(run_train(cfg, dir, "b") == kExitOk);
  for (const char* leaf : {"checkpoint.json", "report.json", "report.csv"}) {
    CHECK(read_text_file((dir.path / "a" / leaf).string()) ==
          read_text_file((dir.path / "b" / leaf).string()));
  }
  Json ma = Json::parse(read_text_file((dir.path / "a" / "manifest.json").string()));
  Json mb = Json::parse(read_text_file((dir.path / "b" / "manifest.json").string()));
  ma.erase("timestamp");
  mb.erase("timestamp");
  CHECK(ma == mb);

  Json reseeded = cfg;
  reseeded["seed"] = 34;
  CHECK(run_train(reseeded, dir, "c") == kExitOk);
  CHECK(read_text_file((dir.path / "a" / "checkpoint.json").string()) !=
        read_text_file((dir.path / "c" / "checkpoint.json").string()));
}

TEST_CASE("config mistakes exit with the config code") {
  TempDir dir;
  {
    Capture err(std::cerr);
    CHECK(cmd_train({dir.file("nonexistent.json"), dir.file("out")}) == kExitConfig);
    CHECK(err.text().substr(0, 7) == "error: ");
  }
  Json bad_version = base_config(1);
  bad_version["version"] = 2;
  CHECK(run_train(bad_version, dir) == kExitConfig);

  Json stray = base_config(1);
  stray["notes"] = "hello";
  CHECK(run_train(stray, dir) == kExitConfig);

  Json mismatched = base_config(1);
  mismatched["net"]["widths"] = Json::array({4, 3});  // output 3 vs target dim 4
  CHECK(run_train(mismatched, dir) == kExitConfig);

  Json empty_data = base_config(1);
  empty_data["dataset"]["samples"] = 0;
  CHECK(run_train(empty_data, dir) == kExitConfig);

  write_text_file(dir.file("mangled.json"), "{not json");
  Capture err(std::cerr);
  CHECK(cmd_train({dir.file("mangled.json"), dir.file("out")}) == kExitConfig);
}

TEST_CASE("a diverging run exits with the divergence code") {
  TempDir dir;
  Json cfg = base_config(2);
  cfg["train"]["lr"] = 1e12;
  cfg["train"]["epochs"] = 5;  // the blow-up needs a few squarings to reach inf
  write_text_file(dir.file("config.json"), cfg.dump(2) + "\n");
  Capture out(std::cout);
  Capture err(std::cerr);
  int rc = cmd_train({dir.file("config.json"), (dir.path / "out").string()});
  CHECK(rc == kExitDiverged);
  CHECK(err.text().find("diverged at step") != std::string::npos);
}

TEST_CASE("the config hash is canonical over key order") {
  Json a;
  a["beta"] = 1;
  a["alpha"] = Json::array({1, 2});
  Json b;
  b["alpha"] = Json::array({1, 2});
  b["beta"] = 1;
  CHECK(config_hash_hex(a) == config_hash_hex(b));
  Json c = a;
  c["beta"] = 2;
  CHECK(config_hash_hex(a) != config_hash_hex(c));
  CHECK(std::regex_match(config_hash_hex(a), kHex16));
}

TEST_CASE("bound presets expose the pinned three-layer and surrogate numbers") {
  TempDir dir;
  {
    Capture err(std::cerr);
    CHECK(cmd_bounds({"", "appC", "", "json", dir.file("appc.json")}) == kExitOk);
  }
  Json all = Json::parse(read_text_file(dir.file("appc.json")));
  CHECK(all.at("dense").at("total") == "4330747");
  CHECK(all.at("block").at("total") == "50653");
  CHECK(all.at("block_perm").at("total") == "983053");
  CHECK(all.at("block_perm").at("u_sequence") == Json::array({0, 2, 4, 4}));
  CHECK(fs::exists(dir.file("appc.json") + std::string(".manifest.json")));

  {
    Capture err(std::cerr);
    CHECK(cmd_bounds({"", "vitL-surrogate", "", "json", dir.file("vit.json")}) == kExitOk);
  }
  Json vit = Json::parse(read_text_file(dir.file("vit.json")));
  CHECK(vit.at("per_block_gain") == 256);
  CHECK(vit.at("l_overhead") == 4);
  CHECK(vit.at("l_overhead_layers") == 8);
  CHECK(vit.at("period") == 2);
  double log10_total = vit.at("log10_total").get<double>();
  CHECK(log10_total > 29000.0);
  CHECK(log10_total < 30000.0);
  const Json& u = vit.at("u_sequence");
  REQUIRE(u.size() == 49);
  for (int t = 0; t <= 24; ++t) CHECK(u.at(2 * t) == std::min(1024, 256 * t));
}

TEST_CASE("bound specs round-trip through the file interface") {
  NetworkSpec spec;
  spec.d0 = 6;
  {
    LayerSpec l;
    l.width = 10;
    l.family = Family::DiagK;
    l.param = 2;
    l.mixing = true;
    spec.layers.push_back(l);
  }
  {
    LayerSpec l;
    l.width = 9;
    l.family = Family::NMTied;
    l.alpha_num = 1;
    l.alpha_den = 3;
    spec.layers.push_back(l);
  }
  {
    LayerSpec l;
    l.width = 5;
    l.family = Family::Dense;
    spec.layers.push_back(l);
  }

  TempDir dir;
  write_text_file(dir.file("spec.json"), spec_to_json(spec).dump(2) + "\n");
  {
    Capture err(std::cerr);
    CHECK(cmd_bounds({dir.file("spec.json"), "", "", "json", dir.file("bounds.json")}) ==
          kExitOk);
  }
  Json got = Json::parse(read_text_file(dir.file("bounds.json")));
  CHECK(got == bound_report_to_json(nlr_lower_bound(spec)));

  {
    Capture err(std::cerr);
    CHECK(cmd_bounds({dir.file("spec.json"), "", "", "csv", dir.file("bounds.csv")}) ==
          kExitOk);
  }
  std::string csv = read_text_file(dir.file("bounds.csv"));
  CHECK(csv.rfind("layer,family,n,n_in,r_struct,u,k,factor,log10_factor\n", 0) == 0);
  CHECK(csv == bound_report_to_csv(nlr_lower_bound(spec)));
}

TEST_CASE("bound argument mistakes exit with the config code") {
  TempDir dir;
  Capture err(std::cerr);
  CHECK(cmd_bounds({"", "", "", "json", ""}) == kExitConfig);          // neither source
  CHECK(cmd_bounds({"x.json", "appC", "", "json", ""}) == kExitConfig);  // both sources
  CHECK(cmd_bounds({"", "appC", "", "csv", ""}) == kExitConfig);       // csv needs variant
  CHECK(cmd_bounds({"", "appC", "hex", "json", ""}) == kExitConfig);   // unknown variant
  CHECK(cmd_bounds({"", "appC", "dense", "yaml", ""}) == kExitConfig);  // unknown format
  CHECK(cmd_bounds({dir.file("missing.json"), "", "", "json", ""}) == kExitConfig);
  CHECK(cmd_bounds({"", "vitL-surrogate", "dense", "json", ""}) == kExitConfig);
}

TEST_CASE("the re-index bench agrees bitwise across pattern families") {
  for (PatternKind family : {PatternKind::DiagonalK, PatternKind::BlockB, PatternKind::NM,
                             PatternKind::Unstructured}) {
    BenchReport rep = run_bench_reindex(64, 0.25, family, 3, 17);
    CHECK(rep.bitwise_equal);
    CHECK(rep.ns_structured > 0.0);
    CHECK(rep.ns_explicit > 0.0);
    CHECK(rep.ns_reindexed > 0.0);
  }
  CHECK_THROWS_AS(run_bench_reindex(0, 0.25, PatternKind::DiagonalK, 3, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_bench_reindex(16, 0.25, PatternKind::DiagonalK, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("the bench command reports and persists its measurements") {
  TempDir dir;
  BenchArgs args;
  args.n = 64;
  args.density = 0.25;
  args.family = "diagonal";
  args.repeats = 3;
  args.seed = 5;
  args.out_path = dir.file("bench.json");
  std::string printed;
  {
    Capture out(std::cout);
    Capture err(std::cerr);
    CHECK(cmd_bench_reindex(args) == kExitOk);
    printed = out.text();
  }
  CHECK(printed.find("bitwise equal") != std::string::npos);
  Json j = Json::parse(read_text_file(dir.file("bench.json")));
  CHECK(j.at("n") == 64);
  CHECK(j.at("bitwise_equal") == true);
  CHECK(j.at("ns_reindexed").get<double>() > 0.0);
  Json manifest = Json::parse(read_text_file(dir.file("bench.json") + ".manifest.json"));
  CHECK(manifest.at("command") == "bench-reindex");

  BenchArgs bad = args;
  bad.family = "mosaic";
  Capture err(std::cerr);
  CHECK(cmd_bench_reindex(bad) == kExitConfig);
}

TEST_CASE("permutation inspection renders one row per layer") {
  TempDir dir;
  Json cfg = base_config(3);
  SmallNet net = build_net_from_config(cfg);
  net.layers[1].perm = SoftPermutation::identity_hard(4);
  save_checkpoint(net, dir.file("ckpt.json"));

  std::string csv;
  {
    Capture out(std::cout);
    CHECK(cmd_inspect_perm({dir.file("ckpt.json"), ""}) == kExitOk);
    csv = out.text();
  }
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "layer,hardened,penalty,identity_distance");
  std::getline(lines, line);
  CHECK(line == "0,0," + format_double(perm_penalty(net.layers[0].perm).value) + ",");
  std::getline(lines, line);
  CHECK(line == "1,1,0,1");  // identity: distance score is exactly one

  {
    Capture out(std::cout);
    CHECK(cmd_inspect_perm({dir.file("ckpt.json"), dir.file("perm.csv")}) == kExitOk);
  }
  CHECK(read_text_file(dir.file("perm.csv")) == csv);

  Capture err(std::cerr);
  CHECK(cmd_inspect_perm({dir.file("no_such.json"), ""}) == kExitConfig);
  write_text_file(dir.file("v2.json"), R"({"version": 2, "layers": []})");
  CHECK(cmd_inspect_perm({dir.file("v2.json"), ""}) == kExitConfig);
}
