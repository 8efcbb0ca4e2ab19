#pragma once

#include <cstdint>
#include <string>

#include "padst/io.hpp"
#include "padst/synth.hpp"

namespace padst {

// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;

// PADST_THREADS, clamped to [1, 64]; 1 when unset or unparsable.
int env_thread_cap();

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
};

struct BoundsArgs {
  std::string spec_path;  // exclusive with preset
  std::string preset;     // "appC" or "vitL-surrogate"
  std::string variant;    // appC: "dense", "block", "block_perm"; empty = all
  std::string format = "json";
  std::string out_path;   // empty = stdout
};

struct BenchArgs {
  int n = 256;
  double density = 0.05;
  std::string family = "diagonal";
  int repeats = 31;
  std::uint64_t seed = 1;
  std::string out_path;  // empty = stdout only
};

struct InspectArgs {
  std::string checkpoint_path;
  std::string out_path;  // empty = stdout
};

int cmd_train(const TrainArgs& args);
int cmd_bounds(const BoundsArgs& args);
int cmd_bench_reindex(const BenchArgs& args);
int cmd_inspect_perm(const InspectArgs& args);

// Pieces the commands are built from, exposed for direct use in tests.

Dataset dataset_from_config(const Json& dataset_cfg, std::uint64_t seed);
SmallNet build_net_from_config(const Json& config);
TrainConfig train_config_from_json(const Json& config);

// appC: d0=4, three width-8 layers (variant picks the family); empty variant
// is only meaningful to cmd_bounds, which emits all three.
NetworkSpec preset_spec(const std::string& preset, const std::string& variant);

struct BenchReport {
  int n = 0;
  double density = 0.0;
  std::string family;
  int repeats = 0;
  bool bitwise_equal = false;
  double ns_structured = 0.0;  // median per matvec, no permutation
  double ns_explicit = 0.0;    // dense permutation multiply, then matvec
  double ns_reindexed = 0.0;   // gathered matvec through the index map
};

// Refuses timings (bitwise_equal=false, zero times) if the two permuted
// paths ever disagree bitwise.
BenchReport run_bench_reindex(int n, double density, PatternKind family, int repeats,
                              std::uint64_t seed);

}  // namespace padst
