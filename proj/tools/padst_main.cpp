#include <CLI11.hpp>

#include "padst/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"structured sparse layers with learned permutations"};
  app.require_subcommand(1);

  padst::TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a sparse net from a JSON config");
  train->add_option("--config", train_args.config_path, "JSON config path")->required();
  train->add_option("--out", train_args.out_dir, "output directory")->required();

  padst::BoundsArgs bounds_args;
  CLI::App* bounds = app.add_subcommand("bounds", "linear-region lower bounds for a layer spec");
  bounds->add_option("--spec", bounds_args.spec_path, "network spec JSON path");
  bounds->add_option("--preset", bounds_args.preset, "built-in spec: appC or vitL-surrogate");
  bounds->add_option("--variant", bounds_args.variant, "appC variant: dense, block, block_perm");
  bounds->add_option("--format", bounds_args.format, "json or csv")->default_val("json");
  bounds->add_option("--out", bounds_args.out_path, "output path (stdout when omitted)");

  padst::BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand(
      "bench-reindex", "time gathered inference against an explicit permutation multiply");
  bench->add_option("--n", bench_args.n, "square layer size")->default_val(256);
  bench->add_option("--density", bench_args.density, "active fraction")->default_val(0.05);
  bench->add_option("--family", bench_args.family, "structure family")->default_val("diagonal");
  bench->add_option("--repeats", bench_args.repeats, "timing samples per path")->default_val(31);
  bench->add_option("--seed", bench_args.seed, "rng seed")->default_val(1);
  bench->add_option("--out", bench_args.out_path, "also write a JSON result here");

  padst::InspectArgs inspect_args;
  CLI::App* inspect = app.add_subcommand("inspect-perm", "per-layer permutation state as CSV");
  inspect->add_option("--checkpoint", inspect_args.checkpoint_path, "checkpoint JSON path")
      ->required();
  inspect->add_option("--out", inspect_args.out_path, "output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? padst::kExitOk : padst::kExitConfig;
  }

  if (train->parsed()) return padst::cmd_train(train_args);
  if (bounds->parsed()) return padst::cmd_bounds(bounds_args);
  if (bench->parsed()) return padst::cmd_bench_reindex(bench_args);
  if (inspect->parsed()) return padst::cmd_inspect_perm(inspect_args);
  return padst::kExitConfig;
}
