// looprl: command-line front end.

#include <iostream>

#include <CLI11.hpp>

#include "looprl/cli.hpp"

namespace {

using looprl::BackendKind;

const std::map<std::string, BackendKind> kBackends{{"synthetic", BackendKind::kSynthetic},
                                                    {"measured", BackendKind::kMeasured}};

looprl::RunConfig load_config(const std::string& path) {
  return path.empty() ? looprl::RunConfig{} : looprl::RunConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learning scheduler for affine loop nests"};
  app.require_subcommand(1);

  // datagen
  looprl::cli::DatagenOptions dg;
  auto* datagen = app.add_subcommand("datagen", "Generate random programs and a manifest");
  datagen->add_option("--count", dg.count, "Number of programs")->capture_default_str();
  datagen->add_option("--seed", dg.seed, "First generator seed")->capture_default_str();
  datagen->add_option("--out", dg.out_dir, "Output directory")->capture_default_str();

  // pretrain
  std::string pre_config, pre_programs, pre_memo;
  int pre_epochs = 0, pre_samples = 0;
  bool pre_standardize = false;
  looprl::cli::PretrainOptions pt;
  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the value path on execution times");
  pretrain->add_option("--config", pre_config, "Run configuration (JSON)");
  pretrain->add_option("--programs", pre_programs, "Directory of .loop files (default: generate)");
  pretrain->add_option("--samples", pre_samples, "Generated programs when no directory is given");
  pretrain->add_option("--epochs", pre_epochs, "Training epochs");
  pretrain->add_option("--memo", pre_memo, "Memo file to reuse and update");
  pretrain->add_flag("--standardize", pre_standardize, "Regress standardized log-times instead of seconds");
  pretrain->add_option("--out", pt.out, "Checkpoint to write")->capture_default_str();
  pretrain->add_option("--loss-csv", pt.loss_csv, "Per-epoch loss CSV");

  // train
  std::string tr_config, tr_programs, tr_memo, tr_checkpoints, tr_metrics;
  int tr_iterations = 0;
  std::int64_t tr_seed = -1;
  bool tr_mask = false;
  looprl::cli::TrainOptions to;
  auto* train = app.add_subcommand("train", "Train the agent with PPO");
  train->add_option("--config", tr_config, "Run configuration (JSON)");
  train->add_option("--programs", tr_programs, "Directory of .loop files (default: generate)");
  train->add_option("--iterations", tr_iterations, "PPO iterations (default: cover total_steps)");
  train->add_option("--seed", tr_seed, "Seed");
  train->add_option("--memo", tr_memo, "Memo file to reuse and update");
  train->add_option("--checkpoints", tr_checkpoints, "Checkpoint directory");
  train->add_option("--metrics", tr_metrics, "Metrics CSV (appended)");
  train->add_option("--pretrained", to.pretrained, "Pre-trained checkpoint to transfer from");
  train->add_flag("--mask-structural", tr_mask, "Mask structurally inapplicable actions");
  train->add_flag("--quiet", to.quiet, "Only print the summary");

  // optimize
  looprl::cli::OptimizeOptions op;
  int op_repeats = 30;
  auto* optimize = app.add_subcommand("optimize", "Greedy schedule for one program");
  optimize->add_option("program", op.program, "Program file")->required();
  optimize->add_option("--checkpoint", op.checkpoint, "Agent checkpoint")->required();
  optimize->add_option("--backend", op.backend, "synthetic or measured")->transform(CLI::CheckedTransformer(kBackends));
  optimize->add_option("--repeats", op_repeats, "Measured runs per time (minimum taken)")->capture_default_str();
  optimize->add_option("--workers", op.measurement.workers, "Measurement lanes (0: all cores)");
  optimize->add_flag("--guard", op.guard, "Keep the original program if the schedule is slower");
  optimize->add_flag("--json", op.json, "Print the report as JSON");
  optimize->add_option("--trace", op.trace_out, "Write the episode trace (JSON)");
  optimize->add_option("--memo", op.memo, "Memo file to reuse and update");

  // bench
  looprl::cli::BenchOptions bo;
  int bench_repeats = 30;
  auto* bench = app.add_subcommand("bench", "Speedups on the benchmark kernels");
  bench->add_option("--checkpoint", bo.checkpoint, "Agent checkpoint")->required();
  bench->add_option("--backend", bo.backend, "synthetic or measured")->transform(CLI::CheckedTransformer(kBackends));
  bench->add_option("--repeats", bench_repeats, "Measured runs per time (minimum taken)")->capture_default_str();
  bench->add_option("--workers", bo.measurement.workers, "Measurement lanes (0: all cores)");
  bench->add_option("--size", bo.size, "Problem size n")->capture_default_str();
  bench->add_flag("--guard", bo.guard, "Keep the original program when the schedule is slower");
  bench->add_option("--csv", bo.csv, "Also write the table as CSV");
  bench->add_option("--memo", bo.memo, "Memo file to reuse and update");

  // memo-stats
  std::string memo_path;
  auto* memo_stats = app.add_subcommand("memo-stats", "Summarize a memo file");
  memo_stats->add_option("file", memo_path, "Memo file")->required();

  // replay
  looprl::cli::ReplayOptions rp;
  auto* replay = app.add_subcommand("replay", "Re-run a recorded episode trace and compare");
  replay->add_option("trace", rp.trace, "Trace file")->required();
  replay->add_option("--program", rp.program, "Program file the trace was recorded on")->required();
  replay->add_option("--backend", rp.backend, "synthetic or measured")->transform(CLI::CheckedTransformer(kBackends));

  // config
  std::string cfg_path;
  auto* config = app.add_subcommand("config", "Print the effective configuration");
  config->add_option("file", cfg_path, "Configuration to validate (default: built-in defaults)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*datagen) return looprl::cli::cmd_datagen(dg, std::cout);
    if (*pretrain) {
      pt.config = load_config(pre_config);
      if (!pre_programs.empty()) pt.config.paths.programs = pre_programs;
      if (!pre_memo.empty()) pt.config.paths.memo = pre_memo;
      if (pre_samples > 0) pt.config.pretrain_samples = pre_samples;
      if (pre_epochs > 0) pt.config.pretrain.epochs = pre_epochs;
      if (pre_standardize) pt.config.pretrain.standardize = true;
      return looprl::cli::cmd_pretrain(pt, std::cout);
    }
    if (*train) {
      to.config = load_config(tr_config);
      if (!tr_programs.empty()) to.config.paths.programs = tr_programs;
      if (!tr_memo.empty()) to.config.paths.memo = tr_memo;
      if (!tr_checkpoints.empty()) to.config.paths.checkpoints = tr_checkpoints;
      if (!tr_metrics.empty()) to.config.paths.metrics = tr_metrics;
      if (tr_iterations > 0) to.config.iterations = tr_iterations;
      if (tr_seed >= 0) to.config.seed = static_cast<std::uint64_t>(tr_seed);
      if (tr_mask) to.config.ppo.mask_structural = true;
      return looprl::cli::cmd_train(to, std::cout);
    }
    if (*optimize) {
      op.measurement.repeats = op_repeats;
      return looprl::cli::cmd_optimize(op, std::cout);
    }
    if (*bench) {
      bo.measurement.repeats = bench_repeats;
      return looprl::cli::cmd_bench(bo, std::cout);
    }
    if (*memo_stats) return looprl::cli::cmd_memo_stats(memo_path, std::cout);
    if (*replay) return looprl::cli::cmd_replay(rp, std::cout);
    if (*config) {
      std::cout << load_config(cfg_path).to_json().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
