#pragma once

// Command implementations behind the looprl executable. Each command writes
// its report to an output stream and throws looprl::Error on bad input.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "looprl/agent.hpp"
#include "looprl/config.hpp"
#include "looprl/dsl.hpp"
#include "looprl/pretrain.hpp"
#include "looprl/workloads.hpp"

namespace looprl::cli {

namespace fs = std::filesystem;

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline Program load_program(const std::string& path) {
  try {
    return parse_program(read_text(path));
  } catch (const ParseError& e) {
    throw Error(path + ":" + e.what());
  }
}

/// All .loop files of a directory, sorted by file name.
inline std::vector<Program> load_program_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("'" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".loop") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Program> out;
  for (const auto& f : files) out.push_back(load_program(f.string()));
  if (out.empty()) throw Error("no .loop files in '" + dir + "'");
  return out;
}

inline std::vector<Program> generated_corpus(int count, std::uint64_t first_seed) {
  std::vector<Program> out;
  for (int k = 0; k < count; ++k) {
    GeneratorConfig g;
    g.seed = first_seed + static_cast<std::uint64_t>(k);
    out.push_back(generate_random_program(g));
  }
  return out;
}

inline std::vector<Program> corpus_for(const RunConfig& cfg, int count, std::uint64_t first_seed) {
  return cfg.paths.programs.empty() ? generated_corpus(count, first_seed) : load_program_dir(cfg.paths.programs);
}

/// Loads the memo file named by the config if it exists.
inline void load_memo(MemoStore& memo, const std::string& path, std::ostream& out) {
  if (path.empty() || !fs::exists(path)) return;
  const MemoLoadReport r = memo.load(path);
  out << "memo: loaded " << r.records << " records from " << path << "\n";
  if (r.foreign_host > 0)
    out << "warning: " << r.foreign_host << " measured records come from another host\n";
}

inline std::vector<GraphObservation> probe_graphs(const std::vector<Program>& corpus, int n = 10) {
  std::vector<GraphObservation> probes;
  for (const auto& p : corpus) {
    if (static_cast<int>(probes.size()) >= n) break;
    probes.push_back(featurize(p));
  }
  for (std::uint64_t s = 900000; static_cast<int>(probes.size()) < n; ++s) {
    GeneratorConfig g;
    g.seed = s;
    probes.push_back(featurize(generate_random_program(g)));
  }
  return probes;
}

// ---------------------------------------------------------------- datagen

struct DatagenOptions {
  int count = 100;
  std::uint64_t seed = 0;
  std::string out_dir = "programs";
};

inline int cmd_datagen(const DatagenOptions& o, std::ostream& out) {
  if (o.count < 1) throw Error("--count must be positive");
  fs::create_directories(o.out_dir);
  nlohmann::json manifest;
  manifest["count"] = o.count;
  manifest["first_seed"] = o.seed;
  manifest["programs"] = nlohmann::json::array();
  for (int k = 0; k < o.count; ++k) {
    GeneratorConfig g;
    g.seed = o.seed + static_cast<std::uint64_t>(k);
    const Program p = generate_random_program(g);
    const std::string file = p.name + ".loop";
    write_text((fs::path(o.out_dir) / file).string(), serialize_program(p));
    manifest["programs"].push_back({{"file", file}, {"id", program_id(p)}, {"seed", g.seed}});
  }
  write_text((fs::path(o.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  out << "wrote " << o.count << " programs and manifest.json to " << o.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain

struct PretrainOptions {
  RunConfig config;
  std::string out = "pretrained.ckpt";
  std::string loss_csv;
};

inline int cmd_pretrain(const PretrainOptions& o, std::ostream& out) {
  const RunConfig& cfg = o.config;
  cfg.validate();
  const auto programs = corpus_for(cfg, cfg.pretrain_samples, cfg.seed + 1000000);
  auto backend = make_backend(cfg.backend, cfg.measurement());
  MemoStore memo;
  load_memo(memo, cfg.paths.memo, out);
  const PretrainDataset ds =
      build_pretrain_dataset(programs, *backend, &memo, [&](const std::string& s) { out << "warning: " << s << "\n"; });
  out << "dataset: " << ds.samples.size() << " samples, " << ds.skipped << " skipped, " << ds.backend_calls
      << " backend calls\n";
  nn::NetConfig ncfg;
  ncfg.readout = cfg.readout;
  nn::ActorCritic<float> net(ncfg, cfg.seed);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.seed;
  std::ofstream csv;
  if (!o.loss_csv.empty()) {
    const fs::path p(o.loss_csv);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    csv.open(o.loss_csv, std::ios::trunc);
    if (!csv) throw Error("cannot write '" + o.loss_csv + "'");
    csv << "epoch,loss\n";
  }
  const int every = std::max(1, pc.epochs / 10);
  const PretrainResult r = pretrain(net, ds.samples, pc, [&](int epoch, double loss) {
    if (csv.is_open()) csv << epoch << "," << std::setprecision(10) << loss << "\n";
    if (epoch % every == 0 || epoch == pc.epochs) out << "epoch " << epoch << " loss " << loss << "\n";
  });
  const fs::path p(o.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  nn::save_checkpoint(o.out, net, pretrained_manifest(net, r, pc));
  if (!cfg.paths.memo.empty()) memo.save(cfg.paths.memo);
  out << "initial loss " << r.initial_loss << ", final loss " << r.final_loss << "\n";
  out << "saved " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  RunConfig config;
  std::string pretrained;  // checkpoint to transfer from
  bool quiet = false;
};

struct TrainSummary {
  int iterations = 0;
  std::vector<IterationStats> history;
  std::string last_checkpoint;
};

inline TrainSummary run_training(const TrainOptions& o, std::ostream& out) {
  const RunConfig& cfg = o.config;
  cfg.validate();
  const auto programs = corpus_for(cfg, cfg.corpus_size, cfg.seed);
  std::vector<std::shared_ptr<const ProgramContext>> corpus;
  for (const auto& p : programs) corpus.push_back(std::make_shared<const ProgramContext>(p));
  const ActionCatalogue catalogue(cfg.tile_sizes, cfg.unroll_factors);
  auto backend = make_backend(cfg.backend, cfg.measurement());
  MemoStore memo;
  load_memo(memo, cfg.paths.memo, out);
  nn::NetConfig ncfg;
  ncfg.readout = cfg.readout;
  Trainer trainer(cfg.ppo, catalogue, *backend, &memo, EnvConfig{cfg.step_cap}, corpus, cfg.seed, ncfg);
  if (!o.pretrained.empty()) {
    const auto loaded = nn::load_checkpoint<float>(o.pretrained);
    const TransferReport rep = transfer_weights(loaded.net, trainer.net(), probe_graphs(programs));
    out << "transferred " << rep.copied.size() << " tensors from " << o.pretrained << " (" << rep.probes
        << " probes bitwise equal)\n";
  }
  fs::create_directories(cfg.paths.checkpoints);
  const bool fresh = !fs::exists(cfg.paths.metrics) || fs::file_size(cfg.paths.metrics) == 0;
  {
    const fs::path mp(cfg.paths.metrics);
    if (mp.has_parent_path()) fs::create_directories(mp.parent_path());
  }
  std::ofstream metrics(cfg.paths.metrics, std::ios::app);
  if (!metrics) throw Error("cannot write metrics file '" + cfg.paths.metrics + "'");
  if (fresh) metrics << kMetricsHeader << "\n";
  TrainSummary summary;
  const int iterations = cfg.resolved_iterations();
  auto checkpoint = [&](int it) {
    const nlohmann::json meta{{"kind", "agent"},
                              {"iteration", it},
                              {"env_steps", trainer.env_steps()},
                              {"config", cfg.to_json()}};
    char name[32];
    std::snprintf(name, sizeof(name), "iter_%05d.ckpt", it);
    summary.last_checkpoint = (fs::path(cfg.paths.checkpoints) / name).string();
    nn::save_checkpoint(summary.last_checkpoint, trainer.net(), meta);
    nn::save_checkpoint((fs::path(cfg.paths.checkpoints) / "latest.ckpt").string(), trainer.net(), meta);
    if (!cfg.paths.memo.empty()) memo.save(cfg.paths.memo);
  };
  for (int it = 1; it <= iterations; ++it) {
    const IterationStats s = trainer.iterate();
    metrics << metrics_row(s) << "\n" << std::flush;
    summary.history.push_back(s);
    if (!o.quiet)
      out << "iter " << s.iteration << " return " << std::setprecision(4) << s.mean_return << " entropy_coef "
          << s.entropy_coef << " memo_hits " << s.memo_hits << " wall " << s.wall_time_s << "s\n";
    if (it % cfg.checkpoint_every == 0 || it == iterations) checkpoint(it);
  }
  summary.iterations = iterations;
  out << "trained " << iterations << " iterations, " << trainer.env_steps() << " steps; checkpoint "
      << summary.last_checkpoint << "\n";
  return summary;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  run_training(o, out);
  return 0;
}

// ---------------------------------------------------------------- optimize

struct OptimizeOptions {
  std::string program;
  std::string checkpoint;
  BackendKind backend = BackendKind::kSynthetic;
  MeasurementConfig measurement;
  bool guard = false;
  bool json = false;
  std::string trace_out;
  std::string memo;
};

struct OptimizeReport {
  InferenceResult result;
  std::string program_id;
  std::string schedule_key;  // final schedule, after the guard
  bool guarded = false;      // identity kept because the schedule was slower
  double model_t0 = 0.0;     // cost-model estimates
  double model_final = 0.0;

  double speedup() const { return guarded ? 1.0 : result.t0 / result.t_final; }
};

inline OptimizeReport optimize_program(const nn::ActorCritic<float>& net, const Program& p, Backend& backend,
                                       MemoStore* memo, bool guard) {
  const ActionCatalogue catalogue;
  Environment env(catalogue, backend, memo);
  auto ctx = std::make_shared<const ProgramContext>(p);
  OptimizeReport r;
  r.result = greedy_schedule(net, env, ctx);
  r.program_id = ctx->id();
  r.guarded = guard && r.result.t_final > r.result.t0;
  r.schedule_key = r.guarded ? std::string(kEmptyScheduleKey) : canonical_key(r.result.action_schedule);
  SyntheticBackend model;
  r.model_t0 = model.seconds(identity_schedule(p));
  r.model_final = r.guarded ? r.model_t0 : model.seconds(apply_schedule(p, r.result.schedule));
  return r;
}

inline nlohmann::json report_json(const OptimizeReport& r, BackendKind backend) {
  nlohmann::json j;
  j["program_id"] = r.program_id;
  j["schedule_key"] = r.schedule_key;
  j["resolved_schedule"] = r.guarded ? std::string(kEmptyScheduleKey) : canonical_key(r.result.schedule);
  j["guarded"] = r.guarded;
  j["backend"] = backend_name(backend);
  j["t0"] = r.result.t0;
  j["t_final"] = r.guarded ? r.result.t0 : r.result.t_final;
  j["speedup"] = r.speedup();
  j["predicted_t0"] = r.model_t0;
  j["predicted_t_final"] = r.model_final;
  j["policy_ms"] = r.result.policy_seconds * 1e3;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : r.result.steps)
    j["steps"].push_back({{"action", s.action},
                          {"label", s.label},
                          {"branch", s.branch},
                          {"legal", s.legal},
                          {"structural", s.structural},
                          {"reward", s.reward},
                          {"time", s.time_after}});
  return j;
}

inline int cmd_optimize(const OptimizeOptions& o, std::ostream& out) {
  const Program p = load_program(o.program);
  const auto ck = nn::load_checkpoint<float>(o.checkpoint);
  auto backend = make_backend(o.backend, o.measurement);
  MemoStore memo;
  load_memo(memo, o.memo, out);
  const OptimizeReport r = optimize_program(ck.net, p, *backend, &memo, o.guard);
  if (!o.memo.empty()) memo.save(o.memo);
  if (!o.trace_out.empty()) {
    EpisodeTrace t;
    t.program_id = r.program_id;
    t.program_name = p.name;
    t.backend = backend_name(o.backend);
    t.t0 = r.result.t0;
    t.t_final = r.result.t_final;
    t.steps = r.result.steps;
    write_text(o.trace_out, t.to_json().dump(2) + "\n");
  }
  if (o.json) {
    out << report_json(r, o.backend).dump(2) << "\n";
    return 0;
  }
  const bool measured = o.backend == BackendKind::kMeasured;
  out << "program   " << p.name << " (" << r.program_id << ")\n";
  out << "schedule  " << r.schedule_key << "\n";
  if (!r.guarded) out << "resolved  " << canonical_key(r.result.schedule) << "\n";
  out << "\n step  branch  action            verdict      reward     time_s\n";
  int k = 0;
  for (const auto& s : r.result.steps) {
    const char* verdict = s.structural ? "structural" : (s.legal ? "legal" : "illegal");
    char line[160];
    std::snprintf(line, sizeof(line), " %4d  %6d  %-16s  %-10s  %8.4f  %.6g\n", ++k, s.branch, s.label.c_str(), verdict,
                  s.reward, s.time_after);
    out << line;
  }
  out << "\n";
  out << (measured ? "measured " : "modelled ") << "time " << r.result.t0 << " s -> "
      << (r.guarded ? r.result.t0 : r.result.t_final) << " s, speedup " << r.speedup() << "x\n";
  if (measured) out << "predicted time " << r.model_t0 << " s -> " << r.model_final << " s\n";
  if (r.guarded) out << "guard: schedule was slower than the original, identity kept\n";
  out << "policy time " << std::setprecision(3) << r.result.policy_seconds * 1e3 << " ms\n";
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
  std::string checkpoint;
  BackendKind backend = BackendKind::kMeasured;
  MeasurementConfig measurement;  // min of 30 runs by default
  std::int64_t size = 128;
  bool guard = false;
  std::string csv;
  std::string memo;
};

struct BenchRow {
  std::string name;
  double speedup = 1.0;
  std::string schedule;
  double policy_ms = 0.0;
};

inline double geometric_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::log(x);
  return std::exp(s / static_cast<double>(v.size()));
}

inline std::vector<BenchRow> run_bench(const BenchOptions& o, std::ostream& out) {
  const auto ck = nn::load_checkpoint<float>(o.checkpoint);
  auto backend = make_backend(o.backend, o.measurement);
  MemoStore memo;
  load_memo(memo, o.memo, out);
  std::vector<BenchRow> rows;
  for (const auto& [name, p] : benchmark_suite(BenchmarkSizes{o.size})) {
    const OptimizeReport r = optimize_program(ck.net, p, *backend, &memo, o.guard);
    rows.push_back({name, r.speedup(), r.schedule_key, r.result.policy_seconds * 1e3});
  }
  if (!o.memo.empty()) memo.save(o.memo);
  return rows;
}

inline int cmd_bench(const BenchOptions& o, std::ostream& out) {
  const auto rows = run_bench(o, out);
  std::vector<double> speedups;
  for (const auto& r : rows) speedups.push_back(r.speedup);
  const double gm = geometric_mean(speedups);
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s  %8s  %9s  %s\n", "benchmark", "speedup", "policy_ms", "schedule");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-10s  %8.3f  %9.2f  %s\n", r.name.c_str(), r.speedup, r.policy_ms, r.schedule.c_str());
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-10s  %8.3f\n", "geo mean", gm);
  out << line;
  if (!o.csv.empty()) {
    std::ostringstream csv;
    csv << "benchmark,speedup,schedule\n";
    csv << std::setprecision(10);
    for (const auto& r : rows) csv << r.name << "," << r.speedup << ",\"" << r.schedule << "\"\n";
    csv << "geo mean," << gm << ",\n";
    write_text(o.csv, csv.str());
  }
  return 0;
}

// ---------------------------------------------------------------- memo-stats

inline int cmd_memo_stats(const std::string& path, std::ostream& out) {
  MemoStore memo;
  const MemoLoadReport rep = memo.load(path);
  std::map<std::string, std::size_t> legal, illegal;
  std::set<std::string> programs;
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto [k, r] = MemoStore::from_json(nlohmann::json::parse(line));
    programs.insert(k.program_id);
    (r.legal ? legal : illegal)[backend_name(k.backend)]++;
  }
  out << "records        " << memo.size() << "\n";
  out << "programs       " << programs.size() << "\n";
  for (const char* b : {"synthetic", "measured"}) {
    if (!legal.count(b) && !illegal.count(b)) continue;
    out << b << std::string(15 - std::strlen(b), ' ') << legal[b] << " legal, " << illegal[b] << " illegal\n";
  }
  out << "foreign host   " << rep.foreign_host << "\n";
  return 0;
}

// ---------------------------------------------------------------- replay

struct ReplayOptions {
  std::string trace;
  std::string program;
  BackendKind backend = BackendKind::kSynthetic;
  MeasurementConfig measurement;
  double tolerance = 1e-9;
};

/// Re-runs a recorded trace. Legality must match exactly; rewards must match
/// within the tolerance on the synthetic backend. Returns 0 when everything
/// matches and 2 otherwise.
inline int cmd_replay(const ReplayOptions& o, std::ostream& out) {
  const EpisodeTrace trace = EpisodeTrace::from_json(nlohmann::json::parse(read_text(o.trace)));
  const Program p = load_program(o.program);
  if (program_id(p) != trace.program_id)
    throw Error("trace was recorded for program " + trace.program_id + ", not " + program_id(p));
  const ActionCatalogue catalogue;
  auto backend = make_backend(o.backend, o.measurement);
  Environment env(catalogue, *backend);
  env.reset(p);
  int mismatches = 0;
  const bool compare_rewards = o.backend == BackendKind::kSynthetic && trace.backend == "synthetic";
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const EpisodeStep& rec = trace.steps[k];
    if (env.done()) {
      out << "step " << k + 1 << ": episode ended early\n";
      ++mismatches;
      break;
    }
    const StepResult r = env.step(rec.action);
    const bool legal_ok = r.info.legal == rec.legal && r.info.structural == rec.structural;
    const bool reward_ok = !compare_rewards || std::abs(r.reward - rec.reward) <= o.tolerance;
    if (!legal_ok || !reward_ok) {
      ++mismatches;
      out << "step " << k + 1 << " " << rec.label << ": recorded legal=" << rec.legal << " reward=" << rec.reward
          << ", replayed legal=" << r.info.legal << " reward=" << r.reward << "\n";
    }
  }
  out << "replayed " << trace.steps.size() << " steps, " << mismatches << " mismatches, return "
      << env.trace().total_reward() << " (recorded " << trace.total_reward() << ")\n";
  return mismatches == 0 ? 0 : 2;
}

}  // namespace looprl::cli
