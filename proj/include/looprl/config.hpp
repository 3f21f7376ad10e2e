#pragma once

// Run configuration read from a JSON file. Every key is optional; unknown keys
// are rejected at every level.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "looprl/agent.hpp"
#include "looprl/pretrain.hpp"

namespace looprl {

struct RunPaths {
  std::string programs;     // directory of .loop files; empty: generate
  std::string memo;         // NDJSON memo file; empty: in-memory only
  std::string checkpoints = "checkpoints";
  std::string metrics = "metrics.csv";
};

struct RunConfig {
  BackendKind backend = BackendKind::kSynthetic;
  int workers = 0;  // measurement lanes; 0: hardware parallelism
  int repeats = 3;  // training-time measurements; optimize and bench default to 30
  std::uint64_t seed = 0;
  int iterations = 0;  // 0: enough iterations to cover ppo.total_steps
  int checkpoint_every = 10;
  int corpus_size = 10;  // generated programs when paths.programs is empty
  int step_cap = 64;
  std::vector<int> tile_sizes{32, 64, 128};
  std::vector<int> unroll_factors{2, 4, 8, 16, 32};
  PpoConfig ppo;
  nn::Readout readout = nn::Readout::kMean;
  PretrainConfig pretrain;
  int pretrain_samples = 2000;
  RunPaths paths;

  int resolved_iterations() const {
    if (iterations > 0) return iterations;
    return static_cast<int>((ppo.total_steps + ppo.batch - 1) / ppo.batch);
  }

  MeasurementConfig measurement() const {
    MeasurementConfig m;
    m.repeats = repeats;
    m.workers = workers;
    return m;
  }

  void validate() const {
    ppo.validate();
    pretrain.validate();
    if (workers < 0) throw Error("workers must be >= 0");
    if (repeats < 1) throw Error("repeats must be >= 1");
    if (iterations < 0) throw Error("iterations must be >= 0");
    if (checkpoint_every < 1) throw Error("checkpoint_every must be >= 1");
    if (corpus_size < 1) throw Error("corpus_size must be >= 1");
    if (step_cap < 1) throw Error("step_cap must be >= 1");
    if (pretrain_samples < 1) throw Error("pretrain_samples must be >= 1");
    ActionCatalogue check(tile_sizes, unroll_factors);
  }

  nlohmann::json to_json() const {
    return {
        {"backend", backend_name(backend)},
        {"workers", workers},
        {"repeats", repeats},
        {"seed", seed},
        {"iterations", iterations},
        {"checkpoint_every", checkpoint_every},
        {"corpus_size", corpus_size},
        {"step_cap", step_cap},
        {"tile_sizes", tile_sizes},
        {"unroll_factors", unroll_factors},
        {"readout", nn::readout_name(readout)},
        {"ppo",
         {{"clip", ppo.clip},
          {"gamma", ppo.gamma},
          {"lambda", ppo.lambda},
          {"value_coef", ppo.value_coef},
          {"entropy_start", ppo.entropy_start},
          {"entropy_end", ppo.entropy_end},
          {"total_steps", ppo.total_steps},
          {"batch", ppo.batch},
          {"epochs", ppo.epochs},
          {"minibatch", ppo.minibatch},
          {"lr", ppo.lr},
          {"adv_eps", ppo.adv_eps},
          {"mask_structural", ppo.mask_structural}}},
        {"pretrain",
         {{"epochs", pretrain.epochs},
          {"lr", pretrain.lr},
          {"standardize", pretrain.standardize},
          {"minibatch", pretrain.minibatch},
          {"samples", pretrain_samples}}},
        {"paths",
         {{"programs", paths.programs},
          {"memo", paths.memo},
          {"checkpoints", paths.checkpoints},
          {"metrics", paths.metrics}}},
    };
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    auto object = [](const nlohmann::json& o, const std::string& where, std::set<std::string> known) {
      if (!o.is_object()) throw Error("config section '" + where + "' must be an object");
      for (const auto& [k, v] : o.items())
        if (!known.count(k)) throw Error("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
    };
    auto get = [](const nlohmann::json& o, const char* key, auto& dst, const std::string& where) {
      if (!o.contains(key)) return;
      try {
        dst = o.at(key).get<std::decay_t<decltype(dst)>>();
      } catch (const nlohmann::json::exception&) {
        throw Error("config key '" + where + key + "' has the wrong type");
      }
    };
    object(j, "", {"backend", "workers", "repeats", "seed", "iterations", "checkpoint_every", "corpus_size", "step_cap",
                   "tile_sizes", "unroll_factors", "readout", "ppo", "pretrain", "paths"});
    if (j.contains("backend")) c.backend = parse_backend(j.at("backend").get<std::string>());
    if (j.contains("readout")) c.readout = nn::parse_readout(j.at("readout").get<std::string>());
    get(j, "workers", c.workers, "");
    get(j, "repeats", c.repeats, "");
    get(j, "seed", c.seed, "");
    get(j, "iterations", c.iterations, "");
    get(j, "checkpoint_every", c.checkpoint_every, "");
    get(j, "corpus_size", c.corpus_size, "");
    get(j, "step_cap", c.step_cap, "");
    get(j, "tile_sizes", c.tile_sizes, "");
    get(j, "unroll_factors", c.unroll_factors, "");
    if (j.contains("ppo")) {
      const auto& p = j.at("ppo");
      object(p, "ppo", {"clip", "gamma", "lambda", "value_coef", "entropy_start", "entropy_end", "total_steps", "batch",
                        "epochs", "minibatch", "lr", "adv_eps", "mask_structural"});
      get(p, "clip", c.ppo.clip, "ppo.");
      get(p, "gamma", c.ppo.gamma, "ppo.");
      get(p, "lambda", c.ppo.lambda, "ppo.");
      get(p, "value_coef", c.ppo.value_coef, "ppo.");
      get(p, "entropy_start", c.ppo.entropy_start, "ppo.");
      get(p, "entropy_end", c.ppo.entropy_end, "ppo.");
      get(p, "total_steps", c.ppo.total_steps, "ppo.");
      get(p, "batch", c.ppo.batch, "ppo.");
      get(p, "epochs", c.ppo.epochs, "ppo.");
      get(p, "minibatch", c.ppo.minibatch, "ppo.");
      get(p, "lr", c.ppo.lr, "ppo.");
      get(p, "adv_eps", c.ppo.adv_eps, "ppo.");
      get(p, "mask_structural", c.ppo.mask_structural, "ppo.");
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      object(p, "pretrain", {"epochs", "lr", "standardize", "minibatch", "samples"});
      get(p, "epochs", c.pretrain.epochs, "pretrain.");
      get(p, "lr", c.pretrain.lr, "pretrain.");
      get(p, "standardize", c.pretrain.standardize, "pretrain.");
      get(p, "minibatch", c.pretrain.minibatch, "pretrain.");
      get(p, "samples", c.pretrain_samples, "pretrain.");
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      object(p, "paths", {"programs", "memo", "checkpoints", "metrics"});
      get(p, "programs", c.paths.programs, "paths.");
      get(p, "memo", c.paths.memo, "paths.");
      get(p, "checkpoints", c.paths.checkpoints, "paths.");
      get(p, "metrics", c.paths.metrics, "paths.");
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("config file '" + path + "': " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace looprl
