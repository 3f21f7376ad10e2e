#pragma once

// Supervised pre-training of the backbone, shared MLP and value head on the
// execution time of unscheduled programs, and transfer of those weights into
// a fresh agent.

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "looprl/env.hpp"
#include "looprl/nn.hpp"

namespace looprl {

struct PretrainSample {
  std::string program_id;
  std::string program_name;
  GraphObservation obs;  // empty schedule, branch 0
  double time_s = 0.0;
};

struct PretrainDataset {
  std::vector<PretrainSample> samples;
  std::size_t skipped = 0;
  std::uint64_t backend_calls = 0;
};

/// One sample per program. Times go through the memo store when one is
/// given, so rebuilding the same dataset measures nothing. A program that
/// fails is skipped and reported through `log`.
inline PretrainDataset build_pretrain_dataset(const std::vector<Program>& programs, Backend& backend, MemoStore* memo,
                                              const std::function<void(const std::string&)>& log = {}) {
  ActionCatalogue catalogue;
  Environment env(catalogue, backend, memo);
  PretrainDataset ds;
  for (const Program& p : programs) {
    try {
      GraphObservation obs = env.reset(p);
      if (!(env.t0() > 0.0)) throw Error("non-positive time");
      ds.samples.push_back({env.context().id(), p.name, std::move(obs), env.t0()});
    } catch (const std::exception& e) {
      ++ds.skipped;
      if (log) log("skipping " + p.name + ": " + e.what());
    }
  }
  ds.backend_calls = env.counters().backend_calls;
  return ds;
}

/// Maps times to training targets: raw seconds by default, standardized
/// log-times when `standardize` is on.
struct TargetScaler {
  bool standardize = true;
  double mean = 0.0;
  double sd = 1.0;

  static TargetScaler fit(const std::vector<PretrainSample>& s, bool standardize) {
    TargetScaler t;
    t.standardize = standardize;
    if (!standardize || s.empty()) return t;
    double m = 0.0;
    for (const auto& x : s) m += std::log(x.time_s);
    m /= static_cast<double>(s.size());
    double v = 0.0;
    for (const auto& x : s) v += (std::log(x.time_s) - m) * (std::log(x.time_s) - m);
    v /= static_cast<double>(s.size());
    t.mean = m;
    t.sd = v > 0.0 ? std::sqrt(v) : 1.0;
    return t;
  }

  double target(double seconds) const { return standardize ? (std::log(seconds) - mean) / sd : seconds; }
  double seconds(double y) const { return standardize ? std::exp(y * sd + mean) : y; }

  nlohmann::json to_json() const { return {{"standardize", standardize}, {"mean", mean}, {"sd", sd}}; }
  static TargetScaler from_json(const nlohmann::json& j) {
    return {j.at("standardize").get<bool>(), j.at("mean").get<double>(), j.at("sd").get<double>()};
  }
};

struct PretrainConfig {
  int epochs = 1500;
  double lr = 1e-4;
  bool standardize = false;
  int minibatch = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw Error("pretraining needs at least one epoch");
    if (!(lr > 0.0)) throw Error("pretraining learning rate must be positive");
    if (minibatch < 1) throw Error("pretraining minibatch must be positive");
  }
};

struct PretrainResult {
  std::vector<double> loss_curve;  // mean minibatch MSE per epoch
  double initial_loss = 0.0;       // full-dataset MSE before training
  double final_loss = 0.0;         // full-dataset MSE after training
  TargetScaler scaler;
};

inline const std::vector<nn::Component>& transferable_components() {
  static const std::vector<nn::Component> c{nn::Component::kBackbone, nn::Component::kShared, nn::Component::kValue};
  return c;
}

template <class T>
double value_mse(const nn::ActorCritic<T>& net, const std::vector<PretrainSample>& s, const TargetScaler& scaler) {
  double total = 0.0;
  for (std::size_t start = 0; start < s.size(); start += 256) {
    const std::size_t end = std::min(s.size(), start + 256);
    std::vector<const GraphObservation*> obs;
    for (std::size_t k = start; k < end; ++k) obs.push_back(&s[k].obs);
    const auto out = net.forward(nn::make_batch<T>(obs));
    for (std::size_t k = start; k < end; ++k) {
      const double e = static_cast<double>(out.value(static_cast<Eigen::Index>(k - start), 0)) - scaler.target(s[k].time_s);
      total += e * e;
    }
  }
  return s.empty() ? 0.0 : total / static_cast<double>(s.size());
}

/// Trains the value output by MSE. The policy head is never updated.
/// `on_epoch(epoch, loss)` is called after every epoch.
template <class T>
PretrainResult pretrain(nn::ActorCritic<T>& net, const std::vector<PretrainSample>& samples, const PretrainConfig& cfg,
                        const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  if (samples.empty()) throw Error("pretraining dataset is empty");
  PretrainResult res;
  res.scaler = TargetScaler::fit(samples, cfg.standardize);
  res.initial_loss = value_mse(net, samples, res.scaler);
  nn::Adam<T> opt(cfg.lr);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const nn::Mat<T> no_logits;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t k = order.size(); k-- > 1;)
      std::swap(order[k], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k)))]);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch));
      const int B = static_cast<int>(end - start);
      std::vector<const GraphObservation*> obs;
      for (std::size_t k = start; k < end; ++k) obs.push_back(&samples[order[k]].obs);
      const auto gb = nn::make_batch<T>(obs);
      nn::ForwardCache<T> cache;
      const auto out = net.forward(gb, &cache);
      nn::Mat<T> dvalue(B, 1);
      double loss = 0.0;
      for (int r = 0; r < B; ++r) {
        const double e = static_cast<double>(out.value(r, 0)) - res.scaler.target(samples[order[start + static_cast<std::size_t>(r)]].time_s);
        loss += e * e;
        dvalue(r, 0) = static_cast<T>(2.0 * e / B);
      }
      loss /= B;
      if (!std::isfinite(loss)) throw Error("non-finite pretraining loss at epoch " + std::to_string(epoch));
      net.zero_grad();
      net.backward(gb, cache, no_logits, dvalue);
      opt.step(net.tensors(), transferable_components());
      sum += loss;
      ++batches;
    }
    res.loss_curve.push_back(sum / batches);
    if (on_epoch) on_epoch(epoch, res.loss_curve.back());
  }
  res.final_loss = value_mse(net, samples, res.scaler);
  return res;
}

struct TransferReport {
  std::vector<std::string> copied;  // tensor names
  int probes = 0;
  bool bitwise_equal = false;
};

/// Copies the backbone, shared MLP and value head of `pretrained` into
/// `agent`, keeping the agent's own policy head, then checks that the value
/// outputs agree bit for bit on `probes`.
template <class T>
TransferReport transfer_weights(const nn::ActorCritic<T>& pretrained, nn::ActorCritic<T>& agent,
                                const std::vector<GraphObservation>& probes) {
  if (!(pretrained.config() == agent.config()) || pretrained.layout_hash() != agent.layout_hash())
    throw Error("pretrained network layout does not match the agent");
  agent.copy_components(pretrained, transferable_components());
  TransferReport rep;
  for (const auto& t : agent.tensors())
    if (t.component != nn::Component::kPolicy) rep.copied.push_back(t.name);
  rep.probes = static_cast<int>(probes.size());
  rep.bitwise_equal = true;
  for (const auto& g : probes) {
    const auto b = nn::make_batch<T>(g);
    const T a = pretrained.forward(b).value(0, 0);
    const T c = agent.forward(b).value(0, 0);
    if (std::memcmp(&a, &c, sizeof(T)) != 0) rep.bitwise_equal = false;
  }
  if (!rep.bitwise_equal) throw Error("transferred value head disagrees with the pretrained network on a probe graph");
  return rep;
}

/// Checkpoint metadata for a pretrained network: the transferable tensors
/// and the target scaling.
template <class T>
nlohmann::json pretrained_manifest(const nn::ActorCritic<T>& net, const PretrainResult& r, const PretrainConfig& cfg) {
  nlohmann::json j;
  j["kind"] = "pretrained";
  j["transferable"] = nlohmann::json::array();
  for (const auto& t : net.tensors())
    if (t.component != nn::Component::kPolicy) j["transferable"].push_back(t.name);
  j["scaler"] = r.scaler.to_json();
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.lr;
  j["initial_loss"] = r.initial_loss;
  j["final_loss"] = r.final_loss;
  return j;
}

}  // namespace looprl
