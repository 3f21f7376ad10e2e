#pragma once

// Actor-critic action selection, generalized advantage estimation and the
// clipped PPO update, plus the training loop over an environment and greedy
// inference.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "looprl/env.hpp"
#include "looprl/nn.hpp"

namespace looprl {

struct PpoConfig {
  double clip = 0.3;
  double gamma = 0.99;
  double lambda = 0.95;
  double value_coef = 2.0;
  double entropy_start = 0.1;
  double entropy_end = 0.0;
  std::int64_t total_steps = 200000;  // horizon of the entropy decay
  int batch = 512;
  int epochs = 5;
  int minibatch = 64;
  double lr = 1e-4;
  double adv_eps = 1e-8;
  bool mask_structural = false;

  void validate() const {
    auto in_open01 = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_open01(clip)) throw Error("ppo clip must lie in (0,1)");
    if (!in_open01(gamma)) throw Error("ppo gamma must lie in (0,1)");
    if (!in_open01(lambda)) throw Error("ppo lambda must lie in (0,1)");
    if (value_coef < 0.0) throw Error("value coefficient must be non-negative");
    if (entropy_start < 0.0 || entropy_end < 0.0 || entropy_end > entropy_start)
      throw Error("entropy schedule must be non-negative and non-increasing");
    if (total_steps < 1) throw Error("total_steps must be positive");
    if (batch < 1 || minibatch < 1 || minibatch > batch) throw Error("need 1 <= minibatch <= batch");
    if (epochs < 1) throw Error("epochs must be positive");
    if (!(lr > 0.0)) throw Error("learning rate must be positive");
    if (!(adv_eps > 0.0)) throw Error("advantage epsilon must be positive");
  }
};

/// Linear decay from entropy_start to entropy_end over total_steps.
inline double entropy_coefficient(const PpoConfig& cfg, std::int64_t steps_done) {
  const double frac = std::clamp(static_cast<double>(steps_done) / static_cast<double>(cfg.total_steps), 0.0, 1.0);
  return cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * frac;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t and
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}. V_n is `bootstrap`, the
/// value of the state after a rollout cut mid-episode.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<bool>& dones, double gamma, double lambda, double bootstrap = 0.0) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw Error("GAE inputs have different lengths");
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[k] = next_adv;
    r.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return r;
}

/// Per-sample clipped surrogate min(rho A, clip(rho, 1-eps, 1+eps) A).
inline double clipped_objective(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

/// Softmax in double precision; masked-out entries get probability 0.
template <class Row>
std::vector<double> softmax(const Row& logits, const std::vector<char>* mask = nullptr) {
  const int n = static_cast<int>(logits.size());
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k)
    if (!mask || (*mask)[static_cast<std::size_t>(k)]) mx = std::max(mx, static_cast<double>(logits(k)));
  if (!std::isfinite(mx)) throw Error("softmax over no admissible action or non-finite logits");
  double z = 0.0;
  for (int k = 0; k < n; ++k) {
    if (mask && !(*mask)[static_cast<std::size_t>(k)]) continue;
    p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(logits(k)) - mx);
    z += p[static_cast<std::size_t>(k)];
  }
  for (double& v : p) v /= z;
  return p;
}

enum class SelectMode { kSample, kGreedy };

struct ActionChoice {
  int action = 0;
  double logp = 0.0;
  double value = 0.0;
};

/// Greedy ties go to the lowest action id. `allowed` (optional) restricts
/// the candidates.
inline int greedy_argmax(const std::vector<double>& p, const std::vector<char>* allowed = nullptr) {
  int best = -1;
  for (int k = 0; k < static_cast<int>(p.size()); ++k) {
    if (allowed && !(*allowed)[static_cast<std::size_t>(k)]) continue;
    if (best < 0 || p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(best)]) best = k;
  }
  if (best < 0) throw Error("no admissible action");
  return best;
}

inline int sample_index(const std::vector<double>& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (int k = 0; k < static_cast<int>(p.size()); ++k) {
    if (p[static_cast<std::size_t>(k)] <= 0.0) continue;
    acc += p[static_cast<std::size_t>(k)];
    last = k;
    if (u < acc) return k;
  }
  return last;
}

template <class T>
ActionChoice select_action(const nn::ActorCritic<T>& net, const GraphObservation& obs, SelectMode mode, Rng& rng,
                           const std::vector<char>* mask = nullptr) {
  const auto out = net.forward(nn::make_batch<T>(obs));
  const auto p = softmax(out.logits.row(0), mask);
  ActionChoice c;
  c.action = mode == SelectMode::kGreedy ? greedy_argmax(p, mask) : sample_index(p, rng);
  c.logp = std::log(p[static_cast<std::size_t>(c.action)]);
  c.value = static_cast<double>(out.value(0, 0));
  return c;
}

/// Actions whose application to the current branch fails structurally are
/// masked out (0); Next is always admissible.
inline std::vector<char> structural_mask(const Environment& env) {
  const ActionCatalogue& cat = env.catalogue();
  std::vector<char> mask(static_cast<std::size_t>(cat.size()), 1);
  for (int a = 0; a < cat.size(); ++a) {
    if (cat[a].next) continue;
    Transformation t = cat[a].t;
    if (t.kind == TransformKind::kSkewing) t.factor = 1;
    ScheduledProgram copy = env.scheduled();
    try {
      apply_transformation(copy, env.branch(), t);
    } catch (const StructuralError&) {
      mask[static_cast<std::size_t>(a)] = 0;
    }
  }
  return mask;
}

struct Transition {
  GraphObservation obs;
  int action = 0;
  double logp = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  std::vector<char> mask;  // empty when masking is off
};

struct UpdateReport {
  double policy_loss = 0.0;  // -L_clip
  double value_loss = 0.0;   // MSE
  double entropy = 0.0;
  double total_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
};

/// Runs cfg.epochs passes of shuffled minibatches over `batch`, using
/// `advantages` and `returns` aligned with it.
template <class T>
UpdateReport ppo_update(nn::ActorCritic<T>& net, nn::Adam<T>& opt, const std::vector<Transition>& batch,
                        const std::vector<double>& advantages, const std::vector<double>& returns,
                        const PpoConfig& cfg, double entropy_coef, Rng& rng) {
  const std::size_t n = batch.size();
  if (advantages.size() != n || returns.size() != n) throw Error("ppo_update inputs have different lengths");
  if (n == 0) return {};
  const int A = net.config().actions;
  UpdateReport rep;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = n - 1; k > 0; --k) std::swap(order[k], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k)))]);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.minibatch));
      const int B = static_cast<int>(end - start);
      std::vector<const GraphObservation*> obs;
      obs.reserve(static_cast<std::size_t>(B));
      for (std::size_t k = start; k < end; ++k) obs.push_back(&batch[order[k]].obs);
      const auto gb = nn::make_batch<T>(obs);
      nn::ForwardCache<T> cache;
      const auto out = net.forward(gb, &cache);

      double mean = 0.0;
      for (std::size_t k = start; k < end; ++k) mean += advantages[order[k]];
      mean /= B;
      double var = 0.0;
      for (std::size_t k = start; k < end; ++k) var += (advantages[order[k]] - mean) * (advantages[order[k]] - mean);
      const double sd = std::sqrt(var / B);

      nn::Mat<T> dlogits = nn::Mat<T>::Zero(B, A);
      nn::Mat<T> dvalue = nn::Mat<T>::Zero(B, 1);
      double pl = 0.0, vl = 0.0, ent = 0.0, kl = 0.0;
      int clipped = 0;
      for (int r = 0; r < B; ++r) {
        const Transition& tr = batch[order[start + static_cast<std::size_t>(r)]];
        const std::vector<char>* mask = tr.mask.empty() ? nullptr : &tr.mask;
        const auto p = softmax(out.logits.row(r), mask);
        const double adv = (advantages[order[start + static_cast<std::size_t>(r)]] - mean) / (sd + cfg.adv_eps);
        const double logp = std::log(p[static_cast<std::size_t>(tr.action)]);
        const double ratio = std::exp(logp - tr.logp);
        const double surrogate = clipped_objective(ratio, adv, cfg.clip);
        const bool inside = ratio >= 1.0 - cfg.clip && ratio <= 1.0 + cfg.clip;
        const bool active = inside || ratio * adv <= surrogate;
        if (!inside) ++clipped;
        pl -= surrogate;
        kl += tr.logp - logp;
        double H = 0.0;
        for (double q : p)
          if (q > 0.0) H -= q * std::log(q);
        ent += H;
        // d(-surrogate)/d logp = -rho A while the unclipped branch is active.
        const double g_logp = active ? -ratio * adv / B : 0.0;
        for (int a = 0; a < A; ++a) {
          const double q = p[static_cast<std::size_t>(a)];
          double g = g_logp * ((a == tr.action ? 1.0 : 0.0) - q);
          if (q > 0.0) g += entropy_coef * q * (std::log(q) + H) / B;
          dlogits(r, a) = static_cast<T>(g);
        }
        const double v = static_cast<double>(out.value(r, 0));
        const double ret = returns[order[start + static_cast<std::size_t>(r)]];
        vl += (v - ret) * (v - ret);
        dvalue(r, 0) = static_cast<T>(cfg.value_coef * 2.0 * (v - ret) / B);
      }
      pl /= B;
      vl /= B;
      ent /= B;
      const double total = pl + cfg.value_coef * vl - entropy_coef * ent;
      if (!std::isfinite(total))
        throw Error("non-finite PPO loss (policy " + std::to_string(pl) + ", value " + std::to_string(vl) +
                    ", entropy " + std::to_string(ent) + ") at epoch " + std::to_string(epoch));
      net.zero_grad();
      net.backward(gb, cache, dlogits, dvalue);
      opt.step(net.tensors());
      if (!net.all_finite()) throw Error("parameters became non-finite after a PPO step at epoch " + std::to_string(epoch));
      rep.policy_loss += pl;
      rep.value_loss += vl;
      rep.entropy += ent;
      rep.total_loss += total;
      rep.approx_kl += kl / B;
      rep.clip_fraction += static_cast<double>(clipped) / B;
      ++rep.minibatches;
    }
  }
  const double m = rep.minibatches;
  rep.policy_loss /= m;
  rep.value_loss /= m;
  rep.entropy /= m;
  rep.total_loss /= m;
  rep.approx_kl /= m;
  rep.clip_fraction /= m;
  return rep;
}

struct IterationStats {
  int iteration = 0;
  std::int64_t env_steps = 0;
  int episodes = 0;
  double mean_return = std::numeric_limits<double>::quiet_NaN();  // episodes finished this iteration
  double entropy_coef = 0.0;
  UpdateReport update;
  std::uint64_t memo_hits = 0;  // cumulative
  std::uint64_t memo_misses = 0;
  std::uint64_t legality_checks = 0;  // cumulative
  std::uint64_t backend_calls = 0;
  double wall_time_s = 0.0;  // since the trainer started
};

/// Collects fixed-size rollouts over a corpus and applies PPO updates. The
/// environment persists across iterations, so an episode cut by the batch
/// boundary is bootstrapped with the value of its last state and resumed.
class Trainer {
 public:
  using Net = nn::ActorCritic<float>;

  Trainer(PpoConfig cfg, const ActionCatalogue& catalogue, Backend& backend, MemoStore* memo, EnvConfig env_cfg,
          std::vector<std::shared_ptr<const ProgramContext>> programs, std::uint64_t seed,
          nn::NetConfig net_cfg = {})
      : cfg_(cfg), env_(catalogue, backend, memo, env_cfg), programs_(std::move(programs)), net_(net_cfg, seed),
        opt_(cfg.lr), rng_(seed ^ 0x9e3779b97f4a7c15ULL), start_(std::chrono::steady_clock::now()) {
    cfg_.validate();
    if (programs_.empty()) throw Error("training corpus is empty");
    if (net_cfg.actions != catalogue.size()) throw Error("network action width does not match the catalogue");
  }

  Net& net() { return net_; }
  const Net& net() const { return net_; }
  const PpoConfig& config() const { return cfg_; }
  std::int64_t env_steps() const { return steps_; }
  int iteration() const { return iteration_; }
  const Environment& env() const { return env_; }

  /// Called with the trace of every episode that finishes during rollouts.
  void on_episode(std::function<void(const EpisodeTrace&)> fn) { on_episode_ = std::move(fn); }

  IterationStats iterate() {
    const double coef = entropy_coefficient(cfg_, steps_);
    std::vector<Transition> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch));
    std::vector<double> finished;
    while (static_cast<int>(batch.size()) < cfg_.batch) {
      if (!active_) {
        env_.reset(next_program());
        obs_ = env_.observe();
        active_ = true;
        episode_return_ = 0.0;
      }
      Transition tr;
      if (cfg_.mask_structural) tr.mask = structural_mask(env_);
      const ActionChoice c = select_action(net_, obs_, SelectMode::kSample, rng_, tr.mask.empty() ? nullptr : &tr.mask);
      StepResult r = env_.step(c.action);
      tr.obs = std::move(obs_);
      tr.action = c.action;
      tr.logp = c.logp;
      tr.value = c.value;
      tr.reward = r.reward;
      tr.done = r.done;
      batch.push_back(std::move(tr));
      episode_return_ += r.reward;
      obs_ = std::move(r.observation);
      ++steps_;
      if (r.done) {
        finished.push_back(episode_return_);
        active_ = false;
        if (on_episode_) on_episode_(env_.trace());
      }
    }
    double bootstrap = 0.0;
    if (active_) bootstrap = static_cast<double>(net_.forward(nn::make_batch<float>(obs_)).value(0, 0));
    std::vector<double> rewards, values;
    std::vector<bool> dones;
    for (const auto& t : batch) {
      rewards.push_back(t.reward);
      values.push_back(t.value);
      dones.push_back(t.done);
    }
    const GaeResult gae = compute_gae(rewards, values, dones, cfg_.gamma, cfg_.lambda, bootstrap);
    IterationStats s;
    s.update = ppo_update(net_, opt_, batch, gae.advantages, gae.returns, cfg_, coef, rng_);
    s.iteration = ++iteration_;
    s.env_steps = steps_;
    s.episodes = static_cast<int>(finished.size());
    if (!finished.empty()) s.mean_return = std::accumulate(finished.begin(), finished.end(), 0.0) / static_cast<double>(finished.size());
    s.entropy_coef = coef;
    if (env_.memo()) {
      const MemoStats ms = env_.memo()->stats();
      s.memo_hits = ms.hits;
      s.memo_misses = ms.misses;
    }
    s.legality_checks = env_.counters().legality_checks;
    s.backend_calls = env_.counters().backend_calls;
    s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return s;
  }

 private:
  std::shared_ptr<const ProgramContext> next_program() {
    if (cursor_ == 0) {
      order_.resize(programs_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t k = order_.size(); k-- > 1;)
        std::swap(order_[k], order_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(k)))]);
    }
    const auto& p = programs_[order_[cursor_]];
    cursor_ = (cursor_ + 1) % programs_.size();
    return p;
  }

  PpoConfig cfg_;
  Environment env_;
  std::vector<std::shared_ptr<const ProgramContext>> programs_;
  Net net_;
  nn::Adam<float> opt_;
  Rng rng_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  bool active_ = false;
  GraphObservation obs_;
  double episode_return_ = 0.0;
  std::function<void(const EpisodeTrace&)> on_episode_;
  std::int64_t steps_ = 0;
  int iteration_ = 0;
};

inline const char* kMetricsHeader =
    "iteration,env_steps,episodes,mean_return,entropy_coef,policy_loss,value_loss,entropy,total_loss,approx_kl,"
    "clip_fraction,memo_hits,memo_misses,legality_checks,backend_calls,wall_time_s";

inline std::string metrics_row(const IterationStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%lld,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%llu,%llu,%llu,%llu,%.6f",
                s.iteration, static_cast<long long>(s.env_steps), s.episodes, s.mean_return, s.entropy_coef,
                s.update.policy_loss, s.update.value_loss, s.update.entropy, s.update.total_loss, s.update.approx_kl,
                s.update.clip_fraction, static_cast<unsigned long long>(s.memo_hits),
                static_cast<unsigned long long>(s.memo_misses), static_cast<unsigned long long>(s.legality_checks),
                static_cast<unsigned long long>(s.backend_calls), s.wall_time_s);
  return buf;
}

struct InferenceResult {
  std::vector<EpisodeStep> steps;
  Schedule schedule;         // skew factors resolved
  Schedule action_schedule;  // as chosen, memo-key form
  double t0 = 0.0;
  double t_final = 0.0;
  double policy_seconds = 0.0;  // time spent in network forwards
  double total_return() const { return std::log(t0 / t_final) / std::log(4.0); }
};

/// Deterministic greedy rollout. An action that left the state unchanged is
/// excluded until the state changes, so the episode cannot stall on a no-op.
template <class T>
InferenceResult greedy_schedule(const nn::ActorCritic<T>& net, Environment& env,
                                std::shared_ptr<const ProgramContext> ctx) {
  InferenceResult res;
  GraphObservation obs = env.reset(std::move(ctx));
  const int n = env.catalogue().size();
  std::vector<char> allowed(static_cast<std::size_t>(n), 1);
  while (!env.done()) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = net.forward(nn::make_batch<T>(obs));
    const auto p = softmax(out.logits.row(0));
    const int a = greedy_argmax(p, &allowed);
    res.policy_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    StepResult r = env.step(a);
    if (r.info.legal) std::fill(allowed.begin(), allowed.end(), 1);
    else allowed[static_cast<std::size_t>(a)] = 0;
    obs = std::move(r.observation);
  }
  res.steps = env.trace().steps;
  res.schedule = env.schedule();
  res.action_schedule = env.action_schedule();
  res.t0 = env.t0();
  res.t_final = env.t_current();
  return res;
}

struct SearchResult {
  std::vector<int> actions;
  double best_return = 0.0;  // log4(t0 / t_best)
  std::size_t sequences = 0;
};

/// Best return over all action sequences of length <= max_len. Sequences
/// containing an illegal or structural step are skipped, since that step is
/// a no-op and the sequence equals a shorter one.
inline SearchResult exhaustive_search(Environment& env, std::shared_ptr<const ProgramContext> ctx, int max_len = 3) {
  env.reset(std::move(ctx));
  SearchResult best;
  best.sequences = 1;
  std::vector<int> path;
  std::function<void(const Environment&, double)> dfs = [&](const Environment& state, double ret) {
    if (static_cast<int>(path.size()) >= max_len || state.done()) return;
    for (int a = 0; a < state.catalogue().size(); ++a) {
      Environment next = state;
      const StepResult r = next.step(a);
      if (!r.info.legal) continue;
      path.push_back(a);
      ++best.sequences;
      const double total = ret + r.reward;
      if (total > best.best_return + 1e-12) {
        best.best_return = total;
        best.actions = path;
      }
      dfs(next, total);
      path.pop_back();
    }
  };
  dfs(env, 0.0);
  return best;
}

}  // namespace looprl
