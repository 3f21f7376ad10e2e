#pragma once

// Scheduling environment: a fixed catalogue of 56 actions applied branch by
// branch, legality-gated transitions, and rewards equal to log4 of the
// per-step speedup.

#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "looprl/dsl.hpp"
#include "looprl/features.hpp"
#include "looprl/legality.hpp"
#include "looprl/memo.hpp"
#include "looprl/runtime.hpp"

namespace looprl {

inline constexpr int kCatalogueSize = 56;

struct Action {
  bool next = false;
  Transformation t;  // unused when next

  std::string label() const { return next ? "Next" : t.label(); }
};

/// I(i,i+1) x4, R(i) x5, S(i,i+1) x3, P(0..1), T(i,i+1,tx,ty) x36, U(u) x5,
/// Next. The tile grid and unroll factors can be replaced as long as the
/// total stays at 56.
class ActionCatalogue {
 public:
  explicit ActionCatalogue(std::vector<int> tile_sizes = {32, 64, 128}, std::vector<int> unroll_factors = {2, 4, 8, 16, 32}) {
    for (int i = 0; i < 4; ++i) add(Transformation::interchange(i, i + 1));
    for (int i = 0; i < 5; ++i) add(Transformation::reversal(i));
    for (int i = 0; i < 3; ++i) add(Transformation::skewing(i, i + 1));
    for (int i = 0; i < 2; ++i) add(Transformation::parallelization(i));
    for (int i = 0; i < 4; ++i)
      for (int tx : tile_sizes)
        for (int ty : tile_sizes) add(Transformation::tiling(i, i + 1, tx, ty));
    for (int u : unroll_factors) add(Transformation::unrolling(u));
    actions_.push_back(Action{true, {}});
    if (size() != kCatalogueSize)
      throw Error("action catalogue has " + std::to_string(size()) + " actions, expected " + std::to_string(kCatalogueSize));
    for (int u : unroll_factors)
      if (u < 2 || !is_power_of_two(u)) throw Error("unroll factors must be powers of two >= 2");
    for (int t : tile_sizes)
      if (t < 2 || !is_power_of_two(t)) throw Error("tile sizes must be powers of two >= 2");
  }

  int size() const { return static_cast<int>(actions_.size()); }
  const Action& operator[](int id) const {
    if (id < 0 || id >= size()) throw Error("action id " + std::to_string(id) + " outside [0," + std::to_string(size()) + ")");
    return actions_[static_cast<std::size_t>(id)];
  }
  int next_id() const { return size() - 1; }

  int find(const std::string& label) const {
    for (int k = 0; k < size(); ++k)
      if (actions_[static_cast<std::size_t>(k)].label() == label) return k;
    return -1;
  }

 private:
  void add(const Transformation& t) { actions_.push_back(Action{false, t}); }
  std::vector<Action> actions_;
};

/// A program with its content id and lazily computed dependences, shared by
/// every episode on that program.
class ProgramContext {
 public:
  explicit ProgramContext(Program p) : program_(std::move(p)), id_(program_id(program_)) {
    ProgramCaps caps;
    validate_program(program_, caps);
  }

  const Program& program() const { return program_; }
  const std::string& id() const { return id_; }

  const DependenceSet& dependences() const {
    std::lock_guard<std::mutex> lock(mu_);
    if (!deps_) deps_ = compute_dependences(program_);
    return *deps_;
  }
  bool dependences_ready() const {
    std::lock_guard<std::mutex> lock(mu_);
    return deps_.has_value();
  }

 private:
  Program program_;
  std::string id_;
  mutable std::mutex mu_;
  mutable std::optional<DependenceSet> deps_;
};

struct EnvConfig {
  int step_cap = 64;
};

struct StepInfo {
  bool legal = false;
  bool structural = false;
  bool memo_hit = false;
  std::string reason;
};

struct StepResult {
  GraphObservation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct EpisodeStep {
  int action = 0;
  std::string label;
  int branch = 0;
  bool legal = false;
  bool structural = false;
  bool memo_hit = false;
  double reward = 0.0;
  double time_before = 0.0;
  double time_after = 0.0;
};

struct EpisodeTrace {
  std::string program_id;
  std::string program_name;
  std::string backend;
  double t0 = 0.0;
  double t_final = 0.0;
  std::vector<EpisodeStep> steps;

  double total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["program_id"] = program_id;
    j["program"] = program_name;
    j["backend"] = backend;
    j["t0"] = t0;
    j["t_final"] = t_final;
    j["steps"] = nlohmann::json::array();
    for (const auto& s : steps)
      j["steps"].push_back({{"action", s.action},
                            {"label", s.label},
                            {"branch", s.branch},
                            {"legal", s.legal},
                            {"structural", s.structural},
                            {"memo_hit", s.memo_hit},
                            {"reward", s.reward},
                            {"time_before", s.time_before},
                            {"time_after", s.time_after}});
    return j;
  }

  static EpisodeTrace from_json(const nlohmann::json& j) {
    EpisodeTrace t;
    t.program_id = j.at("program_id").get<std::string>();
    t.program_name = j.value("program", "");
    t.backend = j.at("backend").get<std::string>();
    t.t0 = j.at("t0").get<double>();
    t.t_final = j.at("t_final").get<double>();
    for (const auto& s : j.at("steps")) {
      EpisodeStep st;
      st.action = s.at("action").get<int>();
      st.label = s.value("label", "");
      st.branch = s.value("branch", 0);
      st.legal = s.at("legal").get<bool>();
      st.structural = s.value("structural", false);
      st.memo_hit = s.value("memo_hit", false);
      st.reward = s.at("reward").get<double>();
      st.time_before = s.at("time_before").get<double>();
      st.time_after = s.at("time_after").get<double>();
      t.steps.push_back(st);
    }
    return t;
  }
};

/// Difference between the summed rewards and log4(t0 / t_final).
inline double telescoping_gap(const EpisodeTrace& t) {
  return std::abs(t.total_reward() - std::log(t.t0 / t.t_final) / std::log(4.0));
}

struct EnvCounters {
  std::uint64_t legality_checks = 0;  // schedule legality evaluations
  std::uint64_t backend_calls = 0;    // time measurements or model evaluations
  std::uint64_t structural = 0;
  std::uint64_t illegal = 0;
};

class Environment {
 public:
  Environment(const ActionCatalogue& catalogue, Backend& backend, MemoStore* memo = nullptr, EnvConfig cfg = {})
      : catalogue_(catalogue), backend_(backend), memo_(memo), cfg_(cfg) {
    if (cfg_.step_cap < 1) throw Error("step cap must be positive");
  }

  GraphObservation reset(std::shared_ptr<const ProgramContext> ctx) {
    ctx_ = std::move(ctx);
    sp_ = identity_schedule(ctx_->program());
    schedule_.clear();
    action_schedule_.clear();
    branch_ = 0;
    steps_ = 0;
    done_ = false;
    bool hit = false;
    t0_ = t_cur_ = time_of(sp_, kEmptyScheduleKey, &hit);
    trace_ = EpisodeTrace{ctx_->id(), ctx_->program().name, backend_name(backend_.kind()), t0_, t0_, {}};
    return observe();
  }

  GraphObservation reset(const Program& p) { return reset(std::make_shared<const ProgramContext>(p)); }

  StepResult step(int action_id) {
    if (!ctx_) throw Error("step before reset");
    if (done_) throw Error("step after the episode ended");
    const Action& action = catalogue_[action_id];
    StepResult r;
    EpisodeStep ts;
    ts.action = action_id;
    ts.label = action.label();
    ts.branch = branch_;
    ts.time_before = t_cur_;
    ++steps_;
    if (action.next) {
      r.info.legal = true;
      if (branch_ + 1 >= static_cast<int>(sp_.branches.size())) done_ = true;
      else ++branch_;
    } else {
      transform(action.t, r);
    }
    if (steps_ >= cfg_.step_cap) done_ = true;
    r.done = done_;
    r.observation = observe();
    ts.legal = r.info.legal;
    ts.structural = r.info.structural;
    ts.memo_hit = r.info.memo_hit;
    ts.reward = r.reward;
    ts.time_after = t_cur_;
    trace_.steps.push_back(ts);
    trace_.t_final = t_cur_;
    return r;
  }

  GraphObservation observe() const {
    const int b = std::min(branch_, static_cast<int>(sp_.branches.size()) - 1);
    return featurize(sp_, b);
  }

  const ActionCatalogue& catalogue() const { return catalogue_; }
  const ScheduledProgram& scheduled() const { return sp_; }
  const Schedule& schedule() const { return schedule_; }                // skew factors resolved
  const Schedule& action_schedule() const { return action_schedule_; }  // as chosen
  const ProgramContext& context() const { return *ctx_; }
  int branch() const { return branch_; }
  int branch_count() const { return static_cast<int>(sp_.branches.size()); }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  double t0() const { return t0_; }
  double t_current() const { return t_cur_; }
  const EpisodeTrace& trace() const { return trace_; }
  const EnvCounters& counters() const { return counters_; }
  Backend& backend() { return backend_; }
  MemoStore* memo() { return memo_; }

 private:
  void transform(const Transformation& chosen, StepResult& r) {
    Transformation t = chosen;
    ScheduledProgram next = sp_;
    if (t.kind == TransformKind::kSkewing) t.factor = resolve_skew_factor(sp_, ctx_->dependences(), branch_, t.i, t.j);
    try {
      apply_transformation(next, branch_, t);
    } catch (const StructuralError& e) {
      ++counters_.structural;
      r.info.structural = true;
      r.info.reason = e.what();
      return;
    }
    Schedule candidate = action_schedule_;
    candidate.push_back({branch_, chosen});
    const std::string key = canonical_key(candidate);
    std::optional<MemoRecord> rec;
    if (memo_) rec = memo_->lookup({ctx_->id(), key, backend_.kind()});
    r.info.memo_hit = rec.has_value();
    bool legal;
    if (rec) {
      legal = rec->legal;
    } else {
      ++counters_.legality_checks;
      const LegalityVerdict v = schedule_legality(next, ctx_->dependences());
      legal = v.legal;
      r.info.reason = v.reason;
      if (!legal && memo_) memo_->insert({ctx_->id(), key, backend_.kind()}, MemoRecord{false, std::nullopt, 0, {}});
    }
    if (!legal) {
      ++counters_.illegal;
      return;
    }
    double t_new;
    if (rec) {
      t_new = *rec->exec_time_s;
    } else {
      ++counters_.backend_calls;
      t_new = backend_.seconds(next);
      if (memo_) memo_->insert({ctx_->id(), key, backend_.kind()}, make_record(t_new));
    }
    r.info.legal = true;
    r.reward = std::log(t_cur_ / t_new) / std::log(4.0);
    t_cur_ = t_new;
    sp_ = std::move(next);
    schedule_.push_back({branch_, t});
    action_schedule_.push_back({branch_, chosen});
  }

  MemoRecord make_record(double t) const {
    MemoRecord rec{true, t, backend_.runs(), {}};
    if (backend_.kind() == BackendKind::kMeasured) rec.host = host_fingerprint();
    return rec;
  }

  double time_of(const ScheduledProgram& sp, const std::string& key, bool* hit) {
    if (memo_) {
      if (auto rec = memo_->lookup({ctx_->id(), key, backend_.kind()})) {
        if (!rec->legal) throw Error("memo marks the unscheduled program illegal");
        *hit = true;
        return *rec->exec_time_s;
      }
    }
    *hit = false;
    ++counters_.backend_calls;
    const double t = backend_.seconds(sp);
    if (memo_) memo_->insert({ctx_->id(), key, backend_.kind()}, make_record(t));
    return t;
  }

  const ActionCatalogue& catalogue_;
  Backend& backend_;
  MemoStore* memo_;
  EnvConfig cfg_;
  std::shared_ptr<const ProgramContext> ctx_;
  ScheduledProgram sp_;
  Schedule schedule_;
  Schedule action_schedule_;
  int branch_ = 0;
  int steps_ = 0;
  bool done_ = false;
  double t0_ = 0.0;
  double t_cur_ = 0.0;
  EpisodeTrace trace_;
  EnvCounters counters_;
};

}  // namespace looprl
