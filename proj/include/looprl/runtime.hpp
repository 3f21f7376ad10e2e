#pragma once

// Execution of scheduled programs.
//
// The executor is compiled once from a scheduled program: loops of the
// execution tree become slots, and every guard, subscript and flattened
// address becomes an affine form over the slots whose value is updated
// incrementally as loops advance. Statement bodies run as a small stack
// program in double precision (float results) or 64-bit integers (int
// results).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "looprl/transforms.hpp"

namespace looprl {

struct Storage {
  ElementKind kind = ElementKind::kFloat;
  std::vector<double> f;
  std::vector<std::int64_t> i;

  std::size_t size() const { return kind == ElementKind::kFloat ? f.size() : i.size(); }
  bool operator==(const Storage&) const = default;
};

using Memory = std::vector<Storage>;

inline Memory allocate(const Program& p) {
  Memory m;
  for (const auto& b : p.buffers) {
    Storage s;
    s.kind = b.kind;
    if (b.kind == ElementKind::kFloat) {
      s.f.assign(static_cast<std::size_t>(b.size()), 0.0);
    } else {
      s.i.assign(static_cast<std::size_t>(b.size()), 0);
    }
    m.push_back(std::move(s));
  }
  return m;
}

/// Floats uniform in [-1, 1], integers uniform in [-8, 8].
inline Memory random_inputs(const Program& p, std::uint64_t seed) {
  Memory m = allocate(p);
  Rng rng(seed);
  for (auto& s : m) {
    for (auto& v : s.f) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.i) v = rng.uniform_int(-8, 8);
  }
  return m;
}

/// Fixed inputs used for timing: floats in [0, 1), small non-negative integers.
inline Memory timing_inputs(const Program& p) {
  Memory m = allocate(p);
  Rng rng(0x5eed);
  for (auto& s : m) {
    for (auto& v : s.f) v = rng.uniform();
    for (auto& v : s.i) v = rng.uniform_int(0, 7);
  }
  return m;
}

/// Fixed-size pool of worker lanes. run() blocks until every task is done;
/// the calling thread takes part as lane 0.
class LanePool {
 public:
  explicit LanePool(int lanes) : lanes_(std::max(1, lanes)) {
    for (int k = 1; k < lanes_; ++k) threads_.emplace_back([this] { worker(); });
  }
  ~LanePool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  LanePool(const LanePool&) = delete;
  LanePool& operator=(const LanePool&) = delete;

  int lanes() const { return lanes_; }

  void run(int tasks, const std::function<void(int)>& fn) {
    if (lanes_ == 1 || tasks <= 1) {
      for (int t = 0; t < tasks; ++t) fn(t);
      return;
    }
    std::unique_lock<std::mutex> lock(mu_);
    job_ = &fn;
    tasks_ = tasks;
    next_.store(0);
    pending_ = tasks;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    drain();
    lock.lock();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void drain() {
    while (true) {
      const int t = next_.fetch_add(1);
      if (t >= tasks_) break;
      (*job_)(t);
      std::lock_guard<std::mutex> lock(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void worker() {
    std::uint64_t seen = 0;
    while (true) {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stop_ || (generation_ != seen && job_ != nullptr); });
      if (stop_) return;
      seen = generation_;
      lock.unlock();
      drain();
    }
  }

  int lanes_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int tasks_ = 0;
  std::atomic<int> next_{0};
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

class Executor {
 public:
  /// `checked` adds per-subscript bounds checks; out-of-bounds accesses throw
  /// Error naming the computation and original iteration.
  Executor(const ScheduledProgram& sp, bool checked) : checked_(checked) { compile(sp); }

  /// Called for every executed instance in checked mode with the computation
  /// index, its original iteration vector and the values of its loops.
  using Observer = std::function<void(int, const std::vector<std::int64_t>&, const std::vector<std::int64_t>&)>;
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  /// Runs the program on `mem` and returns the number of statement instances
  /// executed. Parallel loops are spread over `pool` when given.
  std::int64_t run(Memory& mem, LanePool* pool = nullptr) const {
    std::vector<std::int64_t> val(init_);
    std::int64_t count = 0;
    Context ctx{&mem, pool, &count};
    run_items(top_, val, ctx);
    return count;
  }

 private:
  enum class Op : std::uint8_t { kConst, kRead, kBinary };
  struct Instr {
    Op op = Op::kConst;
    BinaryOp bin = BinaryOp::kAdd;
    int read = -1;
    double fvalue = 0.0;
    std::int64_t ivalue = 0;
  };
  struct ReadRef {
    int buffer = -1;
    int form = -1;
  };
  struct Check {
    int form = -1;
    std::int64_t lo = 0;
    std::int64_t hi = 0;
  };
  struct Stmt {
    int computation = -1;
    std::string id;
    bool int_result = false;
    int write_buffer = -1;
    int write_form = -1;
    std::vector<ReadRef> reads;
    std::vector<Instr> code;
    std::vector<Check> guards;
    std::vector<Check> bounds;       // checked mode only
    std::vector<int> original_forms;  // checked mode only
    std::vector<int> loop_forms;      // checked mode only
  };
  struct Item {
    bool loop = false;
    int index = -1;
  };
  struct Loop {
    int slot = -1;
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    bool parallel = false;
    int unroll = 1;
    bool leaf = true;
    std::vector<std::pair<int, std::int64_t>> updates;  // (form, coefficient)
    std::vector<Item> body;
  };
  struct Form {
    std::vector<std::pair<int, std::int64_t>> terms;  // (slot, coefficient)
    std::int64_t constant = 0;
  };
  struct Context {
    Memory* mem;
    LanePool* pool;
    std::int64_t* count;
  };

  int add_form(Form f) {
    forms_.push_back(std::move(f));
    return static_cast<int>(forms_.size()) - 1;
  }

  void compile(const ScheduledProgram& sp) {
    const Program& p = sp.program;
    std::vector<int> open;      // loop indices
    std::vector<int> open_ids;  // scheduled loop ids
    for (std::size_t c = 0; c < sp.nests.size(); ++c) {
      const ScheduledNest& n = sp.nests[c];
      std::size_t common = 0;
      while (common < open_ids.size() && common < n.loops.size() && open_ids[common] == n.loops[common].id) ++common;
      open.resize(common);
      open_ids.resize(common);
      for (std::size_t k = common; k < n.loops.size(); ++k) {
        Loop l;
        l.slot = static_cast<int>(loops_.size());
        l.lo = n.loops[k].lo;
        l.hi = n.loops[k].hi;
        l.parallel = n.loops[k].parallel;
        loops_.push_back(l);
        const int idx = static_cast<int>(loops_.size()) - 1;
        if (open.empty()) {
          top_.push_back({true, idx});
        } else {
          loops_[static_cast<std::size_t>(open.back())].body.push_back({true, idx});
          loops_[static_cast<std::size_t>(open.back())].leaf = false;
        }
        open.push_back(idx);
        open_ids.push_back(n.loops[k].id);
      }
      const Computation& comp = p.computations[c];
      // Slot of each loop position of this nest.
      std::vector<int> slot_of(open.begin(), open.end());
      Stmt st = compile_statement(p, comp, n, slot_of);
      st.computation = static_cast<int>(c);
      stmts_.push_back(std::move(st));
      Loop& inner = loops_[static_cast<std::size_t>(open.back())];
      inner.body.push_back({false, static_cast<int>(stmts_.size()) - 1});
      inner.unroll = std::max(inner.unroll, n.unroll);
    }
    for (auto& l : loops_)
      if (!l.leaf) l.unroll = 1;
    init_.assign(forms_.size(), 0);
    for (std::size_t f = 0; f < forms_.size(); ++f) {
      init_[f] = forms_[f].constant;
      for (const auto& [slot, coeff] : forms_[f].terms)
        loops_[static_cast<std::size_t>(slot)].updates.emplace_back(static_cast<int>(f), coeff);
    }
  }

  // Affine form over slots from coefficients over nest positions.
  Form to_form(const std::vector<std::int64_t>& by_pos, std::int64_t constant, const std::vector<int>& slot_of) const {
    Form f;
    f.constant = constant;
    for (std::size_t k = 0; k < by_pos.size(); ++k)
      if (by_pos[k] != 0) f.terms.emplace_back(slot_of[k], by_pos[k]);
    return f;
  }

  // Original iterator k as a function of the loop positions.
  static void original_linear(const ScheduledNest& n, const AffineForm& sub, std::vector<std::int64_t>& by_pos,
                              std::int64_t& constant) {
    by_pos.assign(n.loops.size(), 0);
    constant = sub.constant;
    for (int k = 0; k < n.depth; ++k) {
      const std::int64_t a = sub.coeffs[static_cast<std::size_t>(k)];
      if (a == 0) continue;
      const GuardForm& g = n.guards[static_cast<std::size_t>(k)];
      for (std::size_t q = 0; q < by_pos.size(); ++q) by_pos[q] += a * g.coeffs[q];
      constant += a * g.constant;
    }
  }

  int address_form(const Program& p, const ScheduledNest& n, const Access& a, const std::vector<int>& slot_of,
                   std::vector<Check>* bounds) {
    const Buffer& b = p.buffers[static_cast<std::size_t>(a.buffer)];
    std::vector<std::int64_t> addr(n.loops.size(), 0);
    std::int64_t addr_const = 0;
    std::int64_t stride = 1;
    for (int r = b.rank() - 1; r >= 0; --r) {
      std::vector<std::int64_t> by_pos;
      std::int64_t constant = 0;
      original_linear(n, a.subscripts[static_cast<std::size_t>(r)], by_pos, constant);
      for (std::size_t q = 0; q < addr.size(); ++q) addr[q] += stride * by_pos[q];
      addr_const += stride * constant;
      if (bounds) bounds->push_back({add_form(to_form(by_pos, constant, slot_of)), 0, b.dims[static_cast<std::size_t>(r)]});
      stride *= b.dims[static_cast<std::size_t>(r)];
    }
    return add_form(to_form(addr, addr_const, slot_of));
  }

  Stmt compile_statement(const Program& p, const Computation& comp, const ScheduledNest& n,
                         const std::vector<int>& slot_of) {
    Stmt st;
    st.id = comp.id;
    st.int_result = p.buffers[static_cast<std::size_t>(comp.write.buffer)].kind == ElementKind::kInt;
    for (const GuardForm& g : n.guards) {
      // Drop guards that hold for every point of the loop box.
      std::int64_t mn = g.constant;
      std::int64_t mx = g.constant;
      for (std::size_t q = 0; q < g.coeffs.size(); ++q) {
        const std::int64_t a = g.coeffs[q] * n.loops[q].lo;
        const std::int64_t b = g.coeffs[q] * (n.loops[q].hi - 1);
        mn += std::min(a, b);
        mx += std::max(a, b);
      }
      if (mn >= g.lo && mx < g.hi) continue;
      st.guards.push_back({add_form(to_form(g.coeffs, g.constant, slot_of)), g.lo, g.hi});
    }
    if (checked_) {
      for (int k = 0; k < n.depth; ++k) {
        const GuardForm& g = n.guards[static_cast<std::size_t>(k)];
        st.original_forms.push_back(add_form(to_form(g.coeffs, g.constant, slot_of)));
      }
      for (int slot : slot_of) st.loop_forms.push_back(add_form(Form{{{slot, 1}}, 0}));
    }
    std::vector<Check>* bounds = checked_ ? &st.bounds : nullptr;
    st.write_buffer = comp.write.buffer;
    st.write_form = address_form(p, n, comp.write, slot_of, bounds);
    for (const auto& r : comp.reads) st.reads.push_back({r.buffer, address_form(p, n, r, slot_of, bounds)});
    emit(comp, comp.root, st.code);
    return st;
  }

  static void emit(const Computation& c, int node, std::vector<Instr>& code) {
    const ExprNode& e = c.expr[static_cast<std::size_t>(node)];
    Instr in;
    switch (e.kind) {
      case ExprKind::kConstant:
        in.op = Op::kConst;
        in.fvalue = e.value;
        in.ivalue = static_cast<std::int64_t>(e.value);
        break;
      case ExprKind::kRead:
        in.op = Op::kRead;
        in.read = e.read;
        break;
      case ExprKind::kBinary:
        emit(c, e.lhs, code);
        emit(c, e.rhs, code);
        in.op = Op::kBinary;
        in.bin = e.op;
        break;
    }
    code.push_back(in);
  }

  static std::int64_t to_int(double v) {
    if (!(v == v)) return 0;
    return static_cast<std::int64_t>(std::clamp(v, -4.0e18, 4.0e18));
  }

  static std::int64_t int_op(BinaryOp op, std::int64_t a, std::int64_t b) {
    const auto ua = static_cast<std::uint64_t>(a);
    const auto ub = static_cast<std::uint64_t>(b);
    switch (op) {
      case BinaryOp::kAdd: return static_cast<std::int64_t>(ua + ub);
      case BinaryOp::kSub: return static_cast<std::int64_t>(ua - ub);
      case BinaryOp::kMul: return static_cast<std::int64_t>(ua * ub);
      case BinaryOp::kDiv:
        if (b == 0) return 0;
        if (b == -1) return static_cast<std::int64_t>(std::uint64_t{0} - ua);
        return a / b;
      case BinaryOp::kMin: return std::min(a, b);
      case BinaryOp::kMax: return std::max(a, b);
    }
    return 0;
  }

  static double float_op(BinaryOp op, double a, double b) {
    switch (op) {
      case BinaryOp::kAdd: return a + b;
      case BinaryOp::kSub: return a - b;
      case BinaryOp::kMul: return a * b;
      case BinaryOp::kDiv: return a / b;
      case BinaryOp::kMin: return std::min(a, b);
      case BinaryOp::kMax: return std::max(a, b);
    }
    return 0.0;
  }

  void exec_stmt(const Stmt& st, const std::vector<std::int64_t>& val, Context& ctx) const {
    for (const Check& g : st.guards) {
      const std::int64_t v = val[static_cast<std::size_t>(g.form)];
      if (v < g.lo || v >= g.hi) return;
    }
    if (checked_) {
      for (const Check& b : st.bounds) {
        const std::int64_t v = val[static_cast<std::size_t>(b.form)];
        if (v < b.lo || v >= b.hi) {
          std::ostringstream os;
          os << "out-of-bounds access in computation " << st.id << " at iteration (";
          for (std::size_t k = 0; k < st.original_forms.size(); ++k)
            os << (k ? "," : "") << val[static_cast<std::size_t>(st.original_forms[k])];
          os << "): subscript " << v << " outside [0," << b.hi << ")";
          throw Error(os.str());
        }
      }
      if (observer_) {
        std::vector<std::int64_t> x, w;
        for (int f : st.original_forms) x.push_back(val[static_cast<std::size_t>(f)]);
        for (int f : st.loop_forms) w.push_back(val[static_cast<std::size_t>(f)]);
        observer_(st.computation, x, w);
      }
    }
    Memory& mem = *ctx.mem;
    ++*ctx.count;
    if (st.int_result) {
      std::int64_t stack[64];
      int sp = 0;
      for (const Instr& in : st.code) {
        switch (in.op) {
          case Op::kConst: stack[sp++] = in.ivalue; break;
          case Op::kRead: {
            const ReadRef& r = st.reads[static_cast<std::size_t>(in.read)];
            const Storage& s = mem[static_cast<std::size_t>(r.buffer)];
            const auto addr = static_cast<std::size_t>(val[static_cast<std::size_t>(r.form)]);
            stack[sp++] = s.kind == ElementKind::kInt ? s.i[addr] : to_int(s.f[addr]);
            break;
          }
          case Op::kBinary:
            --sp;
            stack[sp - 1] = int_op(in.bin, stack[sp - 1], stack[sp]);
            break;
        }
      }
      mem[static_cast<std::size_t>(st.write_buffer)].i[static_cast<std::size_t>(val[static_cast<std::size_t>(st.write_form)])] =
          stack[0];
    } else {
      double stack[64];
      int sp = 0;
      for (const Instr& in : st.code) {
        switch (in.op) {
          case Op::kConst: stack[sp++] = in.fvalue; break;
          case Op::kRead: {
            const ReadRef& r = st.reads[static_cast<std::size_t>(in.read)];
            const Storage& s = mem[static_cast<std::size_t>(r.buffer)];
            const auto addr = static_cast<std::size_t>(val[static_cast<std::size_t>(r.form)]);
            stack[sp++] = s.kind == ElementKind::kFloat ? s.f[addr] : static_cast<double>(s.i[addr]);
            break;
          }
          case Op::kBinary:
            --sp;
            stack[sp - 1] = float_op(in.bin, stack[sp - 1], stack[sp]);
            break;
        }
      }
      mem[static_cast<std::size_t>(st.write_buffer)].f[static_cast<std::size_t>(val[static_cast<std::size_t>(st.write_form)])] =
          stack[0];
    }
  }

  void run_items(const std::vector<Item>& items, std::vector<std::int64_t>& val, Context& ctx) const {
    for (const Item& it : items) {
      if (it.loop) {
        run_loop(loops_[static_cast<std::size_t>(it.index)], val, ctx);
      } else {
        exec_stmt(stmts_[static_cast<std::size_t>(it.index)], val, ctx);
      }
    }
  }

  static void shift(const Loop& l, std::vector<std::int64_t>& val, std::int64_t by) {
    for (const auto& [f, c] : l.updates) val[static_cast<std::size_t>(f)] += c * by;
  }

  template <int U>
  void run_leaf(const Loop& l, std::int64_t lo, std::int64_t hi, std::vector<std::int64_t>& val, Context& ctx) const {
    shift(l, val, lo);
    std::int64_t it = lo;
    for (; it + U <= hi; it += U) {
      for (int r = 0; r < U; ++r) {
        for (const Item& item : l.body) exec_stmt(stmts_[static_cast<std::size_t>(item.index)], val, ctx);
        shift(l, val, 1);
      }
    }
    for (; it < hi; ++it) {
      for (const Item& item : l.body) exec_stmt(stmts_[static_cast<std::size_t>(item.index)], val, ctx);
      shift(l, val, 1);
    }
    shift(l, val, -hi);
  }

  void run_range(const Loop& l, std::int64_t lo, std::int64_t hi, std::vector<std::int64_t>& val, Context& ctx) const {
    if (l.leaf) {
      switch (l.unroll) {
        case 2: run_leaf<2>(l, lo, hi, val, ctx); return;
        case 4: run_leaf<4>(l, lo, hi, val, ctx); return;
        case 8: run_leaf<8>(l, lo, hi, val, ctx); return;
        case 16: run_leaf<16>(l, lo, hi, val, ctx); return;
        case 32: run_leaf<32>(l, lo, hi, val, ctx); return;
        default: run_leaf<1>(l, lo, hi, val, ctx); return;
      }
    }
    shift(l, val, lo);
    for (std::int64_t it = lo; it < hi; ++it) {
      run_items(l.body, val, ctx);
      shift(l, val, 1);
    }
    shift(l, val, -hi);
  }

  void run_loop(const Loop& l, std::vector<std::int64_t>& val, Context& ctx) const {
    if (!l.parallel || ctx.pool == nullptr || ctx.pool->lanes() == 1 || l.hi - l.lo < 2) {
      run_range(l, l.lo, l.hi, val, ctx);
      return;
    }
    const std::int64_t extent = l.hi - l.lo;
    const int chunks = static_cast<int>(std::min<std::int64_t>(ctx.pool->lanes(), extent));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(chunks), 0);
    std::exception_ptr failure;
    std::mutex failure_mu;
    ctx.pool->run(chunks, [&](int c) {
      try {
        const std::int64_t lo = l.lo + extent * c / chunks;
        const std::int64_t hi = l.lo + extent * (c + 1) / chunks;
        std::vector<std::int64_t> local(val);
        Context lane{ctx.mem, nullptr, &counts[static_cast<std::size_t>(c)]};
        run_range(l, lo, hi, local, lane);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
    if (failure) std::rethrow_exception(failure);
    for (auto c : counts) *ctx.count += c;
  }

  bool checked_;
  Observer observer_;
  std::vector<Form> forms_;
  std::vector<std::int64_t> init_;
  std::vector<Loop> loops_;
  std::vector<Stmt> stmts_;
  std::vector<Item> top_;
};

/// Sequential reference execution with bounds checks. Parallel flags do not
/// change the order.
inline Memory interpret(const ScheduledProgram& sp, const Memory& inputs) {
  Memory mem = inputs;
  Executor(sp, true).run(mem);
  return mem;
}

inline Memory interpret(const Program& p, const Memory& inputs) { return interpret(identity_schedule(p), inputs); }

/// Element-exact for integer buffers; relative error <= tol for floats
/// (NaN matches NaN).
inline bool outputs_match(const Memory& a, const Memory& b, double tol = 1e-10) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].kind != b[k].kind || a[k].size() != b[k].size()) return false;
    if (a[k].i != b[k].i) return false;
    for (std::size_t e = 0; e < a[k].f.size(); ++e) {
      const double x = a[k].f[e];
      const double y = b[k].f[e];
      if (x == y || (x != x && y != y)) continue;
      const double scale = std::max({std::abs(x), std::abs(y), 1e-300});
      if (!(std::abs(x - y) / scale <= tol)) return false;
    }
  }
  return true;
}

struct MeasurementConfig {
  int repeats = 30;
  int warmup = 1;
  int workers = 0;  // 0: hardware parallelism
  int resolved_workers() const {
    if (workers > 0) return workers;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }
};

/// Process-wide lock so only one measurement runs at a time.
inline std::mutex& measurement_mutex() {
  static std::mutex mu;
  return mu;
}

/// Minimum wall time in seconds over cfg.repeats runs after cfg.warmup
/// unmeasured runs. The first warmup run is bounds-checked.
inline double measure(const ScheduledProgram& sp, const MeasurementConfig& cfg, LanePool* pool = nullptr) {
  if (cfg.repeats < 1) throw Error("measurement needs at least one repeat");
  std::lock_guard<std::mutex> lock(measurement_mutex());
  std::unique_ptr<LanePool> own;
  const int W = cfg.resolved_workers();
  if (pool == nullptr || pool->lanes() != W) {
    own = std::make_unique<LanePool>(W);
    pool = own.get();
  }
  const Memory pristine = timing_inputs(sp.program);
  Memory mem = pristine;
  Executor(sp, true).run(mem);
  const Executor exec(sp, false);
  for (int k = 1; k < cfg.warmup; ++k) {
    mem = pristine;
    exec.run(mem, pool);
  }
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.repeats; ++r) {
    mem = pristine;
    const auto t0 = std::chrono::steady_clock::now();
    exec.run(mem, pool);
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  if (!(best > 0.0)) best = 1e-9;  // below clock resolution
  return best;
}

struct CostModelParams {
  double cache_capacity = 32768.0;  // elements
  double parallel_overhead = 5000.0;
  double level_slope = 0.1;
  int workers = 8;
  double unroll_gain = 0.05;
  int unroll_cap = 8;
  double tile_bonus = 0.7;
  double stride_scale = 1.0 / 8.0;
  double seconds_per_unit = 1e-9;
};

/// Mean innermost-stride penalty over the write and read accesses of a nest.
inline double stride_penalty(const Program& p, const ScheduledNest& n, const CostModelParams& params) {
  const Computation& c = p.computations[static_cast<std::size_t>(n.computation)];
  if (n.loops.empty()) return 0.0;
  const std::size_t inner = n.loops.size() - 1;
  auto penalty = [&](const Access& a) {
    const Buffer& b = p.buffers[static_cast<std::size_t>(a.buffer)];
    std::int64_t stride = 1;
    std::int64_t coeff = 0;
    for (int r = b.rank() - 1; r >= 0; --r) {
      const AffineForm& s = a.subscripts[static_cast<std::size_t>(r)];
      std::int64_t d = 0;
      for (int k = 0; k < n.depth; ++k) d += s.coeffs[static_cast<std::size_t>(k)] * n.guards[static_cast<std::size_t>(k)].coeffs[inner];
      coeff += stride * d;
      stride *= b.dims[static_cast<std::size_t>(r)];
    }
    const double st = static_cast<double>(coeff < 0 ? -coeff : coeff);
    if (st <= 1.0) return 0.0;
    return std::min(1.0, std::log2(st) * params.stride_scale);
  };
  double total = penalty(c.write);
  for (const auto& r : c.reads) total += penalty(r);
  return total / static_cast<double>(1 + c.reads.size());
}

/// Deterministic cost in model units.
inline double synthetic_cost(const ScheduledProgram& sp, const CostModelParams& params = {}) {
  const Program& p = sp.program;
  double total = 0.0;
  for (const ScheduledNest& n : sp.nests) {
    const Computation& c = p.computations[static_cast<std::size_t>(n.computation)];
    const double N = static_cast<double>(c.domain_size());
    double tile_factor = 1.0;
    for (auto it = n.trace.rbegin(); it != n.trace.rend(); ++it) {
      if (it->op != TraceOp::kTile) continue;
      std::vector<int> buffers{c.write.buffer};
      for (const auto& r : c.reads)
        if (std::find(buffers.begin(), buffers.end(), r.buffer) == buffers.end()) buffers.push_back(r.buffer);
      const double footprint = static_cast<double>(it->tile_i * it->tile_j) * static_cast<double>(buffers.size());
      if (footprint <= params.cache_capacity) tile_factor = params.tile_bonus;
      break;
    }
    double unroll_factor = 1.0;
    if (n.unroll >= 2) unroll_factor = 1.0 - params.unroll_gain * std::log2(std::min(n.unroll, params.unroll_cap));
    double divisor = 1.0;
    double overhead = 0.0;
    const int level = n.parallel_level();
    if (level >= 0) {
      const double e = static_cast<double>(n.loops[static_cast<std::size_t>(level)].extent());
      const double W = params.workers;
      if (e < W) {
        divisor = std::max(1.0, e * 0.5);
      } else {
        divisor = std::max(1.0, std::min(W, e) * (1.0 - params.level_slope * level));
      }
      overhead = params.parallel_overhead;
    }
    total += N * (1.0 + stride_penalty(p, n, params)) * tile_factor * unroll_factor / divisor + overhead;
  }
  return total;
}

enum class BackendKind { kSynthetic, kMeasured };

inline const char* backend_name(BackendKind k) { return k == BackendKind::kSynthetic ? "synthetic" : "measured"; }

inline BackendKind parse_backend(const std::string& s) {
  if (s == "synthetic") return BackendKind::kSynthetic;
  if (s == "measured") return BackendKind::kMeasured;
  throw Error("unknown backend '" + s + "' (expected synthetic or measured)");
}

/// Execution-time source behind one interface.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  virtual double seconds(const ScheduledProgram& sp) = 0;
  virtual int runs() const = 0;
};

class SyntheticBackend : public Backend {
 public:
  explicit SyntheticBackend(CostModelParams params = {}) : params_(params) {}
  BackendKind kind() const override { return BackendKind::kSynthetic; }
  double seconds(const ScheduledProgram& sp) override {
    return synthetic_cost(sp, params_) * params_.seconds_per_unit;
  }
  int runs() const override { return 1; }
  const CostModelParams& params() const { return params_; }

 private:
  CostModelParams params_;
};

class MeasuredBackend : public Backend {
 public:
  explicit MeasuredBackend(MeasurementConfig cfg = {}) : cfg_(cfg), pool_(cfg.resolved_workers()) {}
  BackendKind kind() const override { return BackendKind::kMeasured; }
  double seconds(const ScheduledProgram& sp) override { return measure(sp, cfg_, &pool_); }
  int runs() const override { return cfg_.repeats; }
  const MeasurementConfig& config() const { return cfg_; }

 private:
  MeasurementConfig cfg_;
  LanePool pool_;
};

inline std::unique_ptr<Backend> make_backend(BackendKind kind, const MeasurementConfig& mcfg = {},
                                             const CostModelParams& params = {}) {
  if (kind == BackendKind::kSynthetic) return std::make_unique<SyntheticBackend>(params);
  return std::make_unique<MeasuredBackend>(mcfg);
}

}  // namespace looprl
