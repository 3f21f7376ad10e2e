#pragma once

// Schedules and their application to a program.
//
// A scheduled nest keeps, for one computation, the ordered list of loops it
// now runs under and a set of guard forms: affine functions of the loop
// variables with a half-open admissible range. The first `depth` guards are
// the original iterators, so they double as the map from loop variables back
// to the original iteration vector. Tiling adds one guard per point loop
// (0 <= p < tile). Loop ids are shared between computations that run under
// the same loop; the common id prefix of consecutive computations defines the
// execution tree.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "looprl/ast.hpp"
#include "looprl/ir.hpp"

namespace looprl {

enum class TransformKind { kInterchange, kReversal, kSkewing, kParallelization, kTiling, kUnrolling };

struct Transformation {
  TransformKind kind = TransformKind::kInterchange;
  int i = 0;
  int j = 0;
  int factor = 0;  // skewing only; 0 means "not yet resolved"
  int tx = 0;
  int ty = 0;
  int unroll = 0;

  static Transformation interchange(int i, int j) { return {TransformKind::kInterchange, i, j}; }
  static Transformation reversal(int i) { return {TransformKind::kReversal, i, 0}; }
  static Transformation skewing(int i, int j, int f = 0) { return {TransformKind::kSkewing, i, j, f}; }
  static Transformation parallelization(int i) { return {TransformKind::kParallelization, i, 0}; }
  static Transformation tiling(int i, int j, int tx, int ty) {
    return {TransformKind::kTiling, i, j, 0, tx, ty};
  }
  static Transformation unrolling(int u) { return {TransformKind::kUnrolling, 0, 0, 0, 0, 0, u}; }

  bool is_unimodular() const {
    return kind == TransformKind::kInterchange || kind == TransformKind::kReversal ||
           kind == TransformKind::kSkewing;
  }

  std::string label() const {
    auto s = [](auto v) { return std::to_string(v); };
    switch (kind) {
      case TransformKind::kInterchange: return "I(" + s(i) + "," + s(j) + ")";
      case TransformKind::kReversal: return "R(" + s(i) + ")";
      case TransformKind::kSkewing:
        return factor > 0 ? "S(" + s(i) + "," + s(j) + "," + s(factor) + ")" : "S(" + s(i) + "," + s(j) + ")";
      case TransformKind::kParallelization: return "P(" + s(i) + ")";
      case TransformKind::kTiling: return "T(" + s(i) + "," + s(j) + "," + s(tx) + "," + s(ty) + ")";
      case TransformKind::kUnrolling: return "U(" + s(unroll) + ")";
    }
    return "?";
  }

  bool operator==(const Transformation&) const = default;
};

struct ScheduleStep {
  int branch = 0;
  Transformation t;
  bool operator==(const ScheduleStep&) const = default;
};

using Schedule = std::vector<ScheduleStep>;

inline constexpr const char* kEmptyScheduleKey = "\xE2\x88\x85";  // U+2205

/// "∅" for the empty schedule, otherwise "B<branch>:<label>" joined by ';'.
inline std::string canonical_key(const Schedule& s) {
  if (s.empty()) return kEmptyScheduleKey;
  std::string out;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k) out += ';';
    out += "B" + std::to_string(s[k].branch) + ":" + s[k].t.label();
  }
  return out;
}

/// Inverse of canonical_key.
inline Schedule parse_schedule_key(const std::string& key) {
  Schedule out;
  if (key == kEmptyScheduleKey || key.empty()) return out;
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) { throw Error("bad schedule key '" + key + "': " + why); };
  while (pos <= key.size()) {
    std::size_t end = key.find(';', pos);
    if (end == std::string::npos) end = key.size();
    const std::string item = key.substr(pos, end - pos);
    const auto colon = item.find(':');
    if (item.size() < 4 || item[0] != 'B' || colon == std::string::npos) bad("expected B<n>:<label>");
    ScheduleStep step;
    try {
      step.branch = std::stoi(item.substr(1, colon - 1));
    } catch (const std::exception&) {
      bad("branch index");
    }
    const std::string label = item.substr(colon + 1);
    const auto open = label.find('(');
    if (open != 1 || label.back() != ')') bad("label '" + label + "'");
    std::vector<int> args;
    std::size_t a = open + 1;
    while (a < label.size() - 1) {
      std::size_t comma = label.find(',', a);
      if (comma == std::string::npos || comma > label.size() - 1) comma = label.size() - 1;
      try {
        args.push_back(std::stoi(label.substr(a, comma - a)));
      } catch (const std::exception&) {
        bad("argument in '" + label + "'");
      }
      a = comma + 1;
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) bad("argument count in '" + label + "'");
    };
    switch (label[0]) {
      case 'I': need(2, 2); step.t = Transformation::interchange(args[0], args[1]); break;
      case 'R': need(1, 1); step.t = Transformation::reversal(args[0]); break;
      case 'S':
        need(2, 3);
        step.t = Transformation::skewing(args[0], args[1], args.size() == 3 ? args[2] : 0);
        break;
      case 'P': need(1, 1); step.t = Transformation::parallelization(args[0]); break;
      case 'T': need(4, 4); step.t = Transformation::tiling(args[0], args[1], args[2], args[3]); break;
      case 'U': need(1, 1); step.t = Transformation::unrolling(args[0]); break;
      default: bad("unknown transformation '" + label + "'");
    }
    out.push_back(step);
    pos = end + 1;
  }
  return out;
}

inline IntMatrix identity_matrix(int n) {
  IntMatrix m(static_cast<std::size_t>(n), std::vector<std::int64_t>(static_cast<std::size_t>(n), 0));
  for (int k = 0; k < n; ++k) m[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] = 1;
  return m;
}

inline IntMatrix matmul(const IntMatrix& a, const IntMatrix& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.empty() ? 0 : b[0].size();
  IntMatrix out(n, std::vector<std::int64_t>(m, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < m; ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

/// Matrix acting on the iteration vector (new = M * old).
inline IntMatrix unimodular_matrix(const Transformation& t, int depth) {
  auto check = [&](int level) {
    if (level < 0 || level >= depth)
      throw Error(t.label() + ": level " + std::to_string(level) + " out of range for depth " + std::to_string(depth));
  };
  IntMatrix m = identity_matrix(depth);
  switch (t.kind) {
    case TransformKind::kInterchange:
      check(t.i);
      check(t.j);
      m[static_cast<std::size_t>(t.i)][static_cast<std::size_t>(t.i)] = 0;
      m[static_cast<std::size_t>(t.j)][static_cast<std::size_t>(t.j)] = 0;
      m[static_cast<std::size_t>(t.i)][static_cast<std::size_t>(t.j)] = 1;
      m[static_cast<std::size_t>(t.j)][static_cast<std::size_t>(t.i)] = 1;
      break;
    case TransformKind::kReversal:
      check(t.i);
      m[static_cast<std::size_t>(t.i)][static_cast<std::size_t>(t.i)] = -1;
      break;
    case TransformKind::kSkewing:
      check(t.i);
      check(t.j);
      if (t.i == t.j) throw Error(t.label() + ": skewing needs two distinct levels");
      m[static_cast<std::size_t>(t.j)][static_cast<std::size_t>(t.i)] = std::max(t.factor, 1);
      break;
    default:
      throw Error(t.label() + " is not a unimodular transformation");
  }
  return m;
}

enum class LoopRole { kPlain, kTile, kPoint };

struct ScheduledLoop {
  int id = -1;      // shared identity
  int origin = -1;  // AST iterator node the loop derives from
  std::int64_t lo = 0;
  std::int64_t hi = 0;  // exclusive
  bool parallel = false;
  LoopRole role = LoopRole::kPlain;
  int tile = 0;  // tile size for tile/point loops

  std::int64_t extent() const { return hi - lo; }
  bool operator==(const ScheduledLoop&) const = default;
};

/// lo <= coeffs . w + constant < hi, with w the loop variables.
struct GuardForm {
  std::vector<std::int64_t> coeffs;
  std::int64_t constant = 0;
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  bool operator==(const GuardForm&) const = default;
};

/// Position-level operations replayed on dependence distances.
enum class TraceOp { kSwap, kNegate, kSkew, kTile };

struct TraceStep {
  TraceOp op = TraceOp::kSwap;
  int i = 0;
  int j = 0;
  std::int64_t factor = 0;
  std::int64_t tile_i = 0;
  std::int64_t tile_j = 0;
  bool operator==(const TraceStep&) const = default;
};

struct ScheduledNest {
  int computation = -1;
  int depth = 0;  // original nest depth
  std::vector<ScheduledLoop> loops;
  std::vector<GuardForm> guards;  // first `depth` entries: original iterators
  int unroll = 1;
  int parallel_requests = 0;
  std::vector<TraceStep> trace;
  /// Accumulated matrix over the original iteration vector; kept while the
  /// nest has not been tiled.
  std::optional<IntMatrix> unimodular;

  int loop_count() const { return static_cast<int>(loops.size()); }
  int parallel_level() const {
    for (int k = 0; k < loop_count(); ++k)
      if (loops[static_cast<std::size_t>(k)].parallel) return k;
    return -1;
  }
  int position_of(int loop_id) const {
    for (int k = 0; k < loop_count(); ++k)
      if (loops[static_cast<std::size_t>(k)].id == loop_id) return k;
    return -1;
  }
  bool tiled() const {
    return std::any_of(loops.begin(), loops.end(), [](const ScheduledLoop& l) { return l.role != LoopRole::kPlain; });
  }
  bool operator==(const ScheduledNest&) const = default;
};

struct IteratorTags {
  bool parallelized = false;
  bool reversed = false;
  bool skewed = false;
  bool tiled = false;
  bool unrolled = false;
  bool operator==(const IteratorTags&) const = default;
};

struct ScheduledProgram {
  Program program;
  Ast ast;
  std::vector<Branch> branches;
  std::vector<ScheduledNest> nests;  // one per computation, in program order
  std::vector<IteratorTags> tags;    // per AST node
  int next_loop_id = 0;

  /// Computations whose nests run under the loop.
  std::vector<int> members(int loop_id) const {
    std::vector<int> out;
    for (std::size_t c = 0; c < nests.size(); ++c)
      if (nests[c].position_of(loop_id) >= 0) out.push_back(static_cast<int>(c));
    return out;
  }

  /// Length of the common loop-id prefix of two computations.
  int shared_loops(int a, int b) const {
    const auto& la = nests[static_cast<std::size_t>(a)].loops;
    const auto& lb = nests[static_cast<std::size_t>(b)].loops;
    int k = 0;
    while (k < static_cast<int>(la.size()) && k < static_cast<int>(lb.size()) &&
           la[static_cast<std::size_t>(k)].id == lb[static_cast<std::size_t>(k)].id)
      ++k;
    return k;
  }
};

inline ScheduledProgram identity_schedule(const Program& p) {
  ScheduledProgram sp;
  sp.program = p;
  sp.ast = build_ast(p);
  sp.branches = enumerate_branches(sp.ast);
  sp.tags.assign(sp.ast.nodes.size(), IteratorTags{});
  sp.next_loop_id = sp.ast.size();
  for (std::size_t c = 0; c < p.computations.size(); ++c) {
    const auto& comp = p.computations[c];
    ScheduledNest n;
    n.computation = static_cast<int>(c);
    n.depth = comp.depth();
    const auto& path = sp.ast.path_of[c];
    for (int k = 0; k < comp.depth(); ++k) {
      const auto& it = comp.nest[static_cast<std::size_t>(k)];
      ScheduledLoop l;
      l.id = path[static_cast<std::size_t>(k)];
      l.origin = l.id;
      l.lo = it.lower;
      l.hi = it.upper;
      n.loops.push_back(l);
      GuardForm g;
      g.coeffs.assign(static_cast<std::size_t>(comp.depth()), 0);
      g.coeffs[static_cast<std::size_t>(k)] = 1;
      g.lo = it.lower;
      g.hi = it.upper;
      n.guards.push_back(g);
    }
    n.unimodular = identity_matrix(comp.depth());
    sp.nests.push_back(std::move(n));
  }
  return sp;
}

namespace transforms_detail {

inline void swap_positions(ScheduledNest& n, int i, int j) {
  std::swap(n.loops[static_cast<std::size_t>(i)], n.loops[static_cast<std::size_t>(j)]);
  for (auto& g : n.guards) std::swap(g.coeffs[static_cast<std::size_t>(i)], g.coeffs[static_cast<std::size_t>(j)]);
}

inline void negate_position(ScheduledNest& n, int i) {
  auto& l = n.loops[static_cast<std::size_t>(i)];
  const std::int64_t lo = l.lo;
  l.lo = -(l.hi - 1);
  l.hi = -lo + 1;
  for (auto& g : n.guards) g.coeffs[static_cast<std::size_t>(i)] = -g.coeffs[static_cast<std::size_t>(i)];
}

// w_j' = w_j + f * w_i
inline void skew_positions(ScheduledNest& n, int i, int j, std::int64_t f) {
  const auto& li = n.loops[static_cast<std::size_t>(i)];
  auto& lj = n.loops[static_cast<std::size_t>(j)];
  const std::int64_t a = f * li.lo;
  const std::int64_t b = f * (li.hi - 1);
  const std::int64_t lo = lj.lo + std::min(a, b);
  const std::int64_t hi = (lj.hi - 1) + std::max(a, b) + 1;
  lj.lo = lo;
  lj.hi = hi;
  for (auto& g : n.guards)
    g.coeffs[static_cast<std::size_t>(i)] -= f * g.coeffs[static_cast<std::size_t>(j)];
}

}  // namespace transforms_detail

/// Applies one transformation to the computations of the targeted branch and,
/// for loops shared with other branches, to every computation running under
/// the affected loops. Throws StructuralError when the transformation does not
/// fit the current loop structure. Dependence legality is not checked here.
inline void apply_transformation(ScheduledProgram& sp, int branch, const Transformation& t) {
  using namespace transforms_detail;
  if (branch < 0 || branch >= static_cast<int>(sp.branches.size()))
    throw StructuralError("branch " + std::to_string(branch) + " does not exist");
  const int comp = sp.branches[static_cast<std::size_t>(branch)].computations.front();
  const ScheduledNest& target = sp.nests[static_cast<std::size_t>(comp)];
  const int depth = target.loop_count();
  auto need_level = [&](int level) {
    if (level < 0 || level >= depth)
      throw StructuralError(t.label() + ": level " + std::to_string(level) + " absent from branch " +
                            std::to_string(branch) + " (" + std::to_string(depth) + " loops)");
  };
  auto loop_at = [&](int level) { return target.loops[static_cast<std::size_t>(level)]; };
  auto tag = [&](int origin) -> IteratorTags& { return sp.tags[static_cast<std::size_t>(origin)]; };

  switch (t.kind) {
    case TransformKind::kInterchange: {
      need_level(t.i);
      need_level(t.j);
      if (t.i >= t.j) throw StructuralError(t.label() + ": levels must satisfy i < j");
      const auto li = loop_at(t.i);
      const auto lj = loop_at(t.j);
      const auto mem = sp.members(li.id);
      if (mem != sp.members(lj.id))
        throw StructuralError(t.label() + ": loops are not perfectly nested across branches");
      for (int c : mem) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        swap_positions(n, t.i, t.j);
        n.trace.push_back({TraceOp::kSwap, t.i, t.j});
        if (n.unimodular) n.unimodular = matmul(unimodular_matrix(t, n.depth), *n.unimodular);
      }
      break;
    }
    case TransformKind::kReversal: {
      need_level(t.i);
      const auto li = loop_at(t.i);
      for (int c : sp.members(li.id)) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        negate_position(n, t.i);
        n.trace.push_back({TraceOp::kNegate, t.i, 0});
        if (n.unimodular) n.unimodular = matmul(unimodular_matrix(t, n.depth), *n.unimodular);
      }
      tag(li.origin).reversed = true;
      break;
    }
    case TransformKind::kSkewing: {
      need_level(t.i);
      need_level(t.j);
      if (t.i >= t.j) throw StructuralError(t.label() + ": levels must satisfy i < j");
      if (t.factor < 1) throw StructuralError(t.label() + ": unresolved skewing factor");
      const auto li = loop_at(t.i);
      const auto lj = loop_at(t.j);
      for (int c : sp.members(lj.id)) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        skew_positions(n, t.i, t.j, t.factor);
        n.trace.push_back({TraceOp::kSkew, t.i, t.j, t.factor});
        if (n.unimodular) n.unimodular = matmul(unimodular_matrix(t, n.depth), *n.unimodular);
      }
      tag(li.origin).skewed = true;
      tag(lj.origin).skewed = true;
      break;
    }
    case TransformKind::kParallelization: {
      need_level(t.i);
      const auto li = loop_at(t.i);
      for (int c : sp.members(li.id)) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        n.loops[static_cast<std::size_t>(t.i)].parallel = true;
        ++n.parallel_requests;
      }
      tag(li.origin).parallelized = true;
      break;
    }
    case TransformKind::kTiling: {
      need_level(t.i);
      need_level(t.j);
      if (t.j != t.i + 1) throw StructuralError(t.label() + ": tiling needs adjacent levels");
      if (!is_power_of_two(t.tx) || !is_power_of_two(t.ty))
        throw StructuralError(t.label() + ": tile sizes must be powers of two");
      const auto li = loop_at(t.i);
      const auto lj = loop_at(t.j);
      if (t.tx >= li.extent() || t.ty >= lj.extent())
        throw StructuralError(t.label() + ": tile size not smaller than loop extent");
      const auto mem = sp.members(li.id);
      if (mem != sp.members(lj.id))
        throw StructuralError(t.label() + ": loops are not perfectly nested across branches");
      const int ids[4] = {sp.next_loop_id, sp.next_loop_id + 1, sp.next_loop_id + 2, sp.next_loop_id + 3};
      sp.next_loop_id += 4;
      for (int c : mem) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        const auto ti = static_cast<std::int64_t>(t.tx);
        const auto tj = static_cast<std::int64_t>(t.ty);
        const ScheduledLoop oi = n.loops[static_cast<std::size_t>(t.i)];
        const ScheduledLoop oj = n.loops[static_cast<std::size_t>(t.j)];
        ScheduledLoop tile_i{ids[0], oi.origin, 0, ceil_div(oi.extent(), ti), oi.parallel, LoopRole::kTile, t.tx};
        ScheduledLoop tile_j{ids[1], oj.origin, 0, ceil_div(oj.extent(), tj), oj.parallel, LoopRole::kTile, t.ty};
        ScheduledLoop point_i{ids[2], oi.origin, 0, ti, false, LoopRole::kPoint, t.tx};
        ScheduledLoop point_j{ids[3], oj.origin, 0, tj, false, LoopRole::kPoint, t.ty};
        // A parallel flag moves to the tile loop; the point loops stay sequential.
        std::vector<ScheduledLoop> loops;
        for (int k = 0; k < t.i; ++k) loops.push_back(n.loops[static_cast<std::size_t>(k)]);
        loops.insert(loops.end(), {tile_i, tile_j, point_i, point_j});
        for (int k = t.j + 1; k < n.loop_count(); ++k) loops.push_back(n.loops[static_cast<std::size_t>(k)]);
        // v_i = lo_i + ti * t_i + p_i, v_j likewise.
        for (auto& g : n.guards) {
          const std::int64_t ci = g.coeffs[static_cast<std::size_t>(t.i)];
          const std::int64_t cj = g.coeffs[static_cast<std::size_t>(t.j)];
          std::vector<std::int64_t> coeffs;
          for (int k = 0; k < t.i; ++k) coeffs.push_back(g.coeffs[static_cast<std::size_t>(k)]);
          coeffs.insert(coeffs.end(), {ci * ti, cj * tj, ci, cj});
          for (int k = t.j + 1; k < n.loop_count(); ++k) coeffs.push_back(g.coeffs[static_cast<std::size_t>(k)]);
          g.constant += ci * oi.lo + cj * oj.lo;
          g.coeffs = std::move(coeffs);
        }
        const auto width = loops.size();
        for (int which = 0; which < 2; ++which) {
          GuardForm g;
          g.coeffs.assign(width, 0);
          g.coeffs[static_cast<std::size_t>(t.i + 2 + which)] = 1;
          g.lo = 0;
          g.hi = which == 0 ? ti : tj;
          n.guards.push_back(g);
        }
        n.loops = std::move(loops);
        n.trace.push_back({TraceOp::kTile, t.i, t.j, 0, ti, tj});
        n.unimodular.reset();
      }
      tag(li.origin).tiled = true;
      tag(lj.origin).tiled = true;
      break;
    }
    case TransformKind::kUnrolling: {
      if (!is_power_of_two(t.unroll) || t.unroll < 2)
        throw StructuralError(t.label() + ": unroll factor must be a power of two >= 2");
      if (depth == 0) throw StructuralError(t.label() + ": branch has no loops");
      const auto inner = loop_at(depth - 1);
      for (int c : sp.members(inner.id)) {
        auto& n = sp.nests[static_cast<std::size_t>(c)];
        if (n.loops.back().id != inner.id) continue;
        n.unroll = static_cast<int>(std::min<std::int64_t>(t.unroll, inner.extent()));
      }
      tag(inner.origin).unrolled = true;
      break;
    }
  }
}

/// Applies every step in order. A structural failure is rethrown with the
/// offending step index.
inline ScheduledProgram apply_schedule(const Program& p, const Schedule& s) {
  ScheduledProgram sp = identity_schedule(p);
  for (std::size_t k = 0; k < s.size(); ++k) {
    try {
      apply_transformation(sp, s[k].branch, s[k].t);
    } catch (const StructuralError& e) {
      throw StructuralError("step " + std::to_string(k) + ": " + e.what());
    }
  }
  return sp;
}

/// Number of loop iterations of a nest that pass every guard, by enumeration.
/// Intended for tests and diagnostics on small domains.
inline std::int64_t guarded_iteration_count(const ScheduledNest& n) {
  const int L = n.loop_count();
  std::vector<std::int64_t> w(static_cast<std::size_t>(L));
  std::int64_t count = 0;
  for (int k = 0; k < L; ++k) w[static_cast<std::size_t>(k)] = n.loops[static_cast<std::size_t>(k)].lo;
  if (L == 0) return 1;
  while (true) {
    bool ok = true;
    for (const auto& g : n.guards) {
      std::int64_t v = g.constant;
      for (int k = 0; k < L; ++k) v += g.coeffs[static_cast<std::size_t>(k)] * w[static_cast<std::size_t>(k)];
      if (v < g.lo || v >= g.hi) {
        ok = false;
        break;
      }
    }
    if (ok) ++count;
    int k = L - 1;
    while (k >= 0) {
      auto& x = w[static_cast<std::size_t>(k)];
      if (++x < n.loops[static_cast<std::size_t>(k)].hi) break;
      x = n.loops[static_cast<std::size_t>(k)].lo;
      --k;
    }
    if (k < 0) break;
  }
  return count;
}

}  // namespace looprl
