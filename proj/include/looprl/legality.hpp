#pragma once

// Dependence analysis and schedule legality.
//
// Distances are boxes of integer intervals, one per loop level shared by the
// two computations. Pairs whose subscripts differ by a constant yield exact
// distances; anything else falls back to ranges after a GCD / bounds
// existence test. Legality replays each computation's transformation trace on
// the boxes and requires every resulting vector to stay lexicographically
// non-negative, and no parallel loop to carry a dependence.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "looprl/ast.hpp"
#include "looprl/ir.hpp"
#include "looprl/transforms.hpp"

namespace looprl {

inline constexpr std::int64_t kInf = std::int64_t{1} << 50;

inline std::int64_t saturate(std::int64_t v) { return std::clamp(v, -kInf, kInf); }

struct Interval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  static Interval point(std::int64_t v) { return {v, v}; }
  static Interval all() { return {-kInf, kInf}; }
  bool empty() const { return lo > hi; }
  bool contains(std::int64_t v) const { return lo <= v && v <= hi; }
  bool is_point() const { return lo == hi; }
  bool is_zero() const { return lo == 0 && hi == 0; }
  Interval intersect(const Interval& o) const { return {std::max(lo, o.lo), std::min(hi, o.hi)}; }
  Interval negated() const { return {saturate(-hi), saturate(-lo)}; }
  Interval scaled(std::int64_t f) const {
    const std::int64_t a = saturate(lo * f);
    const std::int64_t b = saturate(hi * f);
    return {std::min(a, b), std::max(a, b)};
  }
  Interval operator+(const Interval& o) const { return {saturate(lo + o.lo), saturate(hi + o.hi)}; }
  bool operator==(const Interval&) const = default;
};

using DistanceBox = std::vector<Interval>;

inline std::string to_string(const DistanceBox& d) {
  auto bound = [](std::int64_t v) {
    if (v >= kInf) return std::string("+inf");
    if (v <= -kInf) return std::string("-inf");
    return std::to_string(v);
  };
  std::string out = "(";
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (k) out += ",";
    out += d[k].is_point() ? bound(d[k].lo) : "[" + bound(d[k].lo) + "," + bound(d[k].hi) + "]";
  }
  return out + ")";
}

enum class DepKind { kFlow, kAnti, kOutput };

struct DependenceVector {
  int source = -1;  // computation index executed first in program order
  int sink = -1;
  DepKind kind = DepKind::kFlow;
  int buffer = -1;
  DistanceBox distance;  // one entry per shared loop level
  bool exact = true;     // every component is a single known value

  bool intra() const { return source == sink; }
  bool unknown(std::size_t level) const { return !distance[level].is_point(); }
};

struct DependenceSet {
  std::vector<DependenceVector> deps;
  std::size_t size() const { return deps.size(); }
};

namespace dep_detail {

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;
  static Fraction make(std::int64_t n, std::int64_t d) {
    if (d < 0) {
      n = -n;
      d = -d;
    }
    const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    return g > 1 ? Fraction{n / g, d / g} : Fraction{n, d};
  }
  bool zero() const { return num == 0; }
  Fraction operator-(const Fraction& o) const { return make(num * o.den - o.num * den, den * o.den); }
  Fraction operator*(const Fraction& o) const { return make(num * o.num, den * o.den); }
  Fraction operator/(const Fraction& o) const { return make(num * o.den, den * o.num); }
};

// Outcome of solving C * delta = b over the shared levels.
struct Solve {
  bool feasible = true;
  std::vector<std::optional<std::int64_t>> pinned;  // value when uniquely determined
};

inline Solve solve_uniform(const std::vector<std::vector<std::int64_t>>& C, const std::vector<std::int64_t>& b,
                           int cols) {
  Solve out;
  out.pinned.assign(static_cast<std::size_t>(cols), std::nullopt);
  const std::size_t rows = C.size();
  std::vector<std::vector<Fraction>> m(rows, std::vector<Fraction>(static_cast<std::size_t>(cols) + 1));
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m[r][static_cast<std::size_t>(c)] = Fraction::make(C[r][static_cast<std::size_t>(c)], 1);
    m[r][static_cast<std::size_t>(cols)] = Fraction::make(b[r], 1);
  }
  // Reduced row echelon form.
  std::vector<int> pivot_col;
  std::size_t row = 0;
  for (int c = 0; c < cols && row < rows; ++c) {
    std::size_t sel = row;
    while (sel < rows && m[sel][static_cast<std::size_t>(c)].zero()) ++sel;
    if (sel == rows) continue;
    std::swap(m[sel], m[row]);
    const Fraction p = m[row][static_cast<std::size_t>(c)];
    for (auto& v : m[row]) v = v / p;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == row || m[r][static_cast<std::size_t>(c)].zero()) continue;
      const Fraction f = m[r][static_cast<std::size_t>(c)];
      for (std::size_t k = 0; k <= static_cast<std::size_t>(cols); ++k) m[r][k] = m[r][k] - f * m[row][k];
    }
    pivot_col.push_back(c);
    ++row;
  }
  for (std::size_t r = row; r < rows; ++r)
    if (!m[r][static_cast<std::size_t>(cols)].zero()) {
      out.feasible = false;
      return out;
    }
  for (std::size_t r = 0; r < pivot_col.size(); ++r) {
    bool alone = true;
    for (int c = 0; c < cols; ++c)
      if (c != pivot_col[r] && !m[r][static_cast<std::size_t>(c)].zero()) alone = false;
    if (!alone) continue;
    const Fraction v = m[r][static_cast<std::size_t>(cols)];
    if (v.den != 1) {
      out.feasible = false;
      return out;
    }
    out.pinned[static_cast<std::size_t>(pivot_col[r])] = v.num;
  }
  return out;
}

// GCD and bounds test for sum_k a_k x_k == rhs with x_k in [lo_k, hi_k].
inline bool may_have_solution(const std::vector<std::int64_t>& a, const std::vector<Interval>& box, std::int64_t rhs) {
  std::int64_t g = 0;
  std::int64_t mn = 0;
  std::int64_t mx = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] == 0) continue;
    g = std::gcd(g, a[k] < 0 ? -a[k] : a[k]);
    const std::int64_t p = a[k] * box[k].lo;
    const std::int64_t q = a[k] * box[k].hi;
    mn += std::min(p, q);
    mx += std::max(p, q);
  }
  if (g == 0) return rhs == 0;
  if (rhs % g != 0) return false;
  return mn <= rhs && rhs <= mx;
}

struct PairBox {
  DistanceBox box;
  bool exact = true;
};

// Distances x_t - x_s over the first `shared` levels for instances where the
// two accesses touch the same element. nullopt when provably independent.
inline std::optional<PairBox> conflict_box(const Computation& s, const Access& as, const Computation& t,
                                           const Access& at, int shared) {
  std::vector<std::vector<std::int64_t>> C;
  std::vector<std::int64_t> b;
  bool all_uniform = true;
  std::vector<bool> touched(static_cast<std::size_t>(shared), false);
  for (std::size_t r = 0; r < as.subscripts.size(); ++r) {
    const AffineForm& f = as.subscripts[r];
    const AffineForm& g = at.subscripts[r];
    bool uniform = true;
    for (int k = 0; k < s.depth(); ++k)
      if (k >= shared ? f.coeffs[static_cast<std::size_t>(k)] != 0
                      : f.coeffs[static_cast<std::size_t>(k)] != g.coeffs[static_cast<std::size_t>(k)])
        uniform = false;
    for (int k = shared; k < t.depth(); ++k)
      if (g.coeffs[static_cast<std::size_t>(k)] != 0) uniform = false;
    if (uniform) {
      C.emplace_back(f.coeffs.begin(), f.coeffs.begin() + shared);
      b.push_back(f.constant - g.constant);
      continue;
    }
    all_uniform = false;
    // f(x_s) - g(x_t) = 0 over independent instance vectors.
    std::vector<std::int64_t> a;
    std::vector<Interval> box;
    for (int k = 0; k < s.depth(); ++k) {
      a.push_back(f.coeffs[static_cast<std::size_t>(k)]);
      box.push_back({s.nest[static_cast<std::size_t>(k)].lower, s.nest[static_cast<std::size_t>(k)].upper - 1});
      if (k < shared && f.coeffs[static_cast<std::size_t>(k)] != 0) touched[static_cast<std::size_t>(k)] = true;
    }
    for (int k = 0; k < t.depth(); ++k) {
      a.push_back(-g.coeffs[static_cast<std::size_t>(k)]);
      box.push_back({t.nest[static_cast<std::size_t>(k)].lower, t.nest[static_cast<std::size_t>(k)].upper - 1});
      if (k < shared && g.coeffs[static_cast<std::size_t>(k)] != 0) touched[static_cast<std::size_t>(k)] = true;
    }
    if (!may_have_solution(a, box, g.constant - f.constant)) return std::nullopt;
  }
  PairBox out;
  out.exact = all_uniform;
  Solve sol;
  if (!C.empty()) {
    sol = solve_uniform(C, b, shared);
    if (!sol.feasible) return std::nullopt;
  } else {
    sol.pinned.assign(static_cast<std::size_t>(shared), std::nullopt);
  }
  for (int k = 0; k < shared; ++k) {
    const std::int64_t e = s.nest[static_cast<std::size_t>(k)].extent();
    const Interval range{-(e - 1), e - 1};
    const auto& pin = sol.pinned[static_cast<std::size_t>(k)];
    if (pin) {
      if (!range.contains(*pin)) return std::nullopt;
      out.box.push_back(Interval::point(*pin));
      continue;
    }
    out.box.push_back(range);
    // A level that no subscript depends on ranges over its whole extent, so
    // the box is still exact there.
    bool free_level = !touched[static_cast<std::size_t>(k)];
    for (const auto& row : C)
      if (row[static_cast<std::size_t>(k)] != 0) free_level = false;
    if (!free_level) out.exact = false;
  }
  return out;
}

inline DepKind kind_of(bool source_writes, bool sink_writes) {
  if (source_writes && sink_writes) return DepKind::kOutput;
  return source_writes ? DepKind::kFlow : DepKind::kAnti;
}

}  // namespace dep_detail

/// Common iterator prefix length of two computations in the loop tree.
inline int shared_levels(const Ast& ast, int a, int b) {
  const auto& pa = ast.path_of[static_cast<std::size_t>(a)];
  const auto& pb = ast.path_of[static_cast<std::size_t>(b)];
  int k = 0;
  while (k < static_cast<int>(pa.size()) && k < static_cast<int>(pb.size()) &&
         pa[static_cast<std::size_t>(k)] == pb[static_cast<std::size_t>(k)])
    ++k;
  return k;
}

inline DependenceSet compute_dependences(const Program& p) {
  using namespace dep_detail;
  const Ast ast = build_ast(p);
  DependenceSet out;
  auto push = [&](DependenceVector d) {
    for (const auto& e : out.deps)
      if (e.source == d.source && e.sink == d.sink && e.distance == d.distance) return;
    d.exact = d.exact && std::all_of(d.distance.begin(), d.distance.end(), [](const Interval& v) { return v.is_point(); });
    out.deps.push_back(std::move(d));
  };
  const int n = static_cast<int>(p.computations.size());
  for (int s = 0; s < n; ++s) {
    for (int t = s; t < n; ++t) {
      const Computation& cs = p.computations[static_cast<std::size_t>(s)];
      const Computation& ct = p.computations[static_cast<std::size_t>(t)];
      const int shared = s == t ? cs.depth() : shared_levels(ast, s, t);
      if (shared == 0) continue;  // separate nests: program order is never changed
      struct Pair {
        const Access* a;
        bool a_writes;
        const Access* b;
        bool b_writes;
      };
      std::vector<Pair> pairs;
      pairs.push_back({&cs.write, true, &ct.write, true});
      for (const auto& r : ct.reads) pairs.push_back({&cs.write, true, &r, false});
      if (s != t)
        for (const auto& r : cs.reads) pairs.push_back({&r, false, &ct.write, true});
      for (const Pair& pr : pairs) {
        if (pr.a->buffer != pr.b->buffer) continue;
        auto box = conflict_box(cs, *pr.a, ct, *pr.b, shared);
        if (!box) continue;
        const DistanceBox& D = box->box;
        // Lexicographically positive parts: s first.
        for (int k = 0; k < shared; ++k) {
          bool prefix_zero = true;
          for (int q = 0; q < k; ++q) prefix_zero = prefix_zero && D[static_cast<std::size_t>(q)].contains(0);
          if (!prefix_zero) break;
          const Interval pos = D[static_cast<std::size_t>(k)].intersect({1, kInf});
          if (!pos.empty()) {
            DependenceVector d{s, t, kind_of(pr.a_writes, pr.b_writes), pr.a->buffer, {}, box->exact};
            for (int q = 0; q < k; ++q) d.distance.push_back(Interval::point(0));
            d.distance.push_back(pos);
            for (int q = k + 1; q < shared; ++q) d.distance.push_back(D[static_cast<std::size_t>(q)]);
            push(std::move(d));
          }
          const Interval neg = D[static_cast<std::size_t>(k)].intersect({-kInf, -1});
          if (!neg.empty()) {
            DependenceVector d{t, s, kind_of(pr.b_writes, pr.a_writes), pr.a->buffer, {}, box->exact};
            for (int q = 0; q < k; ++q) d.distance.push_back(Interval::point(0));
            d.distance.push_back(neg.negated());
            for (int q = k + 1; q < shared; ++q) d.distance.push_back(D[static_cast<std::size_t>(q)].negated());
            push(std::move(d));
          }
        }
        const bool zero_possible =
            std::all_of(D.begin(), D.end(), [](const Interval& v) { return v.contains(0); });
        if (zero_possible && s != t) {
          DependenceVector d{s, t, kind_of(pr.a_writes, pr.b_writes), pr.a->buffer,
                             DistanceBox(static_cast<std::size_t>(shared), Interval::point(0)), box->exact};
          push(std::move(d));
        }
      }
    }
  }
  return out;
}

/// Interval product M * d; vectors shorter than M are padded with zeros.
inline std::vector<DistanceBox> transformed_distances(const DependenceSet& deps, const IntMatrix& M) {
  std::vector<DistanceBox> out;
  for (const auto& d : deps.deps) {
    DistanceBox v = d.distance;
    v.resize(M.size(), Interval::point(0));
    DistanceBox r(M.size(), Interval::point(0));
    for (std::size_t i = 0; i < M.size(); ++i)
      for (std::size_t k = 0; k < M[i].size() && k < v.size(); ++k)
        if (M[i][k] != 0) r[i] = r[i] + v[k].scaled(M[i][k]);
    out.push_back(std::move(r));
  }
  return out;
}

namespace dep_detail {

struct TileCase {
  Interval tile;
  Interval point;
};

// Splits a distance along a tiled loop (v = T t + p, 0 <= p < T) into the
// cases tile distance < 0, == 0 and > 0.
inline std::vector<TileCase> split_tiled(const Interval& d, std::int64_t T) {
  std::vector<TileCase> out;
  const std::int64_t kmin = d.lo <= -kInf ? -kInf : ceil_div(d.lo - (T - 1), T);
  const std::int64_t kmax = d.hi >= kInf ? kInf : floor_div(d.hi + (T - 1), T);
  const Interval span{-(T - 1), T - 1};
  if (kmin <= -1) {
    const std::int64_t k2 = std::min<std::int64_t>(kmax, -1);
    Interval p{saturate(d.lo - k2 * T), saturate(d.hi - saturate(kmin * T))};
    out.push_back({{kmin, k2}, p.intersect(span)});
  }
  if (kmin <= 0 && kmax >= 0) out.push_back({Interval::point(0), d.intersect(span)});
  if (kmax >= 1) {
    const std::int64_t k1 = std::max<std::int64_t>(kmin, 1);
    Interval p{saturate(d.lo - saturate(kmax * T)), saturate(d.hi - k1 * T)};
    out.push_back({{k1, kmax}, p.intersect(span)});
  }
  std::erase_if(out, [](const TileCase& c) { return c.point.empty() || c.tile.empty(); });
  return out;
}

}  // namespace dep_detail

/// Replays the transformation trace of `nest` on a distance box. Tiling may
/// split a box into several cases.
inline std::vector<DistanceBox> replay_trace(const ScheduledNest& nest, const DistanceBox& start) {
  std::vector<DistanceBox> cur{start};
  for (const TraceStep& op : nest.trace) {
    std::vector<DistanceBox> next;
    for (DistanceBox& v : cur) {
      const auto i = static_cast<std::size_t>(op.i);
      const auto j = static_cast<std::size_t>(op.j);
      switch (op.op) {
        case TraceOp::kSwap: std::swap(v[i], v[j]); next.push_back(std::move(v)); break;
        case TraceOp::kNegate: v[i] = v[i].negated(); next.push_back(std::move(v)); break;
        case TraceOp::kSkew: v[j] = v[j] + v[i].scaled(op.factor); next.push_back(std::move(v)); break;
        case TraceOp::kTile: {
          const auto ci = dep_detail::split_tiled(v[i], op.tile_i);
          const auto cj = dep_detail::split_tiled(v[j], op.tile_j);
          for (const auto& a : ci) {
            for (const auto& b : cj) {
              DistanceBox w(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i));
              w.insert(w.end(), {a.tile, b.tile, a.point, b.point});
              w.insert(w.end(), v.begin() + static_cast<std::ptrdiff_t>(j) + 1, v.end());
              next.push_back(std::move(w));
            }
          }
          break;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

/// Distance vectors of a dependence in the scheduled loop space, restricted to
/// the loops both endpoints run under.
inline std::vector<DistanceBox> scheduled_distances(const ScheduledProgram& sp, const DependenceVector& d) {
  const ScheduledNest& sink = sp.nests[static_cast<std::size_t>(d.sink)];
  DistanceBox start = d.distance;
  start.resize(static_cast<std::size_t>(sink.depth), Interval::all());
  auto cases = replay_trace(sink, start);
  const int common = d.intra() ? sink.loop_count() : sp.shared_loops(d.source, d.sink);
  for (auto& v : cases) v.resize(static_cast<std::size_t>(common));
  return cases;
}

struct LegalityVerdict {
  bool legal = true;
  bool structural = false;  // failed because the transformation did not fit
  std::string reason;
};

/// Whole-schedule check: every dependence stays lexicographically
/// non-negative and no parallel loop carries one.
inline LegalityVerdict schedule_legality(const ScheduledProgram& sp, const DependenceSet& deps) {
  for (const auto& n : sp.nests) {
    int flags = 0;
    for (const auto& l : n.loops) flags += l.parallel ? 1 : 0;
    if (n.parallel_requests > 1 || flags > 1)
      return {false, false, "computation " + sp.program.computations[static_cast<std::size_t>(n.computation)].id +
                                " would have a second parallel loop"};
  }
  for (const auto& d : deps.deps) {
    const ScheduledNest& sink = sp.nests[static_cast<std::size_t>(d.sink)];
    for (const DistanceBox& v : scheduled_distances(sp, d)) {
      auto describe = [&](const char* what) {
        return std::string(what) + " " + sp.program.computations[static_cast<std::size_t>(d.source)].id + "->" +
               sp.program.computations[static_cast<std::size_t>(d.sink)].id + " " + to_string(v);
      };
      bool decided = false;
      for (const Interval& c : v) {
        if (c.lo > 0) {
          decided = true;
          break;
        }
        if (c.lo < 0) return {false, false, describe("dependence reversed:")};
      }
      if (!decided && !d.intra() && d.source > d.sink)
        return {false, false, describe("dependence reversed:")};
      bool outer_zero = true;
      for (std::size_t k = 0; k < v.size() && outer_zero; ++k) {
        if (sink.loops[k].parallel && !v[k].is_zero())
          return {false, false, describe("parallel loop carries dependence")};
        outer_zero = v[k].contains(0);
      }
    }
  }
  return {};
}

/// Legality of appending `action` (targeting `branch`) to a legal prefix.
inline LegalityVerdict check_legality(const Program& p, const Schedule& prefix, const Transformation& action,
                                      int branch, const DependenceSet& deps) {
  ScheduledProgram sp = apply_schedule(p, prefix);
  try {
    apply_transformation(sp, branch, action);
  } catch (const StructuralError& e) {
    return {false, true, e.what()};
  }
  return schedule_legality(sp, deps);
}

inline LegalityVerdict check_legality(const Program& p, const Schedule& prefix, const Transformation& action,
                                      int branch) {
  return check_legality(p, prefix, action, branch, compute_dependences(p));
}

/// Smallest factor in 1..4 that leaves the components at levels i and j
/// non-negative for every dependence not already carried by an outer loop of
/// the skewed nest; 1 when none does.
inline int resolve_skew_factor(const ScheduledProgram& sp, const DependenceSet& deps, int branch, int i, int j) {
  if (branch < 0 || branch >= static_cast<int>(sp.branches.size())) return 1;
  const int comp = sp.branches[static_cast<std::size_t>(branch)].computations.front();
  const auto& target = sp.nests[static_cast<std::size_t>(comp)];
  if (i < 0 || j <= i || j >= target.loop_count()) return 1;
  const auto mem = sp.members(target.loops[static_cast<std::size_t>(j)].id);
  std::vector<std::pair<Interval, Interval>> relevant;
  for (const auto& d : deps.deps) {
    if (std::find(mem.begin(), mem.end(), d.sink) == mem.end()) continue;
    for (const DistanceBox& v : scheduled_distances(sp, d)) {
      if (static_cast<int>(v.size()) <= j) continue;
      bool outer_zero = true;
      for (int k = 0; k < i; ++k) outer_zero = outer_zero && v[static_cast<std::size_t>(k)].contains(0);
      if (!outer_zero) continue;
      relevant.emplace_back(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }
  for (int f = 1; f <= 4; ++f) {
    bool ok = true;
    for (const auto& [di, dj] : relevant) {
      if (di.lo < 0 || saturate(dj.lo + saturate(f * di.lo)) < 0) {
        ok = false;
        break;
      }
    }
    if (ok) return f;
  }
  return 1;
}

}  // namespace looprl
