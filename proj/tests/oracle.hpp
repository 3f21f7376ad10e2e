#pragma once

// Brute-force reference checks on small domains: enumerate every statement
// instance, find conflicting accesses element by element, and compare the
// original execution order with the scheduled one.

#include <map>
#include <vector>

#include "looprl/legality.hpp"
#include "looprl/runtime.hpp"

namespace oracle {

using looprl::Program;
using looprl::ScheduledProgram;

struct Instance {
  int comp = -1;
  std::vector<std::int64_t> x;  // original iteration vector
  std::vector<std::int64_t> w;  // loop values in the scheduled nest
};

struct Access {
  int instance = -1;
  bool write = false;
};

inline std::vector<Instance> execution_order(const ScheduledProgram& sp) {
  std::vector<Instance> out;
  looprl::Executor exec(sp, true);
  exec.set_observer([&](int c, const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& w) {
    out.push_back({c, x, w});
  });
  looprl::Memory mem = looprl::allocate(sp.program);
  exec.run(mem);
  return out;
}

inline std::int64_t flat_address(const Program& p, const looprl::Access& a, const std::vector<std::int64_t>& x) {
  const auto& b = p.buffers[static_cast<std::size_t>(a.buffer)];
  std::int64_t addr = 0;
  for (int r = 0; r < b.rank(); ++r) addr = addr * b.dims[static_cast<std::size_t>(r)] + a.subscripts[static_cast<std::size_t>(r)].eval(x);
  return addr;
}

/// Accesses per element (buffer, address) in original program order.
inline std::map<std::pair<int, std::int64_t>, std::vector<Access>> element_accesses(
    const Program& p, const std::vector<Instance>& order) {
  std::map<std::pair<int, std::int64_t>, std::vector<Access>> out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& c = p.computations[static_cast<std::size_t>(order[k].comp)];
    for (const auto& r : c.reads) out[{r.buffer, flat_address(p, r, order[k].x)}].push_back({static_cast<int>(k), false});
    out[{c.write.buffer, flat_address(p, c.write, order[k].x)}].push_back({static_cast<int>(k), true});
  }
  return out;
}

/// Conflicting pairs (earlier, later) that constrain any reordering: each write
/// against the accesses between it and the neighbouring writes.
inline std::vector<std::pair<int, int>> constraint_pairs(const Program& p, const std::vector<Instance>& order) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [elem, list] : element_accesses(p, order)) {
    int last_write = -1;
    std::vector<int> reads_since;
    for (const Access& a : list) {
      if (a.write) {
        if (last_write >= 0 && last_write != a.instance) out.emplace_back(last_write, a.instance);
        for (int r : reads_since)
          if (r != a.instance) out.emplace_back(r, a.instance);
        reads_since.clear();
        last_write = a.instance;
      } else {
        if (last_write >= 0 && last_write != a.instance) out.emplace_back(last_write, a.instance);
        reads_since.push_back(a.instance);
      }
    }
  }
  return out;
}

struct Verdict {
  bool order_preserved = true;
  bool race_free = true;
  bool single_parallel = true;  // at most one parallel loop per nest, a rule rather than a semantic fact
  bool legal() const { return order_preserved && race_free && single_parallel; }
};

/// Ground truth for a scheduled program: every constrained pair keeps its
/// order and no parallel loop separates a constrained pair.
inline Verdict brute_force_legality(const ScheduledProgram& sp) {
  const Program& p = sp.program;
  const auto original = execution_order(looprl::identity_schedule(p));
  const auto scheduled = execution_order(sp);
  std::map<std::pair<int, std::vector<std::int64_t>>, int> pos;
  for (std::size_t k = 0; k < scheduled.size(); ++k) pos[{scheduled[k].comp, scheduled[k].x}] = static_cast<int>(k);
  Verdict v;
  for (const auto& n : sp.nests) v.single_parallel = v.single_parallel && n.parallel_requests <= 1;
  for (const auto& [a, b] : constraint_pairs(p, original)) {
    const int pa = pos.at({original[static_cast<std::size_t>(a)].comp, original[static_cast<std::size_t>(a)].x});
    const int pb = pos.at({original[static_cast<std::size_t>(b)].comp, original[static_cast<std::size_t>(b)].x});
    if (pa > pb) v.order_preserved = false;
    const Instance& ia = scheduled[static_cast<std::size_t>(pa)];
    const Instance& ib = scheduled[static_cast<std::size_t>(pb)];
    const auto& la = sp.nests[static_cast<std::size_t>(ia.comp)].loops;
    const auto& lb = sp.nests[static_cast<std::size_t>(ib.comp)].loops;
    for (std::size_t k = 0; k < la.size() && k < lb.size() && la[k].id == lb[k].id; ++k) {
      if (ia.w[k] != ib.w[k]) {
        if (la[k].parallel) v.race_free = false;
        break;
      }
    }
  }
  return v;
}

/// Checks that every constrained pair of the original order is covered by a
/// dependence of `deps` (same endpoints and a box containing the distance).
inline bool dependences_cover(const Program& p, const looprl::DependenceSet& deps, std::string* missing = nullptr) {
  const auto original = execution_order(looprl::identity_schedule(p));
  const looprl::Ast ast = looprl::build_ast(p);
  for (const auto& [a, b] : constraint_pairs(p, original)) {
    const Instance& ia = original[static_cast<std::size_t>(a)];
    const Instance& ib = original[static_cast<std::size_t>(b)];
    const int shared = ia.comp == ib.comp ? static_cast<int>(ia.x.size()) : looprl::shared_levels(ast, ia.comp, ib.comp);
    if (shared == 0) continue;
    bool covered = false;
    for (const auto& d : deps.deps) {
      if (d.source != ia.comp || d.sink != ib.comp) continue;
      bool inside = true;
      for (int k = 0; k < shared; ++k)
        inside = inside && d.distance[static_cast<std::size_t>(k)].contains(ib.x[static_cast<std::size_t>(k)] - ia.x[static_cast<std::size_t>(k)]);
      if (inside) {
        covered = true;
        break;
      }
    }
    if (!covered) {
      if (missing) {
        *missing = "S" + std::to_string(ia.comp) + "->S" + std::to_string(ib.comp) + " (";
        for (int k = 0; k < shared; ++k)
          *missing += std::to_string(ib.x[static_cast<std::size_t>(k)] - ia.x[static_cast<std::size_t>(k)]) + (k + 1 < shared ? "," : ")");
      }
      return false;
    }
  }
  return true;
}

/// Random structurally valid schedule of up to `steps` transformations with
/// small tile sizes, for exercising the checks on tiny domains. Skew factors
/// are resolved against `deps`.
inline looprl::Schedule random_schedule(const Program& p, const looprl::DependenceSet& deps, looprl::Rng& rng,
                                        int steps) {
  using looprl::Transformation;
  looprl::Schedule out;
  looprl::ScheduledProgram sp = looprl::identity_schedule(p);
  for (int attempt = 0; attempt < steps * 4 && static_cast<int>(out.size()) < steps; ++attempt) {
    const int b = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(sp.branches.size()) - 1));
    const int comp = sp.branches[static_cast<std::size_t>(b)].computations.front();
    const int d = sp.nests[static_cast<std::size_t>(comp)].loop_count();
    if (d < 1) continue;
    const int i = static_cast<int>(rng.uniform_int(0, d - 1));
    const int j = d > 1 ? static_cast<int>(rng.uniform_int(0, d - 1)) : i;
    const int lo = std::min(i, j);
    const int hi = std::max(i, j);
    Transformation t;
    switch (rng.uniform_int(0, 5)) {
      case 0:
        if (lo == hi) continue;
        t = Transformation::interchange(lo, hi);
        break;
      case 1:
        t = Transformation::reversal(i);
        break;
      case 2:
        if (lo == hi) continue;
        t = Transformation::skewing(lo, hi, looprl::resolve_skew_factor(sp, deps, b, lo, hi));
        break;
      case 3:
        t = Transformation::parallelization(i);
        break;
      case 4:
        if (d < 2 || i + 1 >= d) continue;
        t = Transformation::tiling(i, i + 1, 1 << rng.uniform_int(1, 3), 1 << rng.uniform_int(1, 3));
        break;
      default:
        t = Transformation::unrolling(1 << rng.uniform_int(1, 3));
        break;
    }
    looprl::ScheduledProgram next = sp;
    try {
      looprl::apply_transformation(next, b, t);
    } catch (const looprl::StructuralError&) {
      continue;
    }
    sp = std::move(next);
    out.push_back({b, t});
  }
  return out;
}

}  // namespace oracle
