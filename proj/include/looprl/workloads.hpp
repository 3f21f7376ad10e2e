#pragma once

// Random training programs and small versions of the benchmark kernels.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "looprl/dsl.hpp"
#include "looprl/ir.hpp"

namespace looprl {

enum class Pattern { kElementwise, kStencil, kReduction, kTransposedRead };
inline constexpr int kNumPatterns = 4;

inline const char* pattern_name(Pattern p) {
  switch (p) {
    case Pattern::kElementwise: return "elementwise";
    case Pattern::kStencil: return "stencil";
    case Pattern::kReduction: return "reduction";
    case Pattern::kTransposedRead: return "transposed-read";
  }
  return "?";
}

struct GeneratorConfig {
  std::uint64_t seed = 0;
  int min_depth = 2;
  int max_depth = 5;
  int min_computations = 1;
  int max_computations = 4;
  std::vector<std::int64_t> bounds{32, 64, 128, 256, 512};
  /// elementwise, stencil, reduction, transposed-read
  std::array<double, kNumPatterns> pattern_weights{0.4, 0.25, 0.2, 0.15};
  /// Share of programs with more than one computation.
  double multi_fraction = 0.4;
  /// Probability that a computation reuses outer loops of the previous one.
  double share_probability = 0.5;
  /// Largest iteration count per computation; bounds are halved (largest
  /// first) until the nest fits.
  std::int64_t max_domain = std::int64_t{1} << 22;
  double int_fraction = 0.15;
  int max_reads = kDefaultMaxReads;

  void validate() const {
    if (min_depth < 1 || max_depth > kMaxDepth || min_depth > max_depth) throw Error("generator: bad depth range");
    if (min_computations < 1 || min_computations > max_computations) throw Error("generator: bad computation range");
    if (bounds.empty()) throw Error("generator: no bound choices");
    for (auto b : bounds)
      if (b < 1) throw Error("generator: bounds must be positive");
    double total = 0.0;
    for (double w : pattern_weights) {
      if (w < 0.0) throw Error("generator: negative pattern weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("generator: pattern weights must sum to 1");
    if (max_reads < 2) throw Error("generator: need at least two reads");
  }
};

namespace gen_detail {

struct Sub {
  int level = -1;  // -1: constant subscript
  std::int64_t offset = 0;
};

struct ProtoAccess {
  int buffer = -1;
  std::vector<Sub> subs;
};

struct ProtoComp {
  std::vector<Iterator> nest;
  ProtoAccess write;
  std::vector<ProtoAccess> reads;
  Pattern pattern = Pattern::kElementwise;
  bool accumulate = false;  // expression starts with the written element
};

class Builder {
 public:
  Builder(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {}

  Program build() {
    const bool multi = cfg_.max_computations > 1 && rng_.bernoulli(cfg_.multi_fraction);
    int count = cfg_.min_computations;
    if (multi) count = static_cast<int>(rng_.uniform_int(std::max(2, cfg_.min_computations), cfg_.max_computations));
    else count = std::max(1, std::min(cfg_.min_computations, 1));
    if (!multi && cfg_.min_computations > 1) count = cfg_.min_computations;
    int_program_ = rng_.bernoulli(cfg_.int_fraction);
    for (int k = 0; k < count; ++k) comps_.push_back(make_comp(k));
    return finish();
  }

 private:
  static constexpr const char* kNames[kMaxDepth] = {"i", "j", "k", "l", "m"};

  Pattern pick_pattern() {
    double u = rng_.uniform();
    for (int p = 0; p < kNumPatterns; ++p) {
      u -= cfg_.pattern_weights[static_cast<std::size_t>(p)];
      if (u < 0.0) return static_cast<Pattern>(p);
    }
    return Pattern::kElementwise;
  }

  int new_buffer(int rank) {
    ranks_.push_back(rank);
    return static_cast<int>(ranks_.size()) - 1;
  }

  std::vector<Iterator> make_nest(int depth, int index) {
    std::vector<Iterator> nest;
    int shared = 0;
    if (index > 0 && rng_.bernoulli(cfg_.share_probability)) {
      const auto& prev = comps_.back().nest;
      const int limit = std::min<int>(depth, static_cast<int>(prev.size()));
      if (limit >= 1) shared = static_cast<int>(rng_.uniform_int(1, limit));
      for (int l = 0; l < shared; ++l) nest.push_back(prev[static_cast<std::size_t>(l)]);
    }
    for (int l = shared; l < depth; ++l) {
      Iterator it;
      it.name = kNames[l];
      it.lower = 0;
      it.upper = cfg_.bounds[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(cfg_.bounds.size()) - 1))];
      it.level = l;
      nest.push_back(it);
    }
    // Shrink fresh loops until the domain fits.
    auto domain = [&] {
      std::int64_t n = 1;
      for (const auto& it : nest) n *= it.extent();
      return n;
    };
    while (domain() > cfg_.max_domain) {
      int widest = -1;
      for (int l = shared; l < depth; ++l)
        if (nest[static_cast<std::size_t>(l)].upper > 1 &&
            (widest < 0 || nest[static_cast<std::size_t>(l)].upper > nest[static_cast<std::size_t>(widest)].upper))
          widest = l;
      if (widest < 0) break;
      nest[static_cast<std::size_t>(widest)].upper /= 2;
    }
    // A fresh loop that happens to repeat the previous header would be fused
    // with it; that is fine, the program simply shares more loops.
    return nest;
  }

  ProtoAccess identity(int buffer, int rank) {
    ProtoAccess a{buffer, {}};
    for (int r = 0; r < rank; ++r) a.subs.push_back({r, 0});
    return a;
  }

  // An existing buffer of the given rank written by an earlier computation.
  int producer_of_rank(int rank) {
    for (auto it = comps_.rbegin(); it != comps_.rend(); ++it)
      if (ranks_[static_cast<std::size_t>(it->write.buffer)] == rank) return it->write.buffer;
    return -1;
  }

  int input_or_producer(int rank) {
    const int prod = producer_of_rank(rank);
    if (prod >= 0 && rng_.bernoulli(0.6)) return prod;
    return new_buffer(rank);
  }

  ProtoComp make_comp(int index) {
    ProtoComp c;
    c.pattern = pick_pattern();
    int depth = static_cast<int>(rng_.uniform_int(cfg_.min_depth, cfg_.max_depth));
    if ((c.pattern == Pattern::kReduction || c.pattern == Pattern::kTransposedRead) && depth < 2) depth = 2;
    depth = std::min(depth, kMaxDepth);
    c.nest = make_nest(depth, index);
    const int max_reads = cfg_.max_reads;
    switch (c.pattern) {
      case Pattern::kElementwise: {
        c.write = identity(new_buffer(depth), depth);
        const int nreads = static_cast<int>(rng_.uniform_int(1, std::min(3, max_reads)));
        for (int r = 0; r < nreads; ++r) {
          const int rank = static_cast<int>(rng_.uniform_int(1, depth));
          c.reads.push_back(identity(input_or_producer(rank), rank));
        }
        break;
      }
      case Pattern::kStencil: {
        const int dims = static_cast<int>(rng_.uniform_int(1, std::min(2, depth)));
        // Offsets apply to the innermost `dims` levels.
        if (rng_.bernoulli(0.5)) {
          // In place: write at +1 and read neighbours, which carries
          // dependences across iterations.
          const int buf = new_buffer(depth);
          c.write = identity(buf, depth);
          for (int d = depth - dims; d < depth; ++d) c.write.subs[static_cast<std::size_t>(d)].offset = 1;
          const int nreads = static_cast<int>(rng_.uniform_int(2, max_reads));
          for (int r = 0; r < nreads; ++r) {
            ProtoAccess a = identity(buf, depth);
            for (int d = depth - dims; d < depth; ++d) a.subs[static_cast<std::size_t>(d)].offset = 1;
            const int d = depth - 1 - static_cast<int>(rng_.uniform_int(0, dims - 1));
            a.subs[static_cast<std::size_t>(d)].offset = r == 0 ? 0 : r == 1 ? 2 : (rng_.bernoulli(0.7) ? 0 : 2);
            c.reads.push_back(a);
          }
        } else {
          c.write = identity(new_buffer(depth), depth);
          const int in = input_or_producer(depth);
          const int nreads = static_cast<int>(rng_.uniform_int(2, max_reads));
          for (int r = 0; r < nreads; ++r) {
            ProtoAccess a = identity(in, depth);
            const int d = depth - 1 - static_cast<int>(rng_.uniform_int(0, dims - 1));
            a.subs[static_cast<std::size_t>(d)].offset = r % 3;
            c.reads.push_back(a);
          }
        }
        break;
      }
      case Pattern::kReduction: {
        const int rank = static_cast<int>(rng_.uniform_int(1, depth - 1));
        const int acc = new_buffer(rank);
        c.write = identity(acc, rank);
        c.reads.push_back(c.write);
        c.accumulate = true;
        const int nreads = static_cast<int>(rng_.uniform_int(1, std::min(2, max_reads - 1)));
        for (int r = 0; r < nreads; ++r) c.reads.push_back(identity(input_or_producer(depth), depth));
        break;
      }
      case Pattern::kTransposedRead: {
        const int a = static_cast<int>(rng_.uniform_int(0, depth - 2));
        const int b = static_cast<int>(rng_.uniform_int(a + 1, depth - 1));
        const int out = new_buffer(depth);
        c.write = identity(out, depth);
        const int src = rng_.bernoulli(0.2) ? out : input_or_producer(depth);
        ProtoAccess t = identity(src, depth);
        std::swap(t.subs[static_cast<std::size_t>(a)], t.subs[static_cast<std::size_t>(b)]);
        c.reads.push_back(t);
        if (max_reads > 1 && rng_.bernoulli(0.5)) {
          const int rank = static_cast<int>(rng_.uniform_int(1, depth));
          c.reads.push_back(identity(input_or_producer(rank), rank));
        }
        break;
      }
    }
    // Distinct reads only.
    std::vector<ProtoAccess> uniq;
    for (auto& r : c.reads) {
      bool dup = false;
      for (const auto& u : uniq)
        if (u.buffer == r.buffer && same_subs(u, r)) dup = true;
      if (!dup) uniq.push_back(r);
    }
    c.reads = std::move(uniq);
    return c;
  }

  static bool same_subs(const ProtoAccess& a, const ProtoAccess& b) {
    if (a.subs.size() != b.subs.size()) return false;
    for (std::size_t k = 0; k < a.subs.size(); ++k)
      if (a.subs[k].level != b.subs[k].level || a.subs[k].offset != b.subs[k].offset) return false;
    return true;
  }

  Access lower(const ProtoAccess& a, int depth) const {
    Access out;
    out.buffer = a.buffer;
    for (const Sub& s : a.subs) {
      AffineForm f;
      f.coeffs.assign(static_cast<std::size_t>(depth), 0);
      if (s.level >= 0) f.coeffs[static_cast<std::size_t>(s.level)] = 1;
      f.constant = s.offset;
      out.subscripts.push_back(f);
    }
    return out;
  }

  int push_node(Computation& c, ExprNode n) {
    c.expr.push_back(n);
    return static_cast<int>(c.expr.size()) - 1;
  }

  int constant(Computation& c) {
    ExprNode n;
    n.kind = ExprKind::kConstant;
    if (int_program_) {
      n.integer_literal = true;
      n.value = static_cast<double>(rng_.uniform_int(1, 5));
    } else {
      static constexpr double kValues[] = {0.5, 0.25, 2.0, 1.5, 0.125, 3.0};
      n.value = kValues[rng_.uniform_int(0, 5)];
    }
    return push_node(c, n);
  }

  int binary(Computation& c, BinaryOp op, int a, int b) {
    ExprNode n;
    n.kind = ExprKind::kBinary;
    n.op = op;
    n.lhs = a;
    n.rhs = b;
    return push_node(c, n);
  }

  BinaryOp pick_op() {
    const double u = rng_.uniform();
    if (u < 0.4) return BinaryOp::kAdd;
    if (u < 0.6) return BinaryOp::kSub;
    if (u < 0.85) return BinaryOp::kMul;
    return rng_.bernoulli(0.5) ? BinaryOp::kMin : BinaryOp::kMax;
  }

  Program finish() {
    Program p;
    p.name = "random";
    // Buffer extents from the largest subscript value.
    std::vector<std::vector<std::int64_t>> dims(ranks_.size());
    for (std::size_t b = 0; b < ranks_.size(); ++b) dims[b].assign(static_cast<std::size_t>(ranks_[b]), 1);
    auto grow = [&](const ProtoAccess& a, const std::vector<Iterator>& nest) {
      for (std::size_t r = 0; r < a.subs.size(); ++r) {
        const Sub& s = a.subs[r];
        const std::int64_t top = (s.level >= 0 ? nest[static_cast<std::size_t>(s.level)].upper - 1 : 0) + s.offset;
        dims[static_cast<std::size_t>(a.buffer)][r] = std::max(dims[static_cast<std::size_t>(a.buffer)][r], top + 1);
      }
    };
    for (const auto& c : comps_) {
      grow(c.write, c.nest);
      for (const auto& r : c.reads) grow(r, c.nest);
    }
    for (std::size_t b = 0; b < ranks_.size(); ++b) {
      Buffer buf;
      buf.name = "b" + std::to_string(b);
      buf.dims = dims[b];
      buf.kind = int_program_ ? ElementKind::kInt : ElementKind::kFloat;
      p.buffers.push_back(buf);
    }
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const ProtoComp& pc = comps_[k];
      Computation c;
      c.id = "S" + std::to_string(k);
      c.nest = pc.nest;
      const int depth = static_cast<int>(pc.nest.size());
      c.write = lower(pc.write, depth);
      for (const auto& r : pc.reads) c.reads.push_back(lower(r, depth));
      std::vector<int> leaves;
      for (std::size_t r = 0; r < c.reads.size(); ++r) {
        ExprNode n;
        n.kind = ExprKind::kRead;
        n.read = static_cast<int>(r);
        leaves.push_back(push_node(c, n));
      }
      int root = leaves[0];
      for (std::size_t r = 1; r < leaves.size(); ++r) {
        int rhs = leaves[r];
        if (pc.accumulate && rng_.bernoulli(0.5)) rhs = binary(c, BinaryOp::kMul, rhs, constant(c));
        root = binary(c, pc.accumulate ? BinaryOp::kAdd : pick_op(), root, rhs);
      }
      if (!pc.accumulate && rng_.bernoulli(0.5)) root = binary(c, rng_.bernoulli(0.5) ? BinaryOp::kMul : BinaryOp::kAdd, root, constant(c));
      if (!int_program_ && pc.pattern == Pattern::kStencil && rng_.bernoulli(0.5)) {
        ExprNode d;
        d.kind = ExprKind::kConstant;
        d.value = static_cast<double>(c.reads.size());
        root = binary(c, BinaryOp::kDiv, root, push_node(c, d));
      }
      c.root = root;
      p.computations.push_back(std::move(c));
    }
    return p;
  }

  const GeneratorConfig& cfg_;
  Rng& rng_;
  std::vector<int> ranks_;
  std::vector<ProtoComp> comps_;
  bool int_program_ = false;
};

}  // namespace gen_detail

/// Deterministic in cfg.seed.
inline Program generate_random_program(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  gen_detail::Builder b(cfg, rng);
  Program p = b.build();
  p.name = "random_" + std::to_string(cfg.seed);
  validate_program(p, ProgramCaps{kMaxDepth, kMaxRank, cfg.max_reads});
  return p;
}

/// Sizes for the benchmark kernels. `n` is the 2-D problem edge; the other
/// kernels derive their sizes from it.
struct BenchmarkSizes {
  std::int64_t n = 256;
};

/// Small versions of blur, cvtcolor, doitgen, heat2d, heat3d, jacobi2d, mvt
/// and seidel2d. Kernels whose statement would exceed four distinct reads are
/// split into several computations.
inline std::vector<std::pair<std::string, Program>> benchmark_suite(const BenchmarkSizes& sz = {}) {
  const std::int64_t n = sz.n;
  const std::int64_t c = std::max<std::int64_t>(8, n / 8);    // doitgen edge
  const std::int64_t h = std::max<std::int64_t>(8, n / 4);    // heat3d edge
  const std::int64_t m = n * 2;                               // mvt edge
  auto S = [](std::int64_t v) { return std::to_string(v); };
  std::vector<std::pair<std::string, std::string>> src;
  src.emplace_back("blur",
                   "program blur;\n"
                   "buffer img[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "buffer bx[" + S(n + 2) + "][" + S(n) + "] float;\n"
                   "buffer out[" + S(n) + "][" + S(n) + "] float;\n"
                   "for i in 0.." + S(n + 2) + " { for j in 0.." + S(n) + " {\n"
                   "  bx[i][j] = (img[i][j] + img[i][j + 1] + img[i][j + 2]) / 3.0;\n"
                   "} }\n"
                   "for y in 0.." + S(n) + " { for x in 0.." + S(n) + " {\n"
                   "  out[y][x] = (bx[y][x] + bx[y + 1][x] + bx[y + 2][x]) / 3.0;\n"
                   "} }\n");
  src.emplace_back("cvtcolor",
                   "program cvtcolor;\n"
                   "buffer img[3][" + S(n) + "][" + S(n) + "] float;\n"
                   "buffer w[3] float;\n"
                   "buffer out[3][" + S(n) + "][" + S(n) + "] float;\n"
                   "for c in 0..3 { for i in 0.." + S(n) + " { for j in 0.." + S(n) + " {\n"
                   "  out[c][i][j] = min(max(img[c][i][j] * w[c] + 0.5, 0.0), 255.0);\n"
                   "} } }\n");
  src.emplace_back("doitgen",
                   "program doitgen;\n"
                   "buffer A[" + S(c) + "][" + S(c) + "][" + S(c) + "] float;\n"
                   "buffer C4[" + S(c) + "][" + S(c) + "] float;\n"
                   "buffer sum[" + S(c) + "][" + S(c) + "][" + S(c) + "] float;\n"
                   "for r in 0.." + S(c) + " { for q in 0.." + S(c) + " {\n"
                   "  for p in 0.." + S(c) + " {\n"
                   "    sum[r][q][p] = 0.0;\n"
                   "    for s in 0.." + S(c) + " { sum[r][q][p] = sum[r][q][p] + A[r][q][s] * C4[s][p]; }\n"
                   "  }\n"
                   "  for p2 in 0.." + S(c) + " { A[r][q][p2] = sum[r][q][p2]; }\n"
                   "} }\n");
  src.emplace_back("heat2d",
                   "program heat2d;\n"
                   "buffer A[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "buffer T[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "buffer B[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "for i in 1.." + S(n + 1) + " { for j in 1.." + S(n + 1) + " {\n"
                   "  T[i][j] = A[i + 1][j] - 2.0 * A[i][j] + A[i - 1][j];\n"
                   "  B[i][j] = 0.125 * T[i][j] + 0.125 * (A[i][j + 1] - 2.0 * A[i][j] + A[i][j - 1]) + A[i][j];\n"
                   "} }\n");
  src.emplace_back("heat3d",
                   "program heat3d;\n"
                   "buffer A[" + S(h + 2) + "][" + S(h + 2) + "][" + S(h + 2) + "] float;\n"
                   "buffer T[" + S(h + 2) + "][" + S(h + 2) + "][" + S(h + 2) + "] float;\n"
                   "buffer U[" + S(h + 2) + "][" + S(h + 2) + "][" + S(h + 2) + "] float;\n"
                   "buffer B[" + S(h + 2) + "][" + S(h + 2) + "][" + S(h + 2) + "] float;\n"
                   "for i in 1.." + S(h + 1) + " { for j in 1.." + S(h + 1) + " { for k in 1.." + S(h + 1) + " {\n"
                   "  T[i][j][k] = A[i + 1][j][k] - 2.0 * A[i][j][k] + A[i - 1][j][k];\n"
                   "  U[i][j][k] = T[i][j][k] + A[i][j + 1][k] - 2.0 * A[i][j][k] + A[i][j - 1][k];\n"
                   "  B[i][j][k] = 0.125 * (U[i][j][k] + A[i][j][k + 1] - 2.0 * A[i][j][k] + A[i][j][k - 1]);\n"
                   "} } }\n");
  src.emplace_back("jacobi2d",
                   "program jacobi2d;\n"
                   "buffer A[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "buffer T[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "buffer B[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "for i in 1.." + S(n + 1) + " { for j in 1.." + S(n + 1) + " {\n"
                   "  T[i][j] = A[i][j] + A[i - 1][j] + A[i + 1][j];\n"
                   "  B[i][j] = 0.2 * (T[i][j] + A[i][j - 1] + A[i][j + 1]);\n"
                   "} }\n");
  src.emplace_back("mvt",
                   "program mvt;\n"
                   "buffer A[" + S(m) + "][" + S(m) + "] float;\n"
                   "buffer x1[" + S(m) + "] float;\n"
                   "buffer x2[" + S(m) + "] float;\n"
                   "buffer y1[" + S(m) + "] float;\n"
                   "buffer y2[" + S(m) + "] float;\n"
                   "for i in 0.." + S(m) + " { for j in 0.." + S(m) + " {\n"
                   "  x1[i] = x1[i] + A[i][j] * y1[j];\n"
                   "} }\n"
                   "for i2 in 0.." + S(m) + " { for j2 in 0.." + S(m) + " {\n"
                   "  x2[i2] = x2[i2] + A[j2][i2] * y2[j2];\n"
                   "} }\n");
  src.emplace_back("seidel2d",
                   "program seidel2d;\n"
                   "buffer A[" + S(n + 2) + "][" + S(n + 2) + "] float;\n"
                   "for t in 0..4 { for i in 1.." + S(n + 1) + " { for j in 1.." + S(n + 1) + " {\n"
                   "  A[i][j] = (A[i - 1][j] + A[i][j - 1] + A[i + 1][j] + A[i][j + 1]) * 0.25;\n"
                   "} } }\n");
  std::vector<std::pair<std::string, Program>> out;
  for (const auto& [name, text] : src) out.emplace_back(name, parse_program(text));
  return out;
}

}  // namespace looprl
