#pragma once

// Program representation: buffers, loop nests and affine accesses.

#include <cstdint>
#include <string>
#include <vector>

#include "looprl/util.hpp"

namespace looprl {

inline constexpr int kMaxDepth = 5;
inline constexpr int kMaxRank = 5;
inline constexpr int kDefaultMaxReads = 4;

enum class ElementKind { kFloat, kInt };

struct Buffer {
  std::string name;
  std::vector<std::int64_t> dims;
  ElementKind kind = ElementKind::kFloat;

  int rank() const { return static_cast<int>(dims.size()); }
  std::int64_t size() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const Buffer&) const = default;
};

struct Iterator {
  std::string name;
  std::int64_t lower = 0;
  std::int64_t upper = 0;  // exclusive
  int level = 0;

  std::int64_t extent() const { return upper - lower; }
  bool operator==(const Iterator&) const = default;
};

/// coeffs[k] multiplies the iterator at nest level k.
struct AffineForm {
  std::vector<std::int64_t> coeffs;
  std::int64_t constant = 0;

  std::int64_t eval(const std::vector<std::int64_t>& iters) const {
    std::int64_t v = constant;
    for (std::size_t k = 0; k < coeffs.size(); ++k) v += coeffs[k] * iters[k];
    return v;
  }
  bool operator==(const AffineForm&) const = default;
};

struct Access {
  int buffer = -1;  // index into Program::buffers
  std::vector<AffineForm> subscripts;

  bool operator==(const Access&) const = default;
};

enum class BinaryOp { kAdd, kSub, kMul, kDiv, kMin, kMax };
inline constexpr int kNumBinaryOps = 6;

enum class ExprKind { kConstant, kRead, kBinary };

/// Flat expression node; children refer to indices in Computation::expr.
struct ExprNode {
  ExprKind kind = ExprKind::kConstant;
  double value = 0.0;
  bool integer_literal = false;
  int read = -1;  // index into Computation::reads
  BinaryOp op = BinaryOp::kAdd;
  int lhs = -1;
  int rhs = -1;

  bool operator==(const ExprNode&) const = default;
};

struct Computation {
  std::string id;
  std::vector<Iterator> nest;  // outermost first
  Access write;
  std::vector<Access> reads;  // distinct read accesses
  std::vector<ExprNode> expr;
  int root = -1;

  int depth() const { return static_cast<int>(nest.size()); }
  std::int64_t domain_size() const {
    std::int64_t n = 1;
    for (const auto& it : nest) n *= it.extent();
    return n;
  }
  /// Operator counts in BinaryOp order.
  std::vector<int> op_histogram() const {
    std::vector<int> h(kNumBinaryOps, 0);
    for (const auto& n : expr)
      if (n.kind == ExprKind::kBinary) ++h[static_cast<int>(n.op)];
    return h;
  }
  bool operator==(const Computation&) const = default;
};

struct Program {
  std::string name;
  std::vector<Buffer> buffers;
  std::vector<Computation> computations;

  int buffer_index(const std::string& n) const {
    for (std::size_t i = 0; i < buffers.size(); ++i)
      if (buffers[i].name == n) return static_cast<int>(i);
    return -1;
  }
  bool operator==(const Program&) const = default;
};

inline const char* op_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::kAdd: return "+";
    case BinaryOp::kSub: return "-";
    case BinaryOp::kMul: return "*";
    case BinaryOp::kDiv: return "/";
    case BinaryOp::kMin: return "min";
    case BinaryOp::kMax: return "max";
  }
  return "?";
}

/// Limits enforced when a program is loaded for featurization / scheduling.
struct ProgramCaps {
  int max_depth = kMaxDepth;
  int max_rank = kMaxRank;
  int max_reads = kDefaultMaxReads;
};

/// Checks the structural invariants and the caps. Throws Error on violation.
inline void validate_program(const Program& p, const ProgramCaps& caps = {}) {
  if (p.computations.empty()) throw Error("program '" + p.name + "': no computations");
  for (const auto& b : p.buffers) {
    if (b.rank() < 1 || b.rank() > caps.max_rank)
      throw Error("buffer '" + b.name + "': rank " + std::to_string(b.rank()) +
                  " outside [1," + std::to_string(caps.max_rank) + "]");
    for (auto d : b.dims)
      if (d <= 0) throw Error("buffer '" + b.name + "': non-positive extent");
  }
  for (const auto& c : p.computations) {
    if (c.depth() < 1 || c.depth() > caps.max_depth)
      throw Error("computation '" + c.id + "': depth " + std::to_string(c.depth()) +
                  " outside [1," + std::to_string(caps.max_depth) + "]");
    if (static_cast<int>(c.reads.size()) > caps.max_reads)
      throw Error("computation '" + c.id + "': " + std::to_string(c.reads.size()) +
                  " reads exceed cap " + std::to_string(caps.max_reads));
    for (int k = 0; k < c.depth(); ++k) {
      const auto& it = c.nest[static_cast<std::size_t>(k)];
      if (it.upper <= it.lower)
        throw Error("iterator '" + it.name + "': empty range");
      if (it.level != k) throw Error("iterator '" + it.name + "': level mismatch");
    }
    auto check_access = [&](const Access& a) {
      if (a.buffer < 0 || a.buffer >= static_cast<int>(p.buffers.size()))
        throw Error("computation '" + c.id + "': undeclared buffer");
      if (static_cast<int>(a.subscripts.size()) != p.buffers[static_cast<std::size_t>(a.buffer)].rank())
        throw Error("computation '" + c.id + "': subscript count does not match rank of '" +
                    p.buffers[static_cast<std::size_t>(a.buffer)].name + "'");
      for (const auto& s : a.subscripts)
        if (static_cast<int>(s.coeffs.size()) != c.depth())
          throw Error("computation '" + c.id + "': malformed affine form");
    };
    check_access(c.write);
    for (const auto& r : c.reads) check_access(r);
    if (c.root < 0 || c.root >= static_cast<int>(c.expr.size()))
      throw Error("computation '" + c.id + "': missing expression");
  }
}

}  // namespace looprl
