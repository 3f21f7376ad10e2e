#pragma once

// Graph observation: one row per AST node, undirected parent-child edges.
//
// Iterator rows describe the loop currently at that node's position in the
// scheduled nest, so interchange and tiling show up in the bounds as well as
// in the tags. Computation rows carry the original access matrices.

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "looprl/ast.hpp"
#include "looprl/transforms.hpp"

namespace looprl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureLayout {
  static constexpr int kKind = 0;
  static constexpr int kFocus = 1;
  static constexpr int kTags = 2;  // parallelized, reversed, skewed, tiled, unrolled
  static constexpr int kLower = 7;
  static constexpr int kExtent = 8;
  static constexpr int kLevel = 9;
  static constexpr int kBlockRows = kMaxRank;
  static constexpr int kBlockCols = kMaxDepth + 1;
  static constexpr int kBlock = kBlockRows * kBlockCols;  // 30
  static constexpr int kWrite = 10;
  static constexpr int kReads = kWrite + kBlock;  // 40
  static constexpr int kMaxReads = 4;
  static constexpr int kReadCount = kReads + kMaxReads * kBlock;  // 160
  static constexpr int kOps = kReadCount + 1;                      // 161
  static constexpr int kUsed = kOps + 6;                           // 167
  static constexpr int kWidth = 176;
  static_assert(kUsed <= kWidth);
};

struct GraphObservation {
  RowMatrix x;                            // nodes x FeatureLayout::kWidth
  std::vector<std::pair<int, int>> edges;  // (parent, child)
  std::vector<int> node_of_row;            // AST node id per row
  int branch = 0;

  int nodes() const { return static_cast<int>(x.rows()); }
};

namespace feat_detail {

inline double signed_log(double v, double scale) {
  const double m = std::log2(1.0 + std::abs(v)) / scale;
  return v < 0 ? -m : m;
}

inline void write_block(RowMatrix& x, int row, int col, const Access& a, int depth) {
  for (std::size_t r = 0; r < a.subscripts.size() && r < static_cast<std::size_t>(FeatureLayout::kBlockRows); ++r) {
    const AffineForm& f = a.subscripts[r];
    const int base = col + static_cast<int>(r) * FeatureLayout::kBlockCols;
    for (int k = 0; k < depth && k < kMaxDepth; ++k) x(row, base + k) = static_cast<double>(f.coeffs[static_cast<std::size_t>(k)]);
    x(row, base + FeatureLayout::kBlockCols - 1) = signed_log(static_cast<double>(f.constant), 4.0);
  }
}

}  // namespace feat_detail

/// Observation of `sp` with the focus on `branch`. Throws Error on programs
/// outside the feature caps.
inline GraphObservation featurize(const ScheduledProgram& sp, int branch) {
  using L = FeatureLayout;
  const Program& p = sp.program;
  const Ast& ast = sp.ast;
  if (branch < 0 || branch >= static_cast<int>(sp.branches.size())) throw Error("featurize: branch out of range");
  for (const auto& c : p.computations) {
    if (c.depth() > kMaxDepth) throw Error("featurize: computation '" + c.id + "' deeper than " + std::to_string(kMaxDepth));
    if (static_cast<int>(c.reads.size()) > L::kMaxReads)
      throw Error("featurize: computation '" + c.id + "' has more than " + std::to_string(L::kMaxReads) + " reads");
  }
  for (const auto& b : p.buffers)
    if (b.rank() > kMaxRank) throw Error("featurize: buffer '" + b.name + "' rank above " + std::to_string(kMaxRank));

  GraphObservation obs;
  obs.branch = branch;
  obs.x = RowMatrix::Zero(ast.size(), L::kWidth);
  obs.node_of_row.resize(static_cast<std::size_t>(ast.size()));
  const Branch& focus = sp.branches[static_cast<std::size_t>(branch)];

  // First computation below each iterator node, to find its scheduled loop.
  std::vector<int> comp_below(static_cast<std::size_t>(ast.size()), -1);
  for (std::size_t c = 0; c < ast.path_of.size(); ++c)
    for (int n : ast.path_of[c])
      if (comp_below[static_cast<std::size_t>(n)] < 0) comp_below[static_cast<std::size_t>(n)] = static_cast<int>(c);

  for (int n = 0; n < ast.size(); ++n) {
    const AstNode& node = ast.nodes[static_cast<std::size_t>(n)];
    obs.node_of_row[static_cast<std::size_t>(n)] = n;
    if (node.parent >= 0) obs.edges.emplace_back(node.parent, n);
    if (node.kind == NodeKind::kIterator) {
      obs.x(n, L::kKind) = 0.0;
      for (int it : focus.iterators)
        if (it == n) obs.x(n, L::kFocus) = 1.0;
      const ScheduledNest& nest = sp.nests[static_cast<std::size_t>(comp_below[static_cast<std::size_t>(n)])];
      const ScheduledLoop& loop = nest.loops[static_cast<std::size_t>(node.level)];
      const IteratorTags& tags = sp.tags[static_cast<std::size_t>(loop.origin)];
      obs.x(n, L::kTags + 0) = tags.parallelized ? 1.0 : 0.0;
      obs.x(n, L::kTags + 1) = tags.reversed ? 1.0 : 0.0;
      obs.x(n, L::kTags + 2) = tags.skewed ? 1.0 : 0.0;
      obs.x(n, L::kTags + 3) = tags.tiled ? 1.0 : 0.0;
      obs.x(n, L::kTags + 4) = tags.unrolled ? 1.0 : 0.0;
      obs.x(n, L::kLower) = feat_detail::signed_log(static_cast<double>(loop.lo), 10.0);
      obs.x(n, L::kExtent) = std::log2(static_cast<double>(loop.extent())) / 10.0;
      obs.x(n, L::kLevel) = node.level / 5.0;
    } else {
      const Computation& c = p.computations[static_cast<std::size_t>(node.computation)];
      obs.x(n, L::kKind) = 1.0;
      obs.x(n, L::kLevel) = node.level / 5.0;
      feat_detail::write_block(obs.x, n, L::kWrite, c.write, c.depth());
      for (std::size_t r = 0; r < c.reads.size(); ++r)
        feat_detail::write_block(obs.x, n, L::kReads + static_cast<int>(r) * L::kBlock, c.reads[r], c.depth());
      obs.x(n, L::kReadCount) = static_cast<double>(c.reads.size()) / 4.0;
      const auto hist = c.op_histogram();
      for (std::size_t k = 0; k < hist.size() && k < 6; ++k)
        obs.x(n, L::kOps + static_cast<int>(k)) = std::log2(1.0 + hist[k]) / 3.0;
    }
  }
  return obs;
}

inline GraphObservation featurize(const Program& p, int branch = 0) { return featurize(identity_schedule(p), branch); }

/// Debug dump: one CSV line per node (row id, AST node, features), then one
/// "edge,parent,child" line per edge.
inline std::string observation_csv(const GraphObservation& obs) {
  std::ostringstream out;
  out.precision(17);
  out << "row,node";
  for (int c = 0; c < obs.x.cols(); ++c) out << ",f" << c;
  out << "\n";
  for (int r = 0; r < obs.nodes(); ++r) {
    out << r << "," << obs.node_of_row[static_cast<std::size_t>(r)];
    for (int c = 0; c < obs.x.cols(); ++c) out << "," << obs.x(r, c);
    out << "\n";
  }
  for (const auto& [a, b] : obs.edges) out << "edge," << a << "," << b << "\n";
  return out.str();
}

}  // namespace looprl
