#pragma once

// Loop-nest tree built from a program. Iterator nodes are shared between
// consecutive computations whose outer loops carry the same header (name,
// bounds and position); computations are leaves.

#include <cstdint>
#include <vector>

#include "looprl/ir.hpp"

namespace looprl {

enum class NodeKind { kIterator, kComputation };

struct AstNode {
  NodeKind kind = NodeKind::kIterator;
  int parent = -1;
  std::vector<int> children;
  int level = 0;         // depth of the node; equals the iterator level for iterator nodes
  Iterator iterator;     // iterator nodes only
  int computation = -1;  // computation nodes only
};

struct Ast {
  std::vector<AstNode> nodes;  // ids are assigned in preorder
  std::vector<int> roots;
  std::vector<int> leaf_of;                // computation index -> leaf node id
  std::vector<std::vector<int>> path_of;   // computation index -> iterator node ids, root first

  int size() const { return static_cast<int>(nodes.size()); }
};

struct Branch {
  int index = 0;
  std::vector<int> iterators;     // iterator node ids, root first
  std::vector<int> computations;  // computation indices of the leaves under the path
};

inline Ast build_ast(const Program& p) {
  Ast ast;
  const auto n = p.computations.size();
  ast.leaf_of.assign(n, -1);
  ast.path_of.assign(n, {});
  for (std::size_t c = 0; c < n; ++c) {
    const Computation& comp = p.computations[c];
    std::vector<int>& path = ast.path_of[c];
    bool sharing = c > 0;
    for (std::size_t l = 0; l < comp.nest.size(); ++l) {
      const Iterator& it = comp.nest[l];
      if (sharing) {
        const auto& prev_path = ast.path_of[c - 1];
        if (l < prev_path.size()) {
          const Iterator& other = ast.nodes[static_cast<std::size_t>(prev_path[l])].iterator;
          if (other.name == it.name && other.lower == it.lower && other.upper == it.upper) {
            path.push_back(prev_path[l]);
            continue;
          }
        }
        sharing = false;
      }
      AstNode node;
      node.kind = NodeKind::kIterator;
      node.level = static_cast<int>(l);
      node.iterator = it;
      node.parent = path.empty() ? -1 : path.back();
      const int id = ast.size();
      ast.nodes.push_back(node);
      if (node.parent < 0) {
        ast.roots.push_back(id);
      } else {
        ast.nodes[static_cast<std::size_t>(node.parent)].children.push_back(id);
      }
      path.push_back(id);
    }
    AstNode leaf;
    leaf.kind = NodeKind::kComputation;
    leaf.level = comp.depth();
    leaf.computation = static_cast<int>(c);
    leaf.parent = path.empty() ? -1 : path.back();
    const int id = ast.size();
    ast.nodes.push_back(leaf);
    if (leaf.parent < 0) {
      ast.roots.push_back(id);
    } else {
      ast.nodes[static_cast<std::size_t>(leaf.parent)].children.push_back(id);
    }
    ast.leaf_of[c] = id;
  }
  return ast;
}

/// One branch per leaf, left to right.
inline std::vector<Branch> enumerate_branches(const Ast& ast) {
  std::vector<Branch> out;
  std::vector<int> stack(ast.roots.rbegin(), ast.roots.rend());
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const AstNode& node = ast.nodes[static_cast<std::size_t>(id)];
    if (node.kind == NodeKind::kComputation) {
      Branch b;
      b.index = static_cast<int>(out.size());
      b.iterators = ast.path_of[static_cast<std::size_t>(node.computation)];
      b.computations.push_back(node.computation);
      out.push_back(std::move(b));
      continue;
    }
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

using IntMatrix = std::vector<std::vector<std::int64_t>>;

/// rank x (depth + 1): iterator coefficients, outermost first, then the constant.
inline IntMatrix access_matrix(const Access& a, int depth) {
  IntMatrix m(a.subscripts.size(), std::vector<std::int64_t>(static_cast<std::size_t>(depth) + 1, 0));
  for (std::size_t r = 0; r < a.subscripts.size(); ++r) {
    const auto& s = a.subscripts[r];
    for (std::size_t k = 0; k < s.coeffs.size() && k < static_cast<std::size_t>(depth); ++k) m[r][k] = s.coeffs[k];
    m[r][static_cast<std::size_t>(depth)] = s.constant;
  }
  return m;
}

}  // namespace looprl
