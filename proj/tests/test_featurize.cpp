#include <gtest/gtest.h>

#include "looprl/dsl.hpp"
#include "looprl/features.hpp"
#include "looprl/workloads.hpp"

using namespace looprl;
using L = FeatureLayout;

namespace {

Program two_branches() {
  return parse_program("buffer A[16][16] float; buffer B[16][16] float; buffer C[16] float;\n"
                       "for i in 0..16 {\n"
                       "  for j in 0..16 { A[i][j] = B[i][j]; }\n"
                       "  for k in 0..16 { C[k] = C[k] + A[i][k]; }\n"
                       "}");
}

}  // namespace

TEST(Featurize, LayoutIsFixed) {
  EXPECT_EQ(L::kWidth, 176);
  EXPECT_EQ(L::kReads, 40);
  EXPECT_EQ(L::kReadCount, 160);
  EXPECT_EQ(L::kUsed, 167);
}

TEST(Featurize, RowsAndEdgesFollowAst) {
  Program p = two_branches();
  GraphObservation obs = featurize(p);
  const Ast ast = build_ast(p);
  ASSERT_EQ(obs.nodes(), ast.size());
  EXPECT_EQ(obs.x.cols(), 176);
  int edges = 0;
  for (const auto& n : ast.nodes) edges += n.parent >= 0 ? 1 : 0;
  EXPECT_EQ(static_cast<int>(obs.edges.size()), edges);
  for (const auto& [a, b] : obs.edges) EXPECT_EQ(ast.nodes[static_cast<std::size_t>(b)].parent, a);
}

TEST(Featurize, FocusOnTargetedBranchOnly) {
  Program p = two_branches();
  ScheduledProgram sp = identity_schedule(p);
  for (int b = 0; b < 2; ++b) {
    GraphObservation obs = featurize(sp, b);
    const auto& branch = sp.branches[static_cast<std::size_t>(b)];
    for (int n = 0; n < obs.nodes(); ++n) {
      const bool on = std::find(branch.iterators.begin(), branch.iterators.end(), n) != branch.iterators.end();
      EXPECT_EQ(obs.x(n, L::kFocus), on ? 1.0 : 0.0) << "branch " << b << " node " << n;
    }
  }
  // Branch 0 is the leftmost: i and j.
  GraphObservation obs = featurize(sp, 0);
  EXPECT_EQ(obs.x(0, L::kFocus), 1.0);
  EXPECT_EQ(obs.x(1, L::kFocus), 1.0);
}

TEST(Featurize, ParallelTagAfterP0) {
  Program p = two_branches();
  ScheduledProgram sp = apply_schedule(p, {{0, Transformation::parallelization(0)}});
  GraphObservation obs = featurize(sp, 0);
  EXPECT_EQ(obs.x(0, L::kTags + 0), 1.0);
  EXPECT_EQ(obs.x(1, L::kTags + 0), 0.0);
  GraphObservation fresh = featurize(p);
  EXPECT_EQ(fresh.x.block(0, L::kTags, fresh.nodes(), 5).sum(), 0.0);
}

TEST(Featurize, IdentityAccessBlocks) {
  Program p = parse_program("buffer A[8][8] float; buffer B[8][8] float;\nfor i in 0..8 { for j in 0..8 { A[i][j] = B[i][j]; } }");
  GraphObservation obs = featurize(p);
  const int comp = 2;
  ASSERT_EQ(obs.x(comp, L::kKind), 1.0);
  for (int r = 0; r < L::kBlockRows; ++r) {
    for (int c = 0; c < L::kBlockCols; ++c) {
      const double expect = (r < 2 && c == r) ? 1.0 : 0.0;
      EXPECT_EQ(obs.x(comp, L::kWrite + r * L::kBlockCols + c), expect);
      EXPECT_EQ(obs.x(comp, L::kReads + r * L::kBlockCols + c), expect);
    }
  }
  // Unused read blocks and padding stay zero.
  for (int c = L::kReads + L::kBlock; c < L::kReadCount; ++c) EXPECT_EQ(obs.x(comp, c), 0.0);
  for (int c = L::kUsed; c < L::kWidth; ++c) EXPECT_EQ(obs.x(comp, c), 0.0);
  EXPECT_EQ(obs.x(comp, L::kReadCount), 0.25);
  // Iterator rows carry no access data.
  for (int c = L::kWrite; c < L::kWidth; ++c) EXPECT_EQ(obs.x(0, c), 0.0);
  EXPECT_DOUBLE_EQ(obs.x(0, L::kExtent), 0.3);
}

TEST(Featurize, InterchangeIsVisible) {
  Program p = parse_program("buffer A[8][32] float;\nfor i in 0..8 { for j in 0..32 { A[i][j] = 1.0; } }");
  GraphObservation before = featurize(p);
  GraphObservation after = featurize(apply_schedule(p, {{0, Transformation::interchange(0, 1)}}), 0);
  EXPECT_DOUBLE_EQ(before.x(0, L::kExtent), 0.3);
  EXPECT_DOUBLE_EQ(after.x(0, L::kExtent), 0.5);
}

TEST(Featurize, DeterministicAndTotalOnGeneratedPrograms) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    Program p = generate_random_program(cfg);
    ScheduledProgram sp = identity_schedule(p);
    for (std::size_t b = 0; b < sp.branches.size(); ++b) {
      GraphObservation a = featurize(sp, static_cast<int>(b));
      GraphObservation c = featurize(sp, static_cast<int>(b));
      EXPECT_EQ(a.x, c.x);
      EXPECT_TRUE(a.x.allFinite());
    }
  }
  for (const auto& [name, p] : benchmark_suite()) EXPECT_NO_THROW(featurize(p)) << name;
}

TEST(Featurize, RejectsProgramsBeyondCaps) {
  Program p = parse_program("buffer A[8] float;\nfor i in 0..8 { A[i] = A[i] + A[i] * 2.0; }");
  Computation& c = p.computations[0];
  for (int k = 0; k < 4; ++k) c.reads.push_back(c.reads[0]);
  EXPECT_THROW(featurize(p), Error);
}

TEST(Featurize, CsvDump) {
  GraphObservation obs = featurize(two_branches());
  const std::string csv = observation_csv(obs);
  EXPECT_EQ(csv.rfind("row,node,f0,", 0), 0u);
  EXPECT_NE(csv.find("edge,0,1"), std::string::npos);
}
