#include <gtest/gtest.h>

#include "looprl/ast.hpp"
#include "looprl/dsl.hpp"

using namespace looprl;

namespace {

const char* kCopy = R"(
buffer A[2][2] float;
buffer B[2][2] float;
for i in 0..2 {
  for j in 0..2 {
    A[i][j] = B[i][j];
  }
}
)";

const char* kShared = R"(
program shared;
buffer A[16][16] float;
buffer B[16][16] float;
buffer C[16] float;
for i in 0..16 {
  for j in 0..16 {
    S0: A[i][j] = B[i][j] * 2.0;
  }
  for k in 0..16 {
    S1: C[i] = max(C[i], A[i][k] - -1.5);
  }
}
for i in 0..8 {
  S2: C[i] = C[i + 8] / 3;
}
)";

}  // namespace

TEST(Dsl, ParsesCopyNest) {
  Program p = parse_program(kCopy);
  ASSERT_EQ(p.computations.size(), 1u);
  EXPECT_EQ(p.computations[0].depth(), 2);
  EXPECT_EQ(p.computations[0].reads.size(), 1u);
  EXPECT_EQ(p.computations[0].id, "S0");
}

TEST(Dsl, EmptyProgramIsRejected) {
  try {
    parse_program("buffer A[4] float;");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no computations"), std::string::npos);
  }
}

TEST(Dsl, NonAffineSubscriptIsRejected) {
  const char* src = "buffer A[64] float; buffer B[64] float;\nfor i in 0..8 { A[i] = B[i*i]; }";
  try {
    parse_program(src);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("non-affine"), std::string::npos);
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Dsl, UndeclaredBufferReportsPosition) {
  try {
    parse_program("buffer A[8] float;\nfor i in 0..8 {\n  A[i] = Q[i];\n}");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("undeclared buffer"), std::string::npos);
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 10);
  }
}

TEST(Dsl, SyntaxErrorsCarryLineAndColumn) {
  EXPECT_THROW(parse_program("buffer A[8] float;\nfor i in 0..8 { A[i] = 1.0 }"), ParseError);
  EXPECT_THROW(parse_program("buffer A[8] float;\nfor i in 4..4 { A[i] = 1.0; }"), ParseError);
  EXPECT_THROW(parse_program("buffer A[8][8] float;\nfor i in 0..8 { A[i] = 1.0; }"), ParseError);
  EXPECT_THROW(parse_program("buffer A[8] float;\nfor i in 0..8 { A[j] = 1.0; }"), ParseError);
}

TEST(Dsl, RoundTripIsExact) {
  Program p = parse_program(kShared);
  const std::string text = serialize_program(p);
  Program q = parse_program(text);
  EXPECT_EQ(p, q);
  EXPECT_EQ(text, serialize_program(q));
}

TEST(Dsl, FloatLiteralsRoundTripBitExactly) {
  const char* src = "buffer A[4] float;\nfor i in 0..4 { A[i] = A[i] * 0.1 + 3.0000000000000004e-7 - 1e300; }";
  Program p = parse_program(src);
  Program q = parse_program(serialize_program(p));
  EXPECT_EQ(p, q);
}

TEST(Dsl, NegationAndAffineForms) {
  const char* src =
      "buffer A[32][32] int;\nfor i in 0..8 { for j in 0..8 { A[2*i - j + 9][-(j - 20)] = -(A[i][j] + 1) / 0; } }";
  Program p = parse_program(src);
  const auto& w = p.computations[0].write;
  EXPECT_EQ(w.subscripts[0].coeffs, (std::vector<std::int64_t>{2, -1}));
  EXPECT_EQ(w.subscripts[0].constant, 9);
  EXPECT_EQ(w.subscripts[1].coeffs, (std::vector<std::int64_t>{0, -1}));
  EXPECT_EQ(w.subscripts[1].constant, 20);
  EXPECT_EQ(parse_program(serialize_program(p)), p);
}

TEST(Dsl, DuplicateReadsAreShared) {
  Program p = parse_program("buffer A[8] float;\nfor i in 0..8 { A[i] = A[i] * A[i] + A[i]; }");
  EXPECT_EQ(p.computations[0].reads.size(), 1u);
}

TEST(Ast, SingleNestIsAChain) {
  Program p = parse_program(
      "buffer A[4][4][4] float;\nfor i in 0..4 { for j in 0..4 { for k in 0..4 { A[i][j][k] = 0.0; } } }");
  Ast ast = build_ast(p);
  ASSERT_EQ(ast.size(), 4);
  EXPECT_EQ(ast.roots, std::vector<int>{0});
  EXPECT_EQ(ast.nodes[3].kind, NodeKind::kComputation);
  EXPECT_EQ(ast.nodes[2].children, std::vector<int>{3});
  EXPECT_EQ(enumerate_branches(ast).size(), 1u);
}

TEST(Ast, SharedOuterLoopIsMerged) {
  Program p = parse_program(kShared);
  Ast ast = build_ast(p);
  // i, j, S0, k, S1, i', S2
  ASSERT_EQ(ast.size(), 7);
  EXPECT_EQ(ast.roots, (std::vector<int>{0, 5}));
  EXPECT_EQ(ast.nodes[0].children, (std::vector<int>{1, 3}));
  auto branches = enumerate_branches(ast);
  ASSERT_EQ(branches.size(), 3u);
  EXPECT_EQ(branches[0].iterators, (std::vector<int>{0, 1}));
  EXPECT_EQ(branches[1].iterators, (std::vector<int>{0, 3}));
  EXPECT_EQ(branches[2].iterators, (std::vector<int>{5}));
  for (int b = 0; b < 3; ++b) {
    EXPECT_EQ(branches[static_cast<std::size_t>(b)].index, b);
    EXPECT_EQ(branches[static_cast<std::size_t>(b)].computations, std::vector<int>{b});
  }
}

TEST(Ast, DeterministicConstruction) {
  Program p = parse_program(kShared);
  Ast a = build_ast(p);
  Ast b = build_ast(p);
  ASSERT_EQ(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.nodes[static_cast<std::size_t>(i)].children, b.nodes[static_cast<std::size_t>(i)].children);
    EXPECT_EQ(a.nodes[static_cast<std::size_t>(i)].parent, b.nodes[static_cast<std::size_t>(i)].parent);
  }
}

TEST(AccessMatrix, ExtractsCoefficients) {
  Program p = parse_program(
      "buffer A[8][8] float; buffer B[8][8] float; buffer C[1] float;\n"
      "for i in 1..8 { for j in 0..8 { A[i][j] = B[i][j] + A[i - 1][j] + C[0]; } }");
  const auto& c = p.computations[0];
  EXPECT_EQ(access_matrix(c.reads[0], 2), (IntMatrix{{1, 0, 0}, {0, 1, 0}}));
  EXPECT_EQ(access_matrix(c.reads[1], 2), (IntMatrix{{1, 0, -1}, {0, 1, 0}}));
  EXPECT_EQ(access_matrix(c.reads[2], 2), (IntMatrix{{0, 0, 0}}));
}

TEST(AccessMatrix, ReconstructsAffineForms) {
  Program p = parse_program(kShared);
  for (const auto& c : p.computations) {
    std::vector<const Access*> all{&c.write};
    for (const auto& r : c.reads) all.push_back(&r);
    for (const Access* a : all) {
      IntMatrix m = access_matrix(*a, c.depth());
      for (std::size_t r = 0; r < a->subscripts.size(); ++r) {
        AffineForm f;
        f.coeffs.assign(m[r].begin(), m[r].end() - 1);
        f.constant = m[r].back();
        EXPECT_EQ(f, a->subscripts[r]);
      }
    }
  }
}
