#include <gtest/gtest.h>

#include "looprl/dsl.hpp"
#include "looprl/legality.hpp"
#include "looprl/runtime.hpp"
#include "looprl/workloads.hpp"
#include "oracle.hpp"

using namespace looprl;

namespace {

GeneratorConfig small_config(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.max_depth = 4;
  cfg.bounds = {4, 8, 16};
  cfg.max_domain = 1024;
  return cfg;
}

const DependenceVector* find_dep(const DependenceSet& deps, int src, int snk, DepKind kind) {
  for (const auto& d : deps.deps)
    if (d.source == src && d.sink == snk && d.kind == kind) return &d;
  return nullptr;
}

Program shift_program() {
  return parse_program("buffer A[8][8] float;\nfor i in 1..8 { for j in 0..8 { A[i][j] = A[i - 1][j] + 1.0; } }");
}

}  // namespace

TEST(Dependences, UniformFlowDistance) {
  Program p = shift_program();
  DependenceSet deps = compute_dependences(p);
  const DependenceVector* d = find_dep(deps, 0, 0, DepKind::kFlow);
  ASSERT_NE(d, nullptr);
  ASSERT_EQ(d->distance.size(), 2u);
  EXPECT_TRUE(d->exact);
  EXPECT_EQ(d->distance[0].lo, 1);
  EXPECT_EQ(d->distance[0].hi, 1);
  EXPECT_TRUE(d->distance[1].is_zero());
  EXPECT_TRUE(oracle::dependences_cover(p, deps));
}

TEST(Dependences, DistinctBuffersAreIndependent) {
  Program p = parse_program("buffer A[8][8] float; buffer B[8][8] float;\n"
                            "for i in 0..8 { for j in 0..8 { A[i][j] = B[i][j]; } }");
  EXPECT_EQ(compute_dependences(p).size(), 0u);
}

TEST(Dependences, ReversedIndexIsUnknown) {
  Program p = parse_program("buffer A[8] float;\nfor i in 0..8 { A[i] = A[7 - i]; }");
  DependenceSet deps = compute_dependences(p);
  ASSERT_GT(deps.size(), 0u);
  bool unknown = false;
  for (const auto& d : deps.deps) unknown = unknown || d.unknown(0);
  EXPECT_TRUE(unknown);
  EXPECT_TRUE(oracle::dependences_cover(p, deps));
}

TEST(Dependences, CoverBruteForcePairsOnRandomPrograms) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Program p = generate_random_program(small_config(seed));
    std::string missing;
    EXPECT_TRUE(oracle::dependences_cover(p, compute_dependences(p), &missing))
        << "seed " << seed << " missing " << missing << "\n" << serialize_program(p);
  }
}

TEST(Dependences, OriginalOrderIsLegal) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Program p = generate_random_program(small_config(seed));
    LegalityVerdict v = schedule_legality(identity_schedule(p), compute_dependences(p));
    EXPECT_TRUE(v.legal) << "seed " << seed << ": " << v.reason;
  }
}

TEST(TransformedDistances, Examples) {
  DependenceSet deps;
  DependenceVector d;
  d.distance = {Interval::point(1), Interval::point(0)};
  deps.deps.push_back(d);
  auto out = transformed_distances(deps, unimodular_matrix(Transformation::interchange(0, 1), 2));
  EXPECT_EQ(out[0][0].lo, 0);
  EXPECT_EQ(out[0][1].lo, 1);
  out = transformed_distances(deps, unimodular_matrix(Transformation::reversal(0), 2));
  EXPECT_EQ(out[0][0].lo, -1);
  EXPECT_TRUE(out[0][1].is_zero());
  deps.deps[0].distance = {Interval::point(1), Interval::point(-1)};
  out = transformed_distances(deps, unimodular_matrix(Transformation::skewing(0, 1, 1), 2));
  EXPECT_EQ(out[0][0].lo, 1);
  EXPECT_TRUE(out[0][1].is_zero());
}

TEST(TransformedDistances, UnknownPropagates) {
  DependenceSet deps;
  DependenceVector d;
  d.distance = {Interval::point(1), Interval{-3, 3}, Interval::point(0)};
  deps.deps.push_back(d);
  auto out = transformed_distances(deps, unimodular_matrix(Transformation::skewing(1, 2, 2), 3));
  EXPECT_TRUE(out[0][0].is_point());
  EXPECT_FALSE(out[0][1].is_point());
  EXPECT_FALSE(out[0][2].is_point());
}

TEST(CheckLegality, OuterLoopCarriesShift) {
  Program p = shift_program();
  EXPECT_FALSE(check_legality(p, {}, Transformation::parallelization(0), 0).legal);
  EXPECT_TRUE(check_legality(p, {}, Transformation::parallelization(1), 0).legal);
  EXPECT_FALSE(check_legality(p, {}, Transformation::reversal(0), 0).legal);
  EXPECT_TRUE(check_legality(p, {}, Transformation::reversal(1), 0).legal);
  EXPECT_TRUE(check_legality(p, {}, Transformation::interchange(0, 1), 0).legal);
  EXPECT_TRUE(check_legality(p, {}, Transformation::unrolling(4), 0).legal);
}

TEST(CheckLegality, NoDependencesAllowsEverything) {
  Program p = parse_program("buffer A[16][16] float; buffer B[16][16] float;\n"
                            "for i in 0..16 { for j in 0..16 { A[i][j] = B[i][j] * 2.0; } }");
  const std::vector<Transformation> actions{
      Transformation::interchange(0, 1), Transformation::reversal(0), Transformation::reversal(1),
      Transformation::skewing(0, 1, 1),  Transformation::parallelization(0), Transformation::parallelization(1),
      Transformation::tiling(0, 1, 4, 8), Transformation::unrolling(8)};
  for (const auto& a : actions) EXPECT_TRUE(check_legality(p, {}, a, 0).legal) << a.label();
}

TEST(CheckLegality, SecondParallelLoopIsIllegal) {
  Program p = parse_program("buffer A[16][16] float;\nfor i in 0..16 { for j in 0..16 { A[i][j] = 1.0; } }");
  Schedule prefix{{0, Transformation::parallelization(0)}};
  LegalityVerdict v = check_legality(p, prefix, Transformation::parallelization(1), 0);
  EXPECT_FALSE(v.legal);
  EXPECT_FALSE(v.structural);
  EXPECT_FALSE(check_legality(p, prefix, Transformation::parallelization(0), 0).legal);
}

TEST(CheckLegality, StructuralFailuresAreFlagged) {
  Program p = shift_program();
  LegalityVerdict v = check_legality(p, {}, Transformation::interchange(0, 3), 0);
  EXPECT_FALSE(v.legal);
  EXPECT_TRUE(v.structural);
}

TEST(CheckLegality, TilingNeedsPermutableBand) {
  // Distance (1,-1): tiling i,j would execute the sink tile before the source.
  Program p = parse_program("buffer A[17][17] float;\n"
                            "for i in 1..16 { for j in 0..16 { A[i][j] = A[i - 1][j + 1] * 0.5; } }");
  EXPECT_FALSE(check_legality(p, {}, Transformation::tiling(0, 1, 4, 4), 0).legal);
  EXPECT_FALSE(check_legality(p, {}, Transformation::interchange(0, 1), 0).legal);
  // Skewing first makes the band permutable.
  Schedule prefix{{0, Transformation::skewing(0, 1, 1)}};
  EXPECT_TRUE(check_legality(p, prefix, Transformation::tiling(0, 1, 4, 4), 0).legal);
  EXPECT_TRUE(check_legality(p, prefix, Transformation::interchange(0, 1), 0).legal);
}

TEST(SkewFactor, SmallestNonNegatingFactor) {
  Program p1 = parse_program("buffer A[17][17] float;\n"
                             "for i in 1..16 { for j in 0..16 { A[i][j] = A[i - 1][j + 1]; } }");
  EXPECT_EQ(resolve_skew_factor(identity_schedule(p1), compute_dependences(p1), 0, 0, 1), 1);
  Program p2 = parse_program("buffer A[17][19] float;\n"
                             "for i in 1..16 { for j in 0..16 { A[i][j] = A[i - 1][j + 2]; } }");
  EXPECT_EQ(resolve_skew_factor(identity_schedule(p2), compute_dependences(p2), 0, 0, 1), 2);
  Program p3 = parse_program("buffer A[17][30] float;\n"
                             "for i in 1..16 { for j in 0..16 { A[i][j] = A[i - 1][j + 9]; } }");
  EXPECT_EQ(resolve_skew_factor(identity_schedule(p3), compute_dependences(p3), 0, 0, 1), 1);
}

// Every schedule judged legal must keep the brute-force order constraints and
// produce the same outputs.
TEST(Soundness, LegalSchedulesMatchOracle) {
  int legal = 0;
  int oracle_legal = 0;
  int rejected_but_fine = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    Program p = generate_random_program(small_config(seed));
    DependenceSet deps = compute_dependences(p);
    Rng rng(seed + 1000);
    for (int k = 0; k < 4; ++k) {
      Schedule s = oracle::random_schedule(p, deps, rng, 1 + static_cast<int>(rng.uniform_int(0, 3)));
      ScheduledProgram sp = apply_schedule(p, s);
      const bool ours = schedule_legality(sp, deps).legal;
      const oracle::Verdict truth = oracle::brute_force_legality(sp);
      if (truth.legal()) ++oracle_legal;
      if (ours) {
        ++legal;
        EXPECT_TRUE(truth.legal()) << "seed " << seed << " " << canonical_key(s) << "\n" << serialize_program(p);
        const Memory in = random_inputs(p, seed);
        EXPECT_TRUE(outputs_match(interpret(p, in), interpret(sp, in))) << "seed " << seed << " " << canonical_key(s);
      } else if (truth.legal()) {
        ++rejected_but_fine;
      }
    }
  }
  EXPECT_GT(legal, 100);
  ASSERT_GT(oracle_legal, 0);
  // Conservatism is allowed but should stay modest.
  EXPECT_LE(static_cast<double>(rejected_but_fine) / oracle_legal, 0.10);
}

TEST(Soundness, WideningNeverMakesLegal) {
  for (std::uint64_t seed = 0; seed < 80; ++seed) {
    Program p = generate_random_program(small_config(seed));
    DependenceSet deps = compute_dependences(p);
    Rng rng(seed + 77);
    for (int k = 0; k < 3; ++k) {
      Schedule s = oracle::random_schedule(p, deps, rng, 2);
      ScheduledProgram sp = apply_schedule(p, s);
      if (schedule_legality(sp, deps).legal) continue;
      for (std::size_t d = 0; d < deps.deps.size(); ++d) {
        for (std::size_t c = 0; c < deps.deps[d].distance.size(); ++c) {
          if (!deps.deps[d].distance[c].is_point()) continue;
          DependenceSet wide = deps;
          wide.deps[d].distance[c] = Interval::all();
          wide.deps[d].exact = false;
          EXPECT_FALSE(schedule_legality(sp, wide).legal) << "seed " << seed << " " << canonical_key(s);
        }
      }
    }
  }
}
