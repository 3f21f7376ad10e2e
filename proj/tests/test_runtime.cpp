#include <gtest/gtest.h>

#include "looprl/dsl.hpp"
#include "looprl/runtime.hpp"
#include "looprl/workloads.hpp"

using namespace looprl;

namespace {

Program flat(std::int64_t ni, std::int64_t nj) {
  const std::string a = std::to_string(ni);
  const std::string b = std::to_string(nj);
  return parse_program("buffer A[" + a + "][" + b + "] float; buffer B[" + a + "][" + b + "] float;\n" +
                       "for i in 0.." + a + " { for j in 0.." + b + " { A[i][j] = B[i][j] * 2.0; } }");
}

}  // namespace

TEST(Interpret, IdentityIsBitExact) {
  Program p = parse_program("buffer A[9][9] float; buffer B[9][9] float;\n"
                            "for i in 1..9 { for j in 1..9 { A[i][j] = A[i - 1][j] * 0.5 + B[i][j - 1] / 3.0; } }");
  const Memory in = random_inputs(p, 42);
  const Memory a = interpret(p, in);
  const Memory b = interpret(identity_schedule(p), in);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].f, b[k].f);
  // A hand-computed element.
  const double a00 = in[0].f[0 * 9 + 1];
  const double expect = a00 * 0.5 + in[1].f[1 * 9 + 0] / 3.0;
  EXPECT_EQ(a[0].f[1 * 9 + 1], expect);
}

TEST(Interpret, IntegerSemantics) {
  Program p = parse_program("buffer X[4] int; buffer Y[4] int;\nfor i in 0..4 { Y[i] = X[i] / 2 - min(X[i], 3) * 7; }");
  Memory in = allocate(p);
  in[0].i = {7, -7, 0, 100};
  const Memory out = interpret(p, in);
  EXPECT_EQ(out[1].i, (std::vector<std::int64_t>{3 - 21, -3 + 49, 0, 50 - 21}));
}

TEST(Interpret, OutOfBoundsNamesComputationAndIteration) {
  Program p = parse_program("buffer A[8] float;\nfor i in 0..8 { S7: A[i] = A[i + 1]; }");
  try {
    interpret(p, allocate(p));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("S7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(7)"), std::string::npos) << msg;
  }
}

TEST(Interpret, ScheduledOutputsMatch) {
  Program p = flat(32, 24);
  const Memory in = random_inputs(p, 3);
  const Memory ref = interpret(p, in);
  std::vector<Schedule> schedules{
      {{0, Transformation::interchange(0, 1)}},
      {{0, Transformation::tiling(0, 1, 8, 16)}, {0, Transformation::parallelization(0)}},
      {{0, Transformation::skewing(0, 1, 2)}, {0, Transformation::reversal(1)}, {0, Transformation::unrolling(4)}},
      {{0, Transformation::parallelization(1)}, {0, Transformation::unrolling(8)}},
  };
  for (const auto& s : schedules) EXPECT_TRUE(outputs_match(ref, interpret(apply_schedule(p, s), in))) << canonical_key(s);
}

TEST(Executor, CountsEveryInstanceOnce) {
  Program p = parse_program("buffer A[10][12][7] float;\n"
                            "for i in 0..10 { for j in 0..12 { for k in 0..7 { A[i][j][k] = 1.0; } } }");
  Schedule s{{0, Transformation::skewing(0, 1, 3)}, {0, Transformation::tiling(1, 2, 4, 2)},
             {0, Transformation::reversal(0)},      {0, Transformation::unrolling(4)}};
  ScheduledProgram sp = apply_schedule(p, s);
  Memory mem = allocate(p);
  EXPECT_EQ(Executor(sp, true).run(mem), 10 * 12 * 7);
  for (double v : mem[0].f) EXPECT_EQ(v, 1.0);
}

TEST(Executor, ParallelLanesMatchSequential) {
  Program p = flat(64, 64);
  ScheduledProgram sp = apply_schedule(p, {{0, Transformation::parallelization(0)}});
  const Memory in = random_inputs(p, 9);
  Memory seq = in;
  Memory par = in;
  Executor(sp, false).run(seq);
  LanePool pool(4);
  Executor(sp, false).run(par, &pool);
  EXPECT_TRUE(outputs_match(seq, par, 0.0));
}

TEST(SyntheticCost, Examples) {
  // 2^20 points, unit strides.
  Program p = flat(1024, 1024);
  EXPECT_DOUBLE_EQ(synthetic_cost(identity_schedule(p)), 1048576.0);
  EXPECT_DOUBLE_EQ(synthetic_cost(apply_schedule(p, {{0, Transformation::parallelization(0)}})), 136072.0);
  // Extent 3 below W=8 gives divisor 1.5.
  Program q = parse_program("buffer A[3][349525] float;\nfor c in 0..3 { for x in 0..349525 { A[c][x] = 1.0; } }");
  EXPECT_DOUBLE_EQ(synthetic_cost(apply_schedule(q, {{0, Transformation::parallelization(0)}})), 704050.0);
}

TEST(SyntheticCost, RewardsLocalityAndPenalizesStrides) {
  Program p = parse_program("buffer A[256][256] float; buffer B[256][256] float;\n"
                            "for i in 0..256 { for j in 0..256 { A[i][j] = B[j][i]; } }");
  const double base = synthetic_cost(identity_schedule(p));
  EXPECT_GT(base, 65536.0);
  EXPECT_LT(synthetic_cost(apply_schedule(p, {{0, Transformation::tiling(0, 1, 32, 32)}})), base);
  EXPECT_LT(synthetic_cost(apply_schedule(p, {{0, Transformation::unrolling(8)}})), base);
  EXPECT_EQ(synthetic_cost(identity_schedule(p)), base);
}

TEST(SyntheticCost, PureFunction) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    Program p = generate_random_program(cfg);
    const ScheduledProgram sp = apply_schedule(p, {{0, Transformation::parallelization(0)}});
    const double a = synthetic_cost(sp);
    const double b = synthetic_cost(apply_schedule(p, {{0, Transformation::parallelization(0)}}));
    EXPECT_EQ(a, b);
  }
}

TEST(Measure, MinOfManyNotAboveMinOfOne) {
  Program p = flat(128, 128);
  ScheduledProgram sp = identity_schedule(p);
  bool ok = false;
  for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
    const double many = measure(sp, {30, 1, 1});
    const double one = measure(sp, {1, 1, 1});
    ok = many <= one;
  }
  EXPECT_TRUE(ok);
}

TEST(Measure, BackendsShareInterface) {
  Program p = flat(64, 64);
  auto syn = make_backend(BackendKind::kSynthetic);
  auto mes = make_backend(BackendKind::kMeasured, {3, 1, 1});
  EXPECT_EQ(syn->runs(), 1);
  EXPECT_EQ(mes->runs(), 3);
  EXPECT_GT(syn->seconds(identity_schedule(p)), 0.0);
  EXPECT_GT(mes->seconds(identity_schedule(p)), 0.0);
  EXPECT_EQ(parse_backend("measured"), BackendKind::kMeasured);
  EXPECT_THROW(parse_backend("cuda"), Error);
}

TEST(Benchmarks, AllKernelsRunAtSmallSize) {
  auto suite = benchmark_suite({16});
  ASSERT_EQ(suite.size(), 8u);
  for (const auto& [name, p] : suite) {
    Memory mem = random_inputs(p, 1);
    EXPECT_GT(Executor(identity_schedule(p), true).run(mem), 0) << name;
  }
}
