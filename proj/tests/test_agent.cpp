#include <gtest/gtest.h>

#include "looprl/agent.hpp"
#include "looprl/dsl.hpp"
#include "nn_fixtures.hpp"

using namespace looprl;

namespace {

Program parallel_kernel() {
  return parse_program("buffer A[256][256] float; buffer B[256][256] float;\n"
                       "for i in 0..256 { for j in 0..256 { A[i][j] = B[i][j] * 2.0; } }");
}

nn::NetConfig bandit_config() {
  nn::NetConfig c = fixtures::small_config();
  c.actions = 2;
  return c;
}

}  // namespace

TEST(Gae, SingleTerminalStep) {
  const GaeResult r = compute_gae({1.0}, {0.0}, {true}, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(r.advantages[0], 1.0);
  EXPECT_DOUBLE_EQ(r.returns[0], 1.0);
}

TEST(Gae, TwoStepHandValue) {
  const GaeResult r = compute_gae({0.0, 1.0}, {0.0, 0.0}, {false, true}, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(r.advantages[1], 1.0);
  EXPECT_NEAR(r.advantages[0], 0.9405, 1e-15);
}

TEST(Gae, ZeroInZeroOut) {
  const GaeResult r = compute_gae({0, 0, 0}, {0, 0, 0}, {false, false, true}, 0.99, 0.95);
  for (double a : r.advantages) EXPECT_EQ(a, 0.0);
}

TEST(Gae, MatchesDirectSumAndBootstrap) {
  // Brute force: A_t = sum_l (gamma lambda)^l delta_{t+l} within an episode.
  Rng rng(2);
  const int n = 12;
  std::vector<double> r(n), v(n);
  std::vector<bool> d(n, false);
  for (int k = 0; k < n; ++k) {
    r[static_cast<std::size_t>(k)] = rng.normal();
    v[static_cast<std::size_t>(k)] = rng.normal();
  }
  d[4] = true;
  const double boot = 0.7;
  const GaeResult g = compute_gae(r, v, d, 0.9, 0.8, boot);
  auto value_after = [&](int k) { return k + 1 < n ? v[static_cast<std::size_t>(k + 1)] : boot; };
  for (int t = 0; t < n; ++t) {
    double a = 0.0, w = 1.0;
    for (int k = t; k < n; ++k) {
      const bool done = d[static_cast<std::size_t>(k)];
      a += w * (r[static_cast<std::size_t>(k)] + (done ? 0.0 : 0.9 * value_after(k)) - v[static_cast<std::size_t>(k)]);
      if (done) break;
      w *= 0.9 * 0.8;
    }
    EXPECT_NEAR(g.advantages[static_cast<std::size_t>(t)], a, 1e-12) << t;
  }
  EXPECT_THROW(compute_gae({1.0}, {}, {true}, 0.9, 0.9), Error);
}

TEST(Ppo, ClipExample) {
  EXPECT_DOUBLE_EQ(clipped_objective(2.0, 1.0, 0.3), 1.3);
  EXPECT_DOUBLE_EQ(clipped_objective(1.0, 0.5, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(clipped_objective(0.5, -1.0, 0.3), -0.7);
  EXPECT_DOUBLE_EQ(clipped_objective(2.0, -1.0, 0.3), -2.0);
}

TEST(Ppo, DefaultsAreTheTrainingTable) {
  PpoConfig c;
  EXPECT_EQ(c.clip, 0.3);
  EXPECT_EQ(c.gamma, 0.99);
  EXPECT_EQ(c.lambda, 0.95);
  EXPECT_EQ(c.value_coef, 2.0);
  EXPECT_EQ(c.entropy_start, 0.1);
  EXPECT_EQ(c.entropy_end, 0.0);
  EXPECT_EQ(c.batch, 512);
  EXPECT_EQ(c.epochs, 5);
  EXPECT_EQ(c.minibatch, 64);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_NO_THROW(c.validate());
  c.clip = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Ppo, EntropyDecaysLinearlyToZero) {
  PpoConfig c;
  c.total_steps = 1000;
  EXPECT_DOUBLE_EQ(entropy_coefficient(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(entropy_coefficient(c, 500), 0.05);
  EXPECT_DOUBLE_EQ(entropy_coefficient(c, 1000), 0.0);
  EXPECT_DOUBLE_EQ(entropy_coefficient(c, 5000), 0.0);
  double prev = 1.0;
  for (int s = 0; s <= 1200; s += 37) {
    EXPECT_LE(entropy_coefficient(c, s), prev);
    prev = entropy_coefficient(c, s);
  }
}

TEST(Policy, SoftmaxIsADistribution) {
  nn::ActorCritic<float> net(nn::NetConfig{}, 3);
  const auto obs = featurize(parallel_kernel());
  const auto out = net.forward(nn::make_batch<float>(obs));
  ASSERT_EQ(out.logits.cols(), 56);
  const auto p = softmax(out.logits.row(0));
  double s = 0.0;
  for (double q : p) {
    EXPECT_GE(q, 0.0);
    s += q;
  }
  EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(Policy, GreedyTieBreaksToLowestId) {
  EXPECT_EQ(greedy_argmax({0.1, 0.4, 0.4, 0.1}), 1);
  const std::vector<char> allowed{1, 0, 1, 1};
  EXPECT_EQ(greedy_argmax({0.1, 0.4, 0.4, 0.1}, &allowed), 2);
  Eigen::RowVectorXd logits(3);
  logits << 2.0, 5.0, 5.0;
  EXPECT_EQ(greedy_argmax(softmax(logits)), 1);
}

TEST(Policy, DominantLogitIsSampled) {
  Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(56);
  logits(17) = 100.0;
  const auto p = softmax(logits);
  Rng rng(4);
  for (int k = 0; k < 200; ++k) EXPECT_EQ(sample_index(p, rng), 17);
}

TEST(Policy, SeededSamplingIsReproducible) {
  nn::ActorCritic<float> net(nn::NetConfig{}, 5);
  const auto obs = featurize(parallel_kernel());
  Rng a(9), b(9);
  for (int k = 0; k < 20; ++k) {
    const ActionChoice x = select_action(net, obs, SelectMode::kSample, a);
    const ActionChoice y = select_action(net, obs, SelectMode::kSample, b);
    EXPECT_EQ(x.action, y.action);
    EXPECT_EQ(x.logp, y.logp);
  }
}

TEST(Policy, MaskExcludesActions) {
  Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(4);
  logits(0) = 10.0;
  const std::vector<char> mask{0, 1, 1, 1};
  const auto p = softmax(logits, &mask);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_NEAR(p[1] + p[2] + p[3], 1.0, 1e-15);
}

TEST(Policy, StructuralMaskOnShallowNest) {
  ActionCatalogue cat;
  SyntheticBackend backend;
  Environment env(cat, backend);
  env.reset(parallel_kernel());
  const auto mask = structural_mask(env);
  EXPECT_EQ(mask[static_cast<std::size_t>(cat.find("I(0,1)"))], 1);
  EXPECT_EQ(mask[static_cast<std::size_t>(cat.find("I(1,2)"))], 0);
  EXPECT_EQ(mask[static_cast<std::size_t>(cat.find("R(2)"))], 0);
  EXPECT_EQ(mask[static_cast<std::size_t>(cat.next_id())], 1);
}

TEST(Ppo, UpdateKeepsParametersFinite) {
  nn::ActorCritic<float> net(nn::NetConfig{}, 6);
  nn::Adam<float> opt(1e-4);
  Rng rng(1);
  std::vector<Transition> batch;
  std::vector<double> adv, ret;
  const auto obs = featurize(parallel_kernel());
  for (int k = 0; k < 128; ++k) {
    const ActionChoice c = select_action(net, obs, SelectMode::kSample, rng);
    batch.push_back({obs, c.action, c.logp, c.value, 0.0, true, {}});
    adv.push_back(rng.normal());
    ret.push_back(rng.normal());
  }
  PpoConfig cfg;
  const UpdateReport r = ppo_update(net, opt, batch, adv, ret, cfg, 0.1, rng);
  EXPECT_EQ(r.minibatches, 10);
  EXPECT_TRUE(net.all_finite());
  EXPECT_TRUE(std::isfinite(r.total_loss));
  EXPECT_GT(r.entropy, 0.0);
}

TEST(Ppo, FirstMinibatchAtCentreHasRatioOne) {
  // With a single epoch and one minibatch the policy has not moved yet, so
  // the approximate KL and clip fraction are zero.
  nn::ActorCritic<double> net(bandit_config(), 8);
  nn::Adam<double> opt(1e-4);
  Rng rng(2);
  const auto obs = fixtures::random_graph(3, 6, 1);
  std::vector<Transition> batch;
  for (int k = 0; k < 8; ++k) {
    const ActionChoice c = select_action(net, obs, SelectMode::kSample, rng);
    batch.push_back({obs, c.action, c.logp, c.value, 1.0, true, {}});
  }
  PpoConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 8;
  const UpdateReport r = ppo_update(net, opt, batch, std::vector<double>(8, 1.0), std::vector<double>(8, 1.0), cfg, 0.0, rng);
  EXPECT_NEAR(r.approx_kl, 0.0, 1e-12);
  EXPECT_EQ(r.clip_fraction, 0.0);
  // Equal advantages normalize to zero, so L_clip is zero.
  EXPECT_NEAR(r.policy_loss, 0.0, 1e-12);
}

TEST(Ppo, TwoArmBanditConvergesWithin50Updates) {
  nn::ActorCritic<float> net(bandit_config(), 10);
  nn::Adam<float> opt(1e-4);
  PpoConfig cfg;
  cfg.total_steps = 50 * 512;
  Rng rng(11);
  const auto obs = fixtures::random_graph(4, 6, 2);
  int converged_at = -1;
  for (int update = 1; update <= 50 && converged_at < 0; ++update) {
    std::vector<Transition> batch;
    std::vector<double> rewards, values;
    std::vector<bool> dones;
    for (int k = 0; k < cfg.batch; ++k) {
      const ActionChoice c = select_action(net, obs, SelectMode::kSample, rng);
      const double reward = c.action == 1 ? 1.0 : 0.0;
      batch.push_back({obs, c.action, c.logp, c.value, reward, true, {}});
      rewards.push_back(reward);
      values.push_back(c.value);
      dones.push_back(true);
    }
    const GaeResult g = compute_gae(rewards, values, dones, cfg.gamma, cfg.lambda);
    ppo_update(net, opt, batch, g.advantages, g.returns, cfg, entropy_coefficient(cfg, (update - 1) * cfg.batch), rng);
    const auto p = softmax(net.forward(nn::make_batch<float>(obs)).logits.row(0));
    if (greedy_argmax(p) == 1 && p[1] > 0.9) converged_at = update;
  }
  EXPECT_GT(converged_at, 0);
  RecordProperty("converged_at", converged_at);
}

TEST(Search, ExhaustiveFindsParallelization) {
  ActionCatalogue cat;
  SyntheticBackend backend;
  MemoStore memo;
  Environment env(cat, backend, &memo);
  auto ctx = std::make_shared<const ProgramContext>(parallel_kernel());
  const SearchResult one = exhaustive_search(env, ctx, 1);
  ASSERT_EQ(one.actions.size(), 1u);
  EXPECT_EQ(one.actions[0], cat.find("P(0)"));
  const SearchResult three = exhaustive_search(env, ctx, 3);
  EXPECT_GE(three.best_return, one.best_return);
  EXPECT_GT(three.sequences, one.sequences);
  // Replaying the best sequence reproduces its return.
  env.reset(ctx);
  double total = 0.0;
  for (int a : three.actions) total += env.step(a).reward;
  EXPECT_NEAR(total, three.best_return, 1e-12);
}

TEST(Inference, GreedyTerminatesAndReportsPolicyTime) {
  ActionCatalogue cat;
  SyntheticBackend backend;
  Environment env(cat, backend);
  nn::ActorCritic<float> net(nn::NetConfig{}, 12);
  const InferenceResult r = greedy_schedule(net, env, std::make_shared<const ProgramContext>(parallel_kernel()));
  EXPECT_FALSE(r.steps.empty());
  EXPECT_LE(r.steps.size(), 64u);
  EXPECT_GT(r.policy_seconds, 0.0);
  EXPECT_NEAR(r.total_return(), env.trace().total_reward(), 1e-9);
  // No action repeats while the state is unchanged.
  for (std::size_t k = 1; k < r.steps.size(); ++k) {
    if (!r.steps[k - 1].legal) {
      EXPECT_NE(r.steps[k].action, r.steps[k - 1].action);
    }
  }
}

TEST(Trainer, IterationProducesMetrics) {
  ActionCatalogue cat;
  SyntheticBackend backend;
  MemoStore memo;
  PpoConfig cfg;
  cfg.batch = 64;
  cfg.minibatch = 32;
  cfg.epochs = 1;
  cfg.total_steps = 128;
  std::vector<std::shared_ptr<const ProgramContext>> corpus{std::make_shared<const ProgramContext>(parallel_kernel())};
  Trainer t(cfg, cat, backend, &memo, EnvConfig{}, corpus, 3);
  const IterationStats a = t.iterate();
  const IterationStats b = t.iterate();
  EXPECT_EQ(a.iteration, 1);
  EXPECT_EQ(b.env_steps, 128);
  EXPECT_DOUBLE_EQ(a.entropy_coef, 0.1);
  EXPECT_DOUBLE_EQ(b.entropy_coef, 0.05);
  EXPECT_GE(b.memo_hits, a.memo_hits);
  EXPECT_TRUE(t.net().all_finite());
  const std::string row = metrics_row(b);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','));
}
