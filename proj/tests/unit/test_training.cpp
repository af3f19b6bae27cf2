#include <gtest/gtest.h>

#include <cmath>

#include "../common/gradcheck.hpp"
#include "afh/data.hpp"
#include "afh/training.hpp"
#include "test_util.hpp"

using namespace afh;
using afh::testing::random_image;

namespace {

// 2x1 action grid whose policy logits are exactly (0, 0).
ParamSet<double> two_action_params() {
  const PolicyConfig pc{2, 1, 1, 4, 4, true};
  const EnhancerConfig ec{2, 1, 1, 1, 1, 4, {{2, 3}, {1, 3}}};
  auto p = init_params<double>(pc, ec, 1);
  for (auto& [name, t] : p.policy)
    for (double& v : t.data) v = 0.0;
  return p;
}

EpisodeConfig one_step() {
  EpisodeConfig cfg;
  cfg.steps = 1;
  cfg.geom = {1, 1, 0.5};
  cfg.mode = SelectionMode::sample;
  return cfg;
}

struct Moments {
  std::vector<double> mean, var;
};

Moments reinforce_moments(const ParamSet<double>& p, double baseline, int n, std::uint64_t seed) {
  const Image img(2, 1, 1, 0.5);
  Rng rng(seed);
  Moments m{{0, 0}, {0, 0}};
  for (int i = 0; i < n; ++i) {
    const Trajectory t = run_episode(p, img, one_step(), rng);
    const double r = t.records[0].loc.y == 1 ? 1.0 : 0.0;
    const auto g = reinforce_gradient<double>({&t}, {r}, baseline, p);
    for (int k = 0; k < 2; ++k) {
      const double v = g.at("head.bias").data[k];
      m.mean[k] += v;
      m.var[k] += v * v;
    }
  }
  for (int k = 0; k < 2; ++k) {
    m.mean[k] /= n;
    m.var[k] = m.var[k] / n - m.mean[k] * m.mean[k];
  }
  return m;
}

Trajectory one_step_trajectory(PatchLocation loc, double after, const PatchGeometry& geom) {
  Trajectory t;
  t.geom = geom;
  t.initial_image = Image(6, 6, 1, 0.0);
  t.records.push_back({1, loc, std::nullopt, Image(geom.patch_height, geom.patch_width, 1, 0.0),
                       Image(geom.patch_height, geom.patch_width, 1, after)});
  t.final_image = replace_patch(t.initial_image, loc, t.records[0].patch_after, geom);
  return t;
}

}  // namespace

TEST(TerminalReward, Examples) {
  const Image a = random_image(5, 4, 3, 1);
  EXPECT_EQ(terminal_reward(a, a), 0.0);
  EXPECT_NEAR(terminal_reward(Image(3, 3, 3, 0.1), Image(3, 3, 3, 0.0)), -0.01, 1e-15);
  EXPECT_NEAR(terminal_reward(Image(2, 2, 1, 1.0), Image(2, 2, 1, 0.0)), -1.0, 0.0);
  EXPECT_THROW(terminal_reward(Image(2, 2, 1), Image(2, 3, 1)), ShapeError);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double r = terminal_reward(random_image(6, 6, 3, s), random_image(6, 6, 3, s + 100));
    EXPECT_LE(r, 0.0);
    EXPECT_GE(r, -1.0);
  }
}

TEST(RewardSpec, TerminalOnly) {
  RewardSpec spec;
  for (int t = 1; t < 6; ++t) EXPECT_EQ(spec.reward_at(t, 6, -0.3), 0.0);
  EXPECT_EQ(spec.reward_at(6, 6, -0.3), -0.3);
  EXPECT_EQ(spec.episode_return(6, -0.3), -0.3);
}

TEST(EnhancementLoss, Examples) {
  const PatchGeometry geom{2, 2, 0.5};
  Trajectory empty;
  empty.geom = geom;
  empty.initial_image = empty.final_image = Image(6, 6, 1, 0.0);
  EXPECT_EQ(enhancement_loss(empty, Image(6, 6, 1, 0.3)), 0.0);
  EXPECT_NEAR(enhancement_loss(one_step_trajectory({3, 3}, 0.2, geom), Image(6, 6, 1, 0.5)), 0.09, 1e-15);
  const Trajectory t = one_step_trajectory({4, 4}, 0.4, geom);
  Image truth(6, 6, 1, 0.0);
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 4; ++x) truth.at(y, x, 0) = 0.4;
  EXPECT_EQ(enhancement_loss(t, truth), 0.0);
}

TEST(EnhancementLoss, CornerUsesInBoundsPixelsOnly) {
  const PatchGeometry geom{4, 4, 0.5};
  const Image truth = random_image(6, 6, 1, 9);
  const Trajectory t = one_step_trajectory({1, 1}, 0.25, geom);
  // Brute force: patch pixel (r, c) sits at image (r - 2, c - 2).
  double sum = 0;
  int n = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const int y = r - 2, x = c - 2;
      if (y < 0 || x < 0) continue;
      sum += std::pow(0.25 - truth.at(y, x, 0), 2);
      ++n;
    }
  EXPECT_EQ(n, 4);
  EXPECT_NEAR(enhancement_loss(t, truth), sum / n, 1e-15);
}

TEST(EnhancementLoss, GraphMatchesValue) {
  const auto p = afh::check::tiny_random_params(4, 0.2);
  EpisodeConfig cfg;
  cfg.steps = 3;
  cfg.geom = {4, 4, 0.5};
  cfg.mode = SelectionMode::sample;
  Rng rng(3);
  const Image truth = random_image(8, 8, 1, 2);
  const auto t = run_episode(p, random_image(8, 8, 1, 1), cfg, rng);
  ad::Tape<double> tape;
  EXPECT_NEAR(enhancement_loss_graph(tape, p, t, truth).value().data[0], enhancement_loss(t, truth), 1e-12);
}

TEST(UpdateBaseline, Examples) {
  BaselineState b;
  b = update_baseline(b, -0.04);
  EXPECT_TRUE(b.initialized);
  EXPECT_EQ(b.value, -0.04);
  b = update_baseline(b, -0.02);
  EXPECT_NEAR(b.value, -0.038, 1e-15);
  for (int i = 0; i < 400; ++i) b = update_baseline(b, 0.7);
  EXPECT_NEAR(b.value, 0.7, 1e-12);
}

TEST(AdamStep, Examples) {
  ParamSet<double> p;
  p.policy.emplace("w", Tensor<double>({1}, 3.0));
  OptimizerConfig cfg;
  AdamState<double> state;
  Gradients<double> zero;
  zero.policy.emplace("w", Tensor<double>({1}, 0.0));
  adam_step(p, zero, state, cfg);
  EXPECT_EQ(p.policy.at("w").data[0], 3.0);

  ParamSet<double> q;
  q.policy.emplace("w", Tensor<double>({1}, 3.0));
  AdamState<double> s1;
  Gradients<double> one;
  one.policy.emplace("w", Tensor<double>({1}, 1.0));
  adam_step(q, one, s1, cfg);
  EXPECT_NEAR(3.0 - q.policy.at("w").data[0], cfg.learning_rate, 1e-10);

  ParamSet<double> r = q;
  AdamState<double> s2 = s1;
  adam_step(q, one, s1, cfg);
  adam_step(r, one, s2, cfg);
  EXPECT_EQ(q.policy.at("w").data, r.policy.at("w").data);

  Gradients<double> bad;
  bad.policy.emplace("w", Tensor<double>({2}, 1.0));
  EXPECT_THROW(adam_step(q, bad, s1, cfg), ShapeError);
}

TEST(ReinforceGradient, CenteredAdvantageIsZero) {
  const auto p = afh::check::tiny_random_params(6);
  EpisodeConfig cfg;
  cfg.steps = 2;
  cfg.geom = {4, 4, 0.5};
  cfg.mode = SelectionMode::sample;
  Rng rng(1);
  const auto a = run_episode(p, random_image(8, 8, 1, 1), cfg, rng);
  const auto b = run_episode(p, random_image(8, 8, 1, 2), cfg, rng);
  const auto g = reinforce_gradient<double>({&a, &b}, {-0.02, -0.02}, -0.02, p);
  for (const auto& [name, t] : g)
    for (double v : t.data) EXPECT_EQ(v, 0.0) << name;
}

TEST(ReinforceGradient, RejectsGreedyTrajectories) {
  const auto p = afh::check::tiny_random_params(6);
  EpisodeConfig cfg;
  cfg.steps = 2;
  cfg.geom = {4, 4, 0.5};
  cfg.mode = SelectionMode::greedy;
  Rng rng(1);
  const auto a = run_episode(p, random_image(8, 8, 1, 1), cfg, rng);
  EXPECT_THROW(reinforce_gradient<double>({&a}, {-0.1}, 0.0, p), Error);
  EXPECT_THROW(reinforce_gradient<double>({&a}, {}, 0.0, p), Error);
}

// Two actions, r = (1, 0), logits (0, 0): d(-E[R])/d bias = -p_a (r_a - E[R]) = (-0.25, 0.25).
TEST(ReinforceGradient, TwoActionToyIsUnbiased) {
  const auto p = two_action_params();
  const Moments m = reinforce_moments(p, 0.0, 100000, 11);
  EXPECT_LT(std::abs(m.mean[0] + 0.25) / 0.25, 0.02);
  EXPECT_LT(std::abs(m.mean[1] - 0.25) / 0.25, 0.02);
}

TEST(ReinforceGradient, ConstantShiftKeepsExpectation) {
  const auto p = two_action_params();
  const int n = 100000;
  const Moments a = reinforce_moments(p, 0.5, n, 12);
  const Moments b = reinforce_moments(p, -3.0, n, 13);
  for (int k = 0; k < 2; ++k) {
    const double sigma = std::sqrt(a.var[k] / n + b.var[k] / n);
    EXPECT_LT(std::abs(a.mean[k] - b.mean[k]), 3 * sigma);
  }
  EXPECT_LT(a.var[0], b.var[0]);
}

namespace {

std::pair<PolicyConfig, EnhancerConfig> rgb_tiny() {
  PolicyConfig pc = afh::check::tiny_policy();
  EnhancerConfig ec = afh::check::tiny_enhancer();
  pc.image_channels = ec.image_channels = 3;
  ec.conv_spec.back().out_channels = 3;
  return {pc, ec};
}

TrainConfig small_train(int iterations) {
  TrainConfig cfg;
  cfg.optimizer.iterations = iterations;
  cfg.optimizer.batch_size = 2;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.episode.steps = 2;
  cfg.episode.geom = {4, 4, 0.5};
  return cfg;
}

}  // namespace

TEST(Train, SmokeOneIteration) {
  const auto data = make_toy_dataset(1, 8, 8, 2, 3);
  const auto [pc, ec] = rgb_tiny();
  TrainState<double> state{init_params<double>(pc, ec, 1), {}, {}, 0};
  const auto before = state.params;
  std::vector<IterationLog> logs;
  TrainCallbacks<double> cb;
  cb.on_iteration = [&](const IterationLog& l) { logs.push_back(l); };
  train(state, data, small_train(1), 5, cb);
  EXPECT_EQ(state.iteration, 1);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].iteration, 1);
  EXPECT_FALSE(state.params == before);
  EXPECT_TRUE(state.baseline.initialized);
  EXPECT_THROW(train(state, std::vector<SamplePair>{}, small_train(2), 5, cb), Error);
}

TEST(Train, ResumeMatchesUninterrupted) {
  const auto data = make_toy_dataset(5, 8, 8, 2, 3);
  const auto [pc, ec] = rgb_tiny();
  TrainState<double> full{init_params<double>(pc, ec, 1), {}, {}, 0};
  TrainState<double> part = full;
  train(full, data, small_train(4), 9);
  train(part, data, small_train(2), 9);
  std::vector<int> seen;
  TrainCallbacks<double> cb;
  cb.on_iteration = [&](const IterationLog& l) { seen.push_back(l.iteration); };
  train(part, data, small_train(4), 9, cb);
  EXPECT_EQ(seen, (std::vector<int>{3, 4}));
  EXPECT_TRUE(part.params == full.params);
  EXPECT_EQ(part.baseline, full.baseline);
}

TEST(Train, NonFiniteAborts) {
  const auto data = make_toy_dataset(2, 8, 8, 2, 3);
  const auto [pc, ec] = rgb_tiny();
  TrainState<double> state{init_params<double>(pc, ec, 1), {}, {}, 0};
  state.params.enhancer.at("conv1.weight").data[0] = NAN;
  EXPECT_THROW(train(state, data, small_train(1), 1), Error);
}

TEST(Train, FrozenUniformPolicyStillReducesEnhancementLoss) {
  const auto data = make_toy_dataset(8, 16, 16, 4, 4);
  PolicyConfig pc{16, 16, 3, 8, 8, true};
  EnhancerConfig ec{16, 16, 3, 8, 8, 8, {{8, 3}, {8, 3}, {3, 3}}};
  TrainState<double> state{init_params<double>(pc, ec, 2), {}, {}, 0};
  TrainConfig cfg = small_train(300);
  cfg.optimizer.batch_size = 4;
  cfg.episode.steps = 4;
  cfg.episode.geom = {8, 8, 0.5};
  cfg.episode.policy = LocationPolicy::uniform_random;
  cfg.train_policy = false;
  const auto policy_before = state.params.policy;
  const auto loss_of = [&](const ParamSet<double>& p) {
    double total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      Rng rng(100 + i);
      total += enhancement_loss(run_episode(p, data[i].lr_up, cfg.episode, rng), data[i].hr);
    }
    return total / data.size();
  };
  const double before = loss_of(state.params);
  train(state, data, cfg, 3);
  const double after = loss_of(state.params);
  EXPECT_LT(after, 0.95 * before) << before;
  EXPECT_TRUE(state.params.policy == policy_before);
}
