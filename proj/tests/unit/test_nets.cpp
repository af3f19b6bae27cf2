#include <gtest/gtest.h>

#include <cmath>

#include "../common/gradcheck.hpp"
#include "afh/episode.hpp"
#include "afh/nets.hpp"
#include "afh/training.hpp"
#include "test_util.hpp"

using namespace afh;
using afh::check::tiny_enhancer;
using afh::check::tiny_policy;
using afh::check::tiny_random_params;
using afh::testing::random_image;

namespace {

PolicyConfig small_policy() { return {12, 10, 3, 16, 12, true}; }
EnhancerConfig small_enhancer() { return {12, 10, 3, 6, 5, 8, {{4, 3}, {6, 5}, {3, 3}}}; }

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const auto a = init_params<float>(small_policy(), small_enhancer(), 7);
  const auto b = init_params<float>(small_policy(), small_enhancer(), 7);
  const auto c = init_params<float>(small_policy(), small_enhancer(), 8);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(InitParams, StatedRules) {
  const auto p = init_params<float>(small_policy(), small_enhancer(), 3);
  for (float v : p.enhancer.at("conv3.weight").data) EXPECT_EQ(v, 0.0f);
  for (float v : p.enhancer.at("conv3.bias").data) EXPECT_EQ(v, 0.0f);
  const auto& lstm_bias = p.policy.at("lstm.bias").data;
  const int hd = small_policy().lstm_hidden;
  for (int i = 0; i < 4 * hd; ++i) EXPECT_EQ(lstm_bias[i], i >= hd && i < 2 * hd ? 1.0f : 0.0f);
  for (float v : p.policy.at("encoder.bias").data) EXPECT_EQ(v, 0.0f);
  // Fan-in scaled bound on the encoder.
  const double bound = std::sqrt(6.0 / small_policy().image_size());
  for (float v : p.policy.at("encoder.weight").data) EXPECT_LE(std::abs(v), bound);
  EXPECT_NO_THROW(check_param_shapes(p));
}

TEST(InitParams, PaperShapes) {
  EXPECT_EQ(default_conv_spec(3),
            (std::vector<ConvLayerSpec>{{16, 3}, {32, 7}, {64, 7}, {64, 7}, {64, 7}, {32, 7}, {16, 3}, {3, 5}}));
  PolicyConfig pc;
  EXPECT_EQ(pc.encoder_width, 256);
  EXPECT_EQ(pc.lstm_hidden, 512);
  EnhancerConfig ec;
  EXPECT_EQ(ec.patch_height, 60);
  EXPECT_EQ(ec.patch_width, 45);
  EXPECT_EQ(ec.global_fc_width, 256);
}

TEST(PolicyForward, NormalizedAndShaped) {
  const auto p = init_params<float>(small_policy(), small_enhancer(), 5);
  const Image img = random_image(12, 10, 3, 1);
  const auto [pm, mem] = policy_forward(p, img, RecurrentMemory::zeros(12), std::nullopt);
  EXPECT_EQ(pm.height, 12);
  EXPECT_EQ(pm.width, 10);
  ASSERT_EQ(pm.p.size(), 120u);
  double sum = 0;
  for (double v : pm.p) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_EQ(mem.hidden.size(), 12u);
}

TEST(PolicyForward, ZeroHeadIsUniform) {
  auto p = init_params<double>(small_policy(), small_enhancer(), 5);
  for (double& v : p.policy.at("head.weight").data) v = 0.0;
  const auto [pm, mem] = policy_forward(p, random_image(12, 10, 3, 2), RecurrentMemory::zeros(12), PatchLocation{3, 4});
  for (double v : pm.p) EXPECT_NEAR(v, 1.0 / 120.0, 1e-15);
}

TEST(PolicyForward, DeterministicAndStateful) {
  const auto p = init_params<float>(small_policy(), small_enhancer(), 5);
  const Image img = random_image(12, 10, 3, 3);
  const auto a = policy_forward(p, img, RecurrentMemory::zeros(12), std::nullopt);
  const auto b = policy_forward(p, img, RecurrentMemory::zeros(12), std::nullopt);
  EXPECT_EQ(a.first.p, b.first.p);
  EXPECT_EQ(a.second, b.second);
  const auto c = policy_forward(p, img, a.second, PatchLocation{2, 2});
  EXPECT_NE(a.first.p, c.first.p);
  const auto d = policy_forward(p, img, a.second, PatchLocation{9, 11});
  EXPECT_NE(c.first.p, d.first.p);
}

TEST(PolicyForward, WithoutPrevActionFeed) {
  PolicyConfig pc = small_policy();
  pc.feed_prev_action = false;
  const auto p = init_params<float>(pc, small_enhancer(), 5);
  EXPECT_EQ(p.policy.at("lstm.input_weight").shape[1], pc.encoder_width);
  const Image img = random_image(12, 10, 3, 3);
  const auto mem = RecurrentMemory::zeros(12);
  EXPECT_EQ(policy_forward(p, img, mem, PatchLocation{2, 2}).first.p,
            policy_forward(p, img, mem, PatchLocation{7, 1}).first.p);
}

TEST(PolicyForward, DimensionMismatch) {
  const auto p = init_params<float>(small_policy(), small_enhancer(), 5);
  EXPECT_THROW(policy_forward(p, random_image(11, 10, 3, 1), RecurrentMemory::zeros(12), std::nullopt), ShapeError);
  EXPECT_THROW(policy_forward(p, random_image(12, 10, 3, 1), RecurrentMemory::zeros(5), std::nullopt), ShapeError);
}

TEST(EnhanceForward, IdentityAtInit) {
  const auto p = init_params<float>(small_policy(), small_enhancer(), 9);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image patch = random_image(6, 5, 3, 100 + s);
    EXPECT_EQ(enhance_forward(p, patch, random_image(12, 10, 3, s)), patch);
  }
}

TEST(EnhanceForward, PaperPatchShape) {
  PolicyConfig pc{64, 64, 3, 8, 8, true};
  EnhancerConfig ec{64, 64, 3, 60, 45, 8, {{4, 3}, {3, 5}}};
  const auto p = init_params<float>(pc, ec, 1);
  const Image out = enhance_forward(p, random_image(60, 45, 3, 1), random_image(64, 64, 3, 2));
  EXPECT_EQ(out.height(), 60);
  EXPECT_EQ(out.width(), 45);
  EXPECT_EQ(out.channels(), 3);
}

TEST(EnhanceForward, GlobalContextReachesEveryPixel) {
  auto p = init_params<double>(small_policy(), small_enhancer(), 9);
  Rng rng(4);
  for (auto& v : p.enhancer.at("conv3.weight").data) v = uniform(rng, -0.2, 0.2);
  const Image patch = random_image(6, 5, 3, 7);
  Image whole = random_image(12, 10, 3, 8);
  const Image before = enhance_forward(p, patch, whole);
  whole.at(0, 0, 0) = 1.0 - whole.at(0, 0, 0);
  const Image after = enhance_forward(p, patch, whole);
  int changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before.data()[i] != after.data()[i];
  EXPECT_GT(changed, 0);
  EXPECT_THROW(enhance_forward(p, random_image(5, 5, 3, 1), whole), ShapeError);
}

TEST(Gradients, ZeroLossGivesZeroGradients) {
  const auto p = tiny_random_params(1);
  const Image img = random_image(8, 8, 1, 2);
  const auto g = gradients<double>(p, [&](ad::Tape<double>& tape) {
    const auto step = enhancer_graph(tape, p, random_image(4, 4, 1, 3), img);
    return ad::scale(ad::sum(step.output), 0.0);
  });
  for (const auto* group : {&g.policy, &g.enhancer})
    for (const auto& [name, t] : *group)
      for (double v : t.data) EXPECT_EQ(v, 0.0) << name;
  EXPECT_EQ(g.policy.size(), p.policy.size());
  EXPECT_EQ(g.enhancer.size(), p.enhancer.size());
}

TEST(Gradients, SumOfLastBias) {
  const auto p = tiny_random_params(1);
  const auto g = gradients<double>(p, [&](ad::Tape<double>& tape) {
    return ad::sum(bind(tape, p, ParamGroup::enhancer, "conv3.bias"));
  });
  for (const auto* group : {&g.policy, &g.enhancer})
    for (const auto& [name, t] : *group)
      for (double v : t.data) EXPECT_EQ(v, group == &g.enhancer && name == "conv3.bias" ? 1.0 : 0.0) << name;
}

TEST(Gradients, RejectsNonScalarLoss) {
  const auto p = tiny_random_params(1);
  EXPECT_THROW(gradients<double>(p, [&](ad::Tape<double>& tape) {
                 return bind(tape, p, ParamGroup::enhancer, "conv1.bias");
               }),
               ShapeError);
}

TEST(Gradients, TinyNetsMatchFiniteDifferences) {
  auto p = tiny_random_params(21);
  ASSERT_LE(p.parameter_count(), 5000u);
  const Image input = random_image(8, 8, 1, 5);
  const Image truth = random_image(8, 8, 1, 6);
  EpisodeConfig cfg;
  cfg.steps = 3;
  cfg.geom = {4, 4, 0.5};
  cfg.mode = SelectionMode::sample;
  Rng rng(2);
  const Trajectory traj = run_episode(p, input, cfg, rng);

  const auto enh_value = [&](const ParamSet<double>& q) {
    ad::Tape<double> tape;
    return enhancement_loss_graph(tape, q, traj, truth).value().data[0];
  };
  const auto enh = afh::check::grad_check(
      p, ParamGroup::enhancer, enh_value,
      gradients<double>(p, [&](ad::Tape<double>& t) { return enhancement_loss_graph(t, p, traj, truth); }).enhancer);
  EXPECT_LT(enh.max_rel_error, 1e-4) << enh.worst;

  const auto logp_value = [&](const ParamSet<double>& q) {
    ad::Tape<double> tape;
    return trajectory_log_prob(tape, q, traj).value().data[0];
  };
  const auto pol = afh::check::grad_check(
      p, ParamGroup::policy, logp_value,
      gradients<double>(p, [&](ad::Tape<double>& t) { return trajectory_log_prob(t, p, traj); }).policy);
  EXPECT_LT(pol.max_rel_error, 1e-4) << pol.worst;
}

TEST(Gradients, MaskedLogProbMatchesFiniteDifferences) {
  auto p = tiny_random_params(22);
  const Image input = random_image(8, 8, 1, 7);
  EpisodeConfig cfg;
  cfg.steps = 4;
  cfg.geom = {4, 4, 0.5};
  cfg.mode = SelectionMode::sample;
  cfg.mask_visited = true;
  Rng rng(3);
  const Trajectory traj = run_episode(p, input, cfg, rng);
  double recorded = 0;
  for (const auto& rec : traj.records) recorded += *rec.log_prob;
  {
    ad::Tape<double> tape;
    EXPECT_NEAR(trajectory_log_prob(tape, p, traj).value().data[0], recorded, 1e-10);
  }
  const auto logp_value = [&](const ParamSet<double>& q) {
    ad::Tape<double> tape;
    return trajectory_log_prob(tape, q, traj).value().data[0];
  };
  const auto pol = afh::check::grad_check(
      p, ParamGroup::policy, logp_value,
      gradients<double>(p, [&](ad::Tape<double>& t) { return trajectory_log_prob(t, p, traj); }).policy);
  EXPECT_LT(pol.max_rel_error, 1e-4) << pol.worst;
}
