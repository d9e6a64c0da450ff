// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "deqcsi/trainer.hpp"
#include "support/implicit_checks.hpp"
#include "support/test_support.hpp"

using namespace deqcsi;
using deqcsi::testing::random_tensor;

namespace {

// One-channel map on a 1 x 1 plane with silent branches:
// z' = prelu(gain * z + x), which is affine for positive values.
EqParams<double> scalar_map(double gain) {
  auto p = EqParams<double>::identity(1);
  p.gain[0] = gain;
  return p;
}

Tensor<double> scalar(double v) { return Tensor<double>({1, 1, 1, 1}, v); }

double gain_gradient(const EqGrads<double>& g) { return g.params.gain[0]; }

ChannelConfig small_channel() {
  ChannelConfig c;
  c.nt = 8;
  c.nc = 32;
  c.na = 8;
  c.paths = 3;
  c.delay_spread = 7;
  c.seed = 5;
  return c;
}

CodecConfig small_codec() {
  CodecConfig c = CodecConfig::with_gamma(8, 8, 0.25);
  c.width = 8;
  return c;
}

}  // namespace

TEST(MseLoss, IdenticalTensorsGiveZero) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({3, 2, 4, 4}, rng);
  EXPECT_EQ(mse_loss(a, a), 0.0);
}

TEST(MseLoss, ConstantOffsetGivesItsSquare) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({2, 2, 3, 3}, rng);
  auto b = a;
  for (auto& v : b) v += 0.25;
  EXPECT_NEAR(mse_loss(b, a), 0.0625, 1e-15);
}

TEST(MseLoss, MatchesNaiveSum) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({4, 2, 5, 3}, rng);
  const auto b = random_tensor({4, 2, 5, 3}, rng);
  double acc = 0;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double d = a.at(n, c, i, j) - b.at(n, c, i, j);
          acc += d * d;
        }
  EXPECT_NEAR(mse_loss(a, b), acc / 120.0, 1e-12);
}

TEST(MseLoss, ShapeMismatchRejected) {
  EXPECT_THROW(mse_loss(Tensor<double>({2, 3}), Tensor<double>({3, 2})),
               DimensionError);
}

TEST(Jfb, ZeroUpstreamGivesZeroBundle) {
  std::mt19937_64 rng(4);
  auto t = deqcsi::testing::random_tiny_eq(rng);
  const auto z = deqcsi::testing::solve_fixed_point(t.params, t.injection);
  Tensor<double> zero(z.shape());
  for (double v : flatten(jfb_backward(t.params, z, t.injection, zero)))
    EXPECT_EQ(v, 0.0);
}

TEST(Jfb, ScalarFixedPointClosedForm) {
  // z* = 0.5 z* + 1 gives z* = 2; exact dz*/dgain = z* / (1 - gain) = 4.
  const auto p = scalar_map(0.5);
  const auto x = scalar(1);
  const auto z = deqcsi::testing::solve_fixed_point(p, x);
  ASSERT_NEAR(z[0], 2.0, 1e-12);
  const auto jfb = jfb_backward(p, z, x, scalar(1));
  const auto exact = exact_implicit_backward(p, z, x, scalar(1));
  EXPECT_NEAR(gain_gradient(jfb), 2.0, 1e-12);
  EXPECT_NEAR(gain_gradient(exact), 4.0, 1e-10);
  EXPECT_GT(gain_gradient(jfb) * gain_gradient(exact), 0);
  EXPECT_NEAR(exact.injection[0], 2.0, 1e-10);  // 1 / (1 - gain)
}

TEST(Jfb, ConstantMapEqualsExact) {
  std::mt19937_64 rng(5);
  auto t = deqcsi::testing::random_tiny_eq(rng);
  for (auto& w : t.params.wv) w.fill(0);
  for (auto& w : t.params.wh) w.fill(0);
  t.params.gain[0] = 0;
  const auto z = deqcsi::testing::solve_fixed_point(t.params, t.injection);
  const auto jfb = flatten(jfb_backward(t.params, z, t.injection, t.upstream));
  const auto exact =
      flatten(exact_implicit_backward(t.params, z, t.injection, t.upstream));
  ASSERT_EQ(jfb.size(), exact.size());
  for (std::size_t i = 0; i < jfb.size(); ++i) EXPECT_EQ(jfb[i], exact[i]) << i;
}

TEST(Jfb, DescentDirectionOnContractiveInstances) {
  EXPECT_GE(deqcsi::testing::jfb_descent_fraction(100, 6), 0.95);
}

TEST(ExactImplicit, MatchesFiniteDifferencesOfConvergedForward) {
  EXPECT_LE(deqcsi::testing::check_exact_implicit(10, 7), 1e-4);
}

TEST(ExactImplicit, SingularSystemRejected) {
  // gain 1 with silent branches: J = I at a positive fixed point.
  const auto p = scalar_map(1.0);
  EXPECT_THROW(exact_implicit_backward(p, scalar(1), scalar(0), scalar(1)),
               Error);
}

TEST(ExactImplicit, LargeLatentRejected) {
  const auto p = EqParams<double>::identity(2);
  const Tensor<double> z({1, 2, 64, 64});
  EXPECT_THROW(exact_implicit_backward(p, z, z, z), Error);
}

TEST(Memory, TrainingPeakDoesNotGrowWithIterations) {
  const auto c = small_codec();
  const auto p = init_params<float>(c, 3);
  std::mt19937_64 rng(8);
  const auto batch = random_tensor<float>({4, 2, 8, 8}, rng, 0.2);
  auto peak_for = [&](std::size_t te) {
    CodecParams<float> grads(c);
    memory::reset_peak();
    const auto base = memory::live();
    loss_and_gradients(p, batch, te, te, 4, grads);
    return memory::peak() - base;
  };
  const auto p2 = peak_for(2), p10 = peak_for(10), p30 = peak_for(30);
  EXPECT_LE(std::abs(double(p30 - p2)), 0.05 * double(p2));
  EXPECT_LE(std::abs(double(p10 - p2)), 0.05 * double(p2));
}

TEST(Train, LogRowsLossDropAndDeterminism) {
  const Dataset ds = make_dataset(small_channel(), 60, 48);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 12;
  cfg.te = 3;
  cfg.td = 2;
  cfg.chunk = 6;
  std::size_t epochs_seen = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics&) { ++epochs_seen; };
  const auto a = train(ds, small_codec(), cfg, hooks);
  ASSERT_EQ(a.log.size(), cfg.epochs);
  EXPECT_EQ(epochs_seen, cfg.epochs);
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    EXPECT_EQ(a.log[e].epoch, e + 1);
    EXPECT_DOUBLE_EQ(a.log[e].lr, cosine_lr(double(e), 3.0, cfg.eta_min,
                                            cfg.eta_max));
  }
  EXPECT_LT(a.log[0].train_mse, a.initial_train_mse);
  EXPECT_LE(a.best_val_nmse_db, a.log[0].val_nmse_db);

  const auto b = train(ds, small_codec(), cfg);
  EXPECT_TRUE(a.best == b.best);
  for (std::size_t e = 0; e < a.log.size(); ++e)
    EXPECT_EQ(a.log[e].train_mse, b.log[e].train_mse);
}

TEST(Train, InvalidConfigRejected) {
  const Dataset ds = make_dataset(small_channel(), 10, 8);
  TrainConfig cfg;
  cfg.eta_min = 1e-2;
  cfg.eta_max = 1e-3;
  EXPECT_THROW(train(ds, small_codec(), cfg), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(train(ds, small_codec(), cfg), Error);
  EXPECT_THROW(train(ds, CodecConfig{}, TrainConfig{}), DimensionError);
}
