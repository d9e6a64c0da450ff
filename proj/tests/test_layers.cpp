// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "deqcsi/layers.hpp"
#include "support/gradient_checks.hpp"
#include "support/test_support.hpp"

using namespace deqcsi;
using deqcsi::testing::naive_conv2d;
using deqcsi::testing::random_tensor;

namespace {

Tensor<double> ones(const Shape& s) { return Tensor<double>(s, 1.0); }

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Conv2d, OnesKernelCenterSumsNine) {
  const auto spec = ConvSpec::same(1, 1, 3, 3, 1);
  const auto out = conv2d(ones({1, 1, 3, 3}), spec, ones({1, 1, 3, 3}));
  EXPECT_EQ(out.at(0, 0, 1, 1), 9.0);
}

TEST(Conv2d, DilationTwoOnlyCenterTapLands) {
  const auto spec = ConvSpec::same(1, 1, 3, 3, 2);
  const auto out = conv2d(ones({1, 1, 3, 3}), spec, ones({1, 1, 3, 3}));
  EXPECT_EQ(out.at(0, 0, 1, 1), 1.0);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 1, 5, 4}, rng);
  const auto out = conv2d(x, ConvSpec::same(1, 1, 1, 1), ones({1, 1, 1, 1}));
  EXPECT_EQ(out, x);
}

TEST(Conv2d, MatchesNaiveOracleBitwiseInDouble) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto k = deqcsi::testing::kSupportedKernels[t % 8];
    const std::size_t cin = 1 + rng() % 8, cout = 1 + rng() % 8;
    const auto spec = ConvSpec::same(cin, cout, k.kh, k.kw, k.d, t % 2);
    const auto x = random_tensor({1 + rng() % 2, cin, 4 + rng() % 13, 4 + rng() % 13}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng);
    const auto b = random_tensor({cout}, rng);
    const std::span<const double> bias = spec.has_bias ? b.span() : std::span<const double>{};
    EXPECT_TRUE(bitwise_equal(conv2d(x, spec, w, bias), naive_conv2d(x, spec, w, bias)))
        << "instance " << t;
  }
}

TEST(Conv2d, SinglePrecisionWithinOneMicroRelative) {
  std::mt19937_64 rng(12);
  const auto spec = ConvSpec::same(8, 8, 3, 3, 1, true);
  const auto x = random_tensor({2, 8, 16, 16}, rng);
  const auto w = random_tensor(spec.weight_shape(), rng);
  const auto b = random_tensor({8}, rng);
  const auto ref = naive_conv2d(x, spec, w, b.span());
  const auto xf = Tensor<float>::cast(x), wf = Tensor<float>::cast(w),
             bf = Tensor<float>::cast(b);
  const auto got = Tensor<double>::cast(conv2d(xf, spec, wf, bf.span()));
  EXPECT_LE(deqcsi::testing::relative_error(got, ref), 1e-6);
}

TEST(Conv2d, SamePaddingPreservesSpatialExtent) {
  for (const auto& k : deqcsi::testing::kSupportedKernels) {
    const auto spec = ConvSpec::same(2, 3, k.kh, k.kw, k.d);
    const auto out = conv2d(ones({1, 2, 8, 8}), spec, ones(spec.weight_shape()));
    EXPECT_EQ(out.shape(), (Shape{1, 3, 8, 8}))
        << k.kh << "x" << k.kw << " d=" << k.d;
  }
}

TEST(Conv2d, ChannelMismatchNamesAxis) {
  const auto spec = ConvSpec::same(2, 1, 3, 3);
  try {
    conv2d(ones({1, 3, 4, 4}), spec, ones(spec.weight_shape()));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "channels");
    EXPECT_EQ(e.expected(), 2u);
    EXPECT_EQ(e.actual(), 3u);
  }
}

TEST(Conv2d, ReceptiveFieldLargerThanPaddedInputRejected) {
  ConvSpec spec{1, 1, 3, 1, 3, 0, 0, false};  // extent 7 over 4 rows
  EXPECT_THROW(conv2d(ones({1, 1, 4, 4}), spec, ones(spec.weight_shape())),
               DimensionError);
}

TEST(Conv2dBackward, ScalarWeightGradientIsInput) {
  const auto spec = ConvSpec::same(1, 1, 1, 1);
  const Tensor<double> x({1, 1, 1, 1}, {3.5});
  const Tensor<double> w({1, 1, 1, 1}, {-2.0});
  const auto g = conv2d_backward(x, spec, w, ones({1, 1, 1, 1}));
  EXPECT_EQ(g.weights[0], 3.5);
  EXPECT_EQ(g.input[0], -2.0);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const auto spec = ConvSpec::same(2, 3, 3, 1, 2, true);
  const auto x = random_tensor({2, 2, 6, 6}, rng);
  const auto w = random_tensor(spec.weight_shape(), rng);
  const auto g = conv2d_backward(x, spec, w, Tensor<double>({2, 3, 6, 6}));
  for (double v : g.input) EXPECT_EQ(v, 0.0);
  for (double v : g.weights) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, MatchesFiniteDifferencesOnSmallInstance) {
  std::mt19937_64 rng(8);
  const auto spec = ConvSpec::same(2, 2, 3, 3, 1, true);
  auto x = random_tensor({1, 2, 4, 4}, rng);
  auto w = random_tensor(spec.weight_shape(), rng);
  auto b = random_tensor({2}, rng);
  const auto r = random_tensor({1, 2, 4, 4}, rng);
  auto loss = [&] { return dot(conv2d(x, spec, w, b.span()), r); };
  const auto g = conv2d_backward(x, spec, w, r);
  using deqcsi::testing::finite_difference;
  using deqcsi::testing::relative_error;
  EXPECT_LE(relative_error(g.input, finite_difference(x, loss)), 1e-4);
  EXPECT_LE(relative_error(g.weights, finite_difference(w, loss)), 1e-4);
  EXPECT_LE(relative_error(g.bias, finite_difference(b, loss)), 1e-4);
}

TEST(Conv2dBackward, UpstreamShapeChecked) {
  const auto spec = ConvSpec::same(1, 2, 3, 3);
  EXPECT_THROW(conv2d_backward(ones({1, 1, 4, 4}), spec, ones(spec.weight_shape()),
                               ones({1, 1, 4, 4})),
               DimensionError);
}

TEST(FullyConnected, IdentityWeightsZeroBias) {
  Tensor<double> eye({4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  const Tensor<double> x({1, 4}, {1, -2, 3, 0.5});
  const Tensor<double> b({4});
  EXPECT_EQ(fully_connected(x, eye, b.span()), x);
}

TEST(FullyConnected, ZeroWeightsGiveBias) {
  const Tensor<double> b({3}, {0.1, -0.2, 7});
  const auto y = fully_connected(ones({1, 5}), Tensor<double>({3, 5}), b.span());
  EXPECT_EQ(y.reshaped({3}), b);
}

TEST(FullyConnected, MatchesNaiveMatvecExactly) {
  std::mt19937_64 rng(21);
  const auto x = random_tensor({1, 8}, rng);
  const auto w = random_tensor({3, 8}, rng);
  const auto b = random_tensor({3}, rng);
  const auto y = fully_connected(x, w, b.span());
  for (std::size_t o = 0; o < 3; ++o) {
    double acc = 0;
    for (std::size_t i = 0; i < 8; ++i) acc += w[o * 8 + i] * x[i];
    EXPECT_EQ(y[o], acc + b[o]);
  }
}

TEST(FullyConnected, LengthMismatchRejected) {
  EXPECT_THROW(fully_connected(ones({1, 4}), ones({2, 5}), ones({2}).span()),
               DimensionError);
}

TEST(Prelu, PositivePassesThrough) {
  PreluParam<double> p;
  p.alpha[0] = -7;
  EXPECT_EQ(prelu(Tensor<double>({1}, {2.0}), p)[0], 2.0);
}

TEST(Prelu, NegativeScaledBySlope) {
  PreluParam<double> p;
  p.alpha[0] = 0.25;
  EXPECT_EQ(prelu(Tensor<double>({1}, {-3.0}), p)[0], -0.75);
}

TEST(Prelu, UnitSlopeIsIdentity) {
  std::mt19937_64 rng(2);
  PreluParam<double> p;
  p.alpha[0] = 1;
  const auto x = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_EQ(prelu(x, p), x);
}

TEST(Prelu, SlopeGradientSumsNegativeSide) {
  PreluParam<double> p;
  const Tensor<double> x({4}, {-1, 2, -3, 0});
  const Tensor<double> up({4}, {1, 1, 2, 1});
  const auto g = prelu_backward(x, p, up);
  EXPECT_EQ(g.alpha, -1.0 * 1 + -3.0 * 2);
  EXPECT_EQ(g.input[1], 1.0);
  EXPECT_EQ(g.input[0], 0.25);
}

TEST(Normalize, ConstantInputMapsToZero) {
  NormParam<double> p(2, NormMode::per_sample);
  const auto y = normalize(Tensor<double>({1, 2, 3, 3}, 4.2), p, Phase::train);
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, AffineOnStandardizedInput) {
  // 1 x 1 x 2 x 2 plane with mean 0 and variance 1
  const Tensor<double> x({1, 1, 2, 2}, {1, -1, 1, -1});
  NormParam<double> p(1, NormMode::per_sample);
  p.scale[0] = 2;
  p.shift[0] = 1;
  const auto y = normalize(x, p, Phase::train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 2 * x[i] + 1, 1e-5);
}

TEST(Normalize, RandomBatchIsStandardizedPerChannel) {
  std::mt19937_64 rng(9);
  for (auto mode : {NormMode::batch, NormMode::per_sample}) {
    const auto x = random_tensor({4, 3, 8, 8}, rng, 5.0);
    NormParam<double> p(3, mode);
    NormCache<double> cache;
    normalize(x, p, Phase::train, &cache);
    const std::size_t groups = mode == NormMode::batch ? 3 : 12;
    for (std::size_t g = 0; g < groups; ++g) {
      double sum = 0, sq = 0, count = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
          const bool member = mode == NormMode::batch ? c == g : b * 3 + c == g;
          if (!member) continue;
          for (std::size_t i = 0; i < 64; ++i) {
            const double v = cache.xhat[(b * 3 + c) * 64 + i];
            sum += v;
            sq += v * v;
            ++count;
          }
        }
      const double mean = sum / count;
      EXPECT_LE(std::abs(mean), 1e-6);
      EXPECT_NEAR(sq / count - mean * mean, 1.0, 1e-4);
    }
  }
}

TEST(Normalize, BatchModeInferenceUsesRunningStatistics) {
  NormParam<double> p(1, NormMode::batch);
  p.running_mean[0] = 1;
  p.running_var[0] = 4 - 1e-5;
  const auto y = normalize(Tensor<double>({1, 1, 1, 2}, {3, 5}), p, Phase::infer);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 2.0, 1e-12);
}

TEST(Normalize, RunningStatisticsMoveWithMomentum) {
  NormParam<double> p(1, NormMode::batch);
  NormCache<double> cache;
  normalize(Tensor<double>({2, 1, 1, 1}, {1, 3}), p, Phase::train, &cache);
  update_running_stats(p, cache, 2);
  EXPECT_NEAR(p.running_mean[0], 0.2, 1e-12);
  EXPECT_NEAR(p.running_var[0], 0.9 + 0.1 * 2.0, 1e-12);
}

TEST(Normalize, ChannelMismatchRejected) {
  NormParam<double> p(2, NormMode::per_sample);
  EXPECT_THROW(normalize(ones({1, 3, 2, 2}), p, Phase::train), DimensionError);
}

TEST(Sigmoid, Values) {
  EXPECT_EQ(sigmoid_scalar(0.0), 0.5);
  EXPECT_NEAR(sigmoid_scalar(50.0), 1.0, 1e-15);
  EXPECT_LT(sigmoid_scalar(50.0), 1.0);
  for (double x : {0.3, 2.0, 7.5, 31.0})
    EXPECT_NEAR(sigmoid_scalar(-x), 1.0 - sigmoid_scalar(x), 1e-12);
}

TEST(Sigmoid, ExtremeInputsStayFinite) {
  const Tensor<double> x({4}, {-1e308, -800, 800, 1e308});
  const auto y = sigmoid(x);
  EXPECT_TRUE(y.all_finite());
  for (double v : y) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(GradientChecks, EveryPrimitiveAgreesWithFiniteDifferences) {
  using namespace deqcsi::testing;
  EXPECT_LE(check_conv2d(16, 1), 1e-4);
  EXPECT_LE(check_fully_connected(16, 2), 1e-4);
  EXPECT_LE(check_prelu(16, 3), 1e-4);
  EXPECT_LE(check_normalize(16, 4), 1e-4);
  EXPECT_LE(check_sigmoid(16, 5), 1e-4);
}
