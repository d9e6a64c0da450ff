// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "deqcsi/flops.hpp"

using namespace deqcsi;

TEST(FlopsFc, Examples) {
  EXPECT_EQ(flops_fc(2048, 128), 524288u);
  EXPECT_EQ(flops_fc(1, 1), 2u);
  EXPECT_EQ(flops_fc(7, 0), 0u);
}

TEST(FlopsConv, Examples) {
  EXPECT_EQ(flops_conv(2, 5, 5, 32, 32, 2), 204800u);
  EXPECT_EQ(flops_conv(1, 1, 1, 1, 1, 1), 2u);
  EXPECT_EQ(flops_conv(ConvSpec::same(4, 4, 3, 1, 1), 8, 8),
            flops_conv(ConvSpec::same(4, 4, 3, 1, 3), 8, 8));
}

TEST(FlopsReport, EncoderBlocksAtOneSixteenth) {
  const auto r = flops_report(CodecConfig::with_gamma(32, 32, 1.0 / 16));
  EXPECT_EQ(r.flops.pre, 204800u);
  EXPECT_EQ(r.flops.down, 524288u);
  // Six 2->2 three-tap convs plus the 4->2 merge, each over 32x32.
  EXPECT_EQ(r.flops.eim, 6u * 2 * 2 * 3 * 1024 * 2 + 2u * 4 * 1024 * 2);
  EXPECT_EQ(r.encoder_flops(10), 2367488u);
}

TEST(FlopsReport, ScaleBoundsAtOneSixteenth) {
  const auto r = flops_report(CodecConfig::with_gamma(32, 32, 1.0 / 16));
  EXPECT_LT(r.encoder_params(), 270000u);
  const double rel = (static_cast<double>(r.encoder_flops(10)) - 2.46e6) / 2.46e6;
  EXPECT_LE(std::abs(rel), 0.10);
}

TEST(TotalFlops, Linearity) {
  const auto r = flops_report(CodecConfig::with_gamma(16, 16, 1.0 / 8));
  EXPECT_EQ(total_flops(r, 0, 0).first, r.flops.pre + r.flops.down);
  EXPECT_EQ(total_flops(r, 0, 0).second, r.flops.up + r.flops.post);
  for (std::uint64_t t = 0; t < 20; ++t) {
    EXPECT_EQ(total_flops(r, t + 1, t).first - total_flops(r, t, t).first,
              r.flops.eim);
    EXPECT_EQ(total_flops(r, t, t + 1).second - total_flops(r, t, t).second,
              r.flops.dim);
  }
}

TEST(BudgetToIterations, FloorArithmetic) {
  const auto r = flops_report(CodecConfig{});
  const auto fixed_e = r.flops.pre + r.flops.down;
  const auto fixed_d = r.flops.up + r.flops.post;
  EXPECT_EQ(encoder_iterations(r, fixed_e + 2 * r.flops.eim - 1), 1u);
  EXPECT_EQ(encoder_iterations(r, fixed_e + 7 * r.flops.eim), 7u);
  EXPECT_EQ(encoder_iterations(r, fixed_e + r.flops.eim), 1u);
  EXPECT_EQ(encoder_iterations(r, fixed_e + 3 * r.flops.eim + r.flops.eim / 2), 3u);
  const auto it = budget_to_iterations(r, fixed_e + 4 * r.flops.eim,
                                       fixed_d + 6 * r.flops.dim + 5);
  EXPECT_EQ(it.te, 4u);
  EXPECT_EQ(it.td, 6u);
}

TEST(BudgetToIterations, DoublingBudgetDoublesIterations) {
  const auto r = flops_report(CodecConfig{});
  const auto fixed_e = r.flops.pre + r.flops.down;
  for (std::uint64_t k = 1; k < 12; ++k)
    EXPECT_EQ(encoder_iterations(r, fixed_e + 2 * k * r.flops.eim),
              2 * encoder_iterations(r, fixed_e + k * r.flops.eim));
}

TEST(BudgetToIterations, InfeasibleReportsMinimum) {
  const auto r = flops_report(CodecConfig{});
  const auto minimum = r.flops.pre + r.flops.down + r.flops.eim;
  try {
    encoder_iterations(r, minimum - 1);
    FAIL();
  } catch (const BudgetInfeasible& e) {
    EXPECT_EQ(e.minimum(), minimum);
  }
  EXPECT_THROW(decoder_iterations(r, 0), BudgetInfeasible);
}

TEST(BudgetToIterations, SandwichOnRandomBudgets) {
  std::mt19937_64 rng(11);
  for (double gamma : {1.0 / 4, 1.0 / 8, 1.0 / 16, 1.0 / 32}) {
    const auto r = flops_report(CodecConfig::with_gamma(32, 32, gamma));
    std::uniform_int_distribution<std::uint64_t> extra(0, 500 * r.flops.eim);
    for (int i = 0; i < 1000; ++i) {
      const auto re = r.flops.pre + r.flops.down + r.flops.eim + extra(rng);
      const auto te = encoder_iterations(r, re);
      const auto fe = total_flops(r, te, 1).first;
      EXPECT_LE(fe, re);
      EXPECT_LT(re, fe + r.flops.eim);
    }
  }
}

TEST(CodecConfigTest, GammaMustGiveIntegerCodeword) {
  EXPECT_EQ(CodecConfig::with_gamma(32, 32, 1.0 / 16).m, 128u);
  EXPECT_EQ(CodecConfig::with_gamma(4, 4, 1.0 / 32).m, 1u);
  EXPECT_THROW(CodecConfig::with_gamma(4, 4, 1.0 / 64), Error);
  EXPECT_THROW(CodecConfig::with_gamma(8, 8, 0.3), Error);
}
