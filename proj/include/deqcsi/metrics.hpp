// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "deqcsi/channel.hpp"
#include "deqcsi/error.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

/// Mean over samples of ||ref - hat||^2 / ||ref||^2. Samples whose reference
/// has zero norm are skipped and counted in `excluded`.
struct Nmse {
  double linear = 0;
  std::size_t samples = 0;
  std::size_t excluded = 0;
  std::vector<double> per_sample;

  /// 10 log10(linear); -inf for a perfect reconstruction.
  double db() const {
    return linear > 0 ? 10.0 * std::log10(linear)
                      : -std::numeric_limits<double>::infinity();
  }
  /// 95% normal-approximation interval of the mean, in dB (lower end may
  /// be -inf).
  std::pair<double, double> ci95_db() const {
    if (per_sample.size() < 2) return {db(), db()};
    double sq = 0;
    for (double v : per_sample) sq += (v - linear) * (v - linear);
    const double se =
        std::sqrt(sq / (per_sample.size() - 1) / per_sample.size());
    auto to_db = [](double v) {
      return v > 0 ? 10.0 * std::log10(v)
                   : -std::numeric_limits<double>::infinity();
    };
    return {to_db(linear - 1.96 * se), to_db(linear + 1.96 * se)};
  }
};

/// NMSE over samples of `stride` values each (physical scale).
inline Nmse nmse(std::span<const double> hat, std::span<const double> ref,
                 std::size_t stride) {
  if (hat.size() != ref.size())
    throw DimensionError("nmse", "length", ref.size(), hat.size());
  if (stride == 0 || ref.size() % stride != 0)
    throw DimensionError("nmse", "sample stride", stride, ref.size());
  Nmse out;
  for (std::size_t s = 0; s < ref.size() / stride; ++s) {
    double err = 0, pow = 0;
    for (std::size_t i = s * stride; i < (s + 1) * stride; ++i) {
      const double d = ref[i] - hat[i];
      err += d * d;
      pow += ref[i] * ref[i];
    }
    if (pow == 0) {
      ++out.excluded;
      continue;
    }
    out.per_sample.push_back(err / pow);
  }
  out.samples = out.per_sample.size();
  double sum = 0;
  for (double v : out.per_sample) sum += v;
  out.linear = out.samples ? sum / out.samples : 0;
  return out;
}

/// NMSE of unit-scale N x 2 x na x nt tensors after mapping both back to
/// physical scale with `meta`.
template <class T>
Nmse nmse_unit(const Tensor<T>& hat, const Tensor<T>& ref, const NormMeta& meta) {
  hat.require_same_shape("nmse_unit", ref);
  const auto a = denormalize<T>(hat.span(), meta);
  const auto b = denormalize<T>(ref.span(), meta);
  return nmse(a, b, ref.size() / std::max<std::size_t>(1, ref.dim(0)));
}

}  // namespace deqcsi
