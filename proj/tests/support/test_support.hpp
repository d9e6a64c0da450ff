// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared oracles for the test suites. Nothing here calls into the library
// kernels it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>

#include "deqcsi/layers.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi::testing {

template <class T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng,
                        double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(shape);
  for (auto& v : t) v = static_cast<T>(dist(rng));
  return t;
}

/// Textbook dilated cross-correlation over an explicitly zero-padded copy of
/// the input, summing channel, kernel row, kernel column in that order.
template <class T>
Tensor<T> naive_conv2d(const Tensor<T>& in, const ConvSpec& s,
                       const Tensor<T>& w, std::span<const T> bias = {}) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2),
                    wd = in.dim(3);
  const std::size_t ph = h + 2 * s.pad_h, pw = wd + 2 * s.pad_w;
  std::vector<T> padded(n * c * ph * pw, T(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wd; ++x)
          padded[((b * c + ch) * ph + y + s.pad_h) * pw + x + s.pad_w] =
              in.at(b, ch, y, x);
  const std::size_t oh = ph - s.dilation * (s.kernel_h - 1);
  const std::size_t ow = pw - s.dilation * (s.kernel_w - 1);
  Tensor<T> out({n, s.out_channels, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < s.out_channels; ++co)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc = 0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t m = 0; m < s.kernel_h; ++m)
              for (std::size_t q = 0; q < s.kernel_w; ++q)
                acc += padded[((b * c + ci) * ph + i + s.dilation * m) * pw +
                              j + s.dilation * q] *
                       w.at(co, ci, m, q);
          out.at(b, co, i, j) = bias.empty() ? acc : acc + bias[co];
        }
  return out;
}

/// Central differences of a scalar function with respect to every entry of
/// `x` (which is perturbed in place and restored).
inline Tensor<double> finite_difference(Tensor<double>& x,
                                        const std::function<double()>& f,
                                        double step = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  a.require_same_shape("relative_error", b);
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double relative_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0 ? 0.0 : std::abs(a - b) / denom;
}

/// <out, r>: a scalar loss whose gradient with respect to out is r.
inline double contract(const Tensor<double>& out, const Tensor<double>& r) {
  return dot(out, r);
}

}  // namespace deqcsi::testing
