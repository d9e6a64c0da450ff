// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <vector>

#include "deqcsi/error.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

/// eta_t = eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2.
inline double cosine_lr(double t, double total, double eta_min,
                        double eta_max) {
  if (total <= 0 || t < 0 || t > total)
    throw Error("cosine_lr: t must lie in [0, T] with T > 0");
  return eta_min +
         0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

/// Zero-mean normal draws with variance 2 / fan_in.
template <class T, class Rng>
Tensor<T> kaiming_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw Error("kaiming_init: fan_in must be >= 1");
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape);
  for (auto& v : t) v = static_cast<T>(dist(rng));
  return t;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over an ordered list of parameter tensors.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  std::size_t steps() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  /// params[i] -= lr * mhat / (sqrt(vhat) + eps), moments lazily shaped on
  /// the first call.
  void step(const std::vector<Tensor<T>*>& params,
            const std::vector<const Tensor<T>*>& grads, double lr) {
    if (params.size() != grads.size())
      throw DimensionError("Adam::step", "tensor count", params.size(),
                           grads.size());
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size())
      throw DimensionError("Adam::step", "tensor count", m_.size(),
                           params.size());
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      const Tensor<T>& g = *grads[k];
      p.require_same_shape("Adam::step", g);
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace deqcsi
