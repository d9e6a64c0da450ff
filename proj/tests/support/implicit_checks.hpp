// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomized checks of the equilibrium-map gradients on tiny contractive
// instances: the dense implicit oracle against finite differences of the
// converged forward, and the sign agreement between JFB and that oracle.

#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "deqcsi/codec.hpp"
#include "deqcsi/equilibrium.hpp"
#include "support/test_support.hpp"

namespace deqcsi::testing {

struct TinyEq {
  EqParams<double> params;
  Tensor<double> injection;
  Tensor<double> upstream;  // loss = <upstream, z*>
};

inline double latent_spectral_norm(const EqParams<double>& p,
                                   const Tensor<double>& z,
                                   const Tensor<double>& x) {
  EqCache<double> cache;
  eq_apply(p, z, x, &cache);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(latent_jacobian(p, cache))
      .singularValues()(0);
}

inline Tensor<double> solve_fixed_point(const EqParams<double>& p,
                                        const Tensor<double>& x) {
  return fixed_point_iterate(
             [&](const Tensor<double>& z) { return eq_apply(p, z, x); }, x,
             IterationOptions::until(1e-14, 2000))
      .final_latent;
}

/// Random map with slopes, gain and weights all drawn, then shrunk until
/// its Jacobian at the fixed point has spectral norm below `bound`.
inline TinyEq random_tiny_eq(std::mt19937_64& rng, double bound = 0.9) {
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t c = 1 + rng() % 2, h = 2 + rng() % 3, w = 2 + rng() % 3;
  TinyEq t;
  auto& p = t.params;
  p = EqParams<double>(c);
  for (auto& v : p.wv) v = random_tensor(v.shape(), rng);
  for (auto& v : p.wh) v = random_tensor(v.shape(), rng);
  p.merge = random_tensor(p.merge.shape(), rng);
  for (auto& a : p.av) a.alpha[0] = 0.1 + 0.8 * u(rng);
  for (auto& a : p.ah) a.alpha[0] = 0.1 + 0.8 * u(rng);
  p.act.alpha[0] = 0.1 + 0.8 * u(rng);
  p.gain[0] = 0.6 * u(rng) - 0.1;
  spectral_rescale(p, 0.9 * (1.0 - std::abs(p.gain[0])), h, w, rng());
  t.injection = random_tensor({1, c, h, w}, rng);
  t.upstream = random_tensor({1, c, h, w}, rng);
  for (int shrink = 0; shrink < 40; ++shrink) {
    const auto z = solve_fixed_point(p, t.injection);
    if (latent_spectral_norm(p, z, t.injection) < bound) break;
    p.merge *= 0.8;
    p.gain[0] *= 0.8;
  }
  return t;
}

/// Worst relative error between the implicit oracle and central differences
/// of <upstream, z*(theta, x)> over parameters and injection.
inline double check_exact_implicit(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    TinyEq t = random_tiny_eq(rng);
    const auto z = solve_fixed_point(t.params, t.injection);
    const auto exact = exact_implicit_backward(t.params, z, t.injection, t.upstream);
    auto loss = [&] {
      return contract(solve_fixed_point(t.params, t.injection), t.upstream);
    };
    std::vector<double> fd;
    EqParams<double>::visit(t.params, "", [&](const std::string&, Tensor<double>& p) {
      const auto g = finite_difference(p, loss, 1e-5);
      fd.insert(fd.end(), g.begin(), g.end());
    });
    const auto gx = finite_difference(t.injection, loss, 1e-5);
    fd.insert(fd.end(), gx.begin(), gx.end());
    const auto an = flatten(exact);
    Tensor<double> a({an.size()}), b({fd.size()});
    std::copy(an.begin(), an.end(), a.begin());
    std::copy(fd.begin(), fd.end(), b.begin());
    worst = std::max(worst, relative_error(a, b));
  }
  return worst;
}

/// Fraction of trials where <JFB bundle, exact bundle> > 0.
inline double jfb_descent_fraction(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t positive = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    TinyEq t = random_tiny_eq(rng);
    const auto z = solve_fixed_point(t.params, t.injection);
    const auto jfb = flatten(jfb_backward(t.params, z, t.injection, t.upstream));
    const auto exact =
        flatten(exact_implicit_backward(t.params, z, t.injection, t.upstream));
    double dot = 0;
    for (std::size_t k = 0; k < jfb.size(); ++k) dot += jfb[k] * exact[k];
    if (dot > 0) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(trials);
}

}  // namespace deqcsi::testing
