// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deqcsi/codec_config.hpp"
#include "deqcsi/error.hpp"
#include "deqcsi/layers.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

// ---------------------------------------------------------------------------
// Fixed-point driver
// ---------------------------------------------------------------------------

enum class IterationMode {
  budget,    // exactly `iterations` steps
  converge,  // until residual < tolerance, at most max_iters steps
};

struct IterationOptions {
  IterationMode mode = IterationMode::budget;
  std::size_t iterations = 1;
  double tolerance = 1e-3;
  std::size_t max_iters = 30;

  static IterationOptions fixed(std::size_t t) {
    return {IterationMode::budget, t, 1e-3, 30};
  }
  static IterationOptions until(double tol, std::size_t cap) {
    return {IterationMode::converge, cap, tol, cap};
  }
};

template <class T>
struct FixedPointTrace {
  Tensor<T> final_latent;
  std::vector<double> residuals;
  std::size_t iterations_used = 0;
};

/// Largest per-sample ||a - b|| / ||a|| over the leading axis. A zero latent
/// that did not move has residual 0.
template <class T>
double relative_residual(const Tensor<T>& next, const Tensor<T>& prev) {
  const std::size_t n = next.dim(0);
  double worst = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto a = next.sample(b);
    const auto p = prev.sample(b);
    double diff = 0, norm = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - p[i];
      diff += d * d;
      norm += static_cast<double>(a[i]) * a[i];
    }
    double r = 0;
    if (diff > 0)
      r = norm > 0 ? std::sqrt(diff / norm)
                   : std::numeric_limits<double>::infinity();
    worst = std::max(worst, r);
  }
  return worst;
}

/// z_t = map(z_{t-1}) from `init`. Throws DivergenceError at the first
/// non-finite iterate.
template <class T, class Map>
FixedPointTrace<T> fixed_point_iterate(Map&& map, const Tensor<T>& init,
                                       const IterationOptions& opt) {
  const std::size_t cap =
      opt.mode == IterationMode::budget ? opt.iterations : opt.max_iters;
  if (cap == 0) throw Error("fixed_point_iterate: iteration count must be >= 1");
  FixedPointTrace<T> trace;
  trace.final_latent = init;
  for (std::size_t t = 1; t <= cap; ++t) {
    Tensor<T> next = map(std::as_const(trace.final_latent));
    if (!next.all_finite()) throw DivergenceError(t);
    const double r = relative_residual(next, trace.final_latent);
    trace.residuals.push_back(r);
    trace.final_latent = std::move(next);
    trace.iterations_used = t;
    if (opt.mode == IterationMode::converge && r < opt.tolerance) break;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Equilibrium map: two dilated branches, 1x1 merge, gated shortcut
//
//   M' = prelu( merge[ branch_v(M) | branch_h(M) ] + gain * M + X )
//
// Each branch is three [conv (d = 1, 2, 3) -> prelu] modules; vertical uses
// 3x1 kernels and horizontal 1x3. With zero weights, gain 1, slope 1 and
// X = 0 the map is the identity.
// ---------------------------------------------------------------------------

template <class T>
struct EqParams {
  std::size_t channels = 0;
  std::array<Tensor<T>, 3> wv, wh;
  std::array<PreluParam<T>, 3> av, ah;
  Tensor<T> merge;
  Tensor<T> gain{Shape{1}, T(0.5)};
  PreluParam<T> act;

  EqParams() = default;
  explicit EqParams(std::size_t c) : channels(c) {
    const auto sv = branch_specs(c, true), sh = branch_specs(c, false);
    for (std::size_t k = 0; k < 3; ++k) {
      wv[k] = Tensor<T>(sv[k].weight_shape());
      wh[k] = Tensor<T>(sh[k].weight_shape());
    }
    merge = Tensor<T>(fuse_spec(c).weight_shape());
  }

  /// Visits (name, tensor) for every trainable tensor in a fixed order.
  template <class Self, class Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    for (std::size_t k = 0; k < 3; ++k) {
      fn(prefix + ".v" + std::to_string(k) + ".weight", self.wv[k]);
      fn(prefix + ".v" + std::to_string(k) + ".alpha", self.av[k].alpha);
    }
    for (std::size_t k = 0; k < 3; ++k) {
      fn(prefix + ".h" + std::to_string(k) + ".weight", self.wh[k]);
      fn(prefix + ".h" + std::to_string(k) + ".alpha", self.ah[k].alpha);
    }
    fn(prefix + ".merge.weight", self.merge);
    fn(prefix + ".gain", self.gain);
    fn(prefix + ".act.alpha", self.act.alpha);
  }

  /// Zero weights, unit gain and slopes: every latent is a fixed point when
  /// the injection is zero.
  static EqParams identity(std::size_t c) {
    EqParams p(c);
    p.gain[0] = T(1);
    p.act.alpha[0] = T(1);
    for (std::size_t k = 0; k < 3; ++k) {
      p.av[k].alpha[0] = T(1);
      p.ah[k].alpha[0] = T(1);
    }
    return p;
  }
};

template <class T>
struct EqCache {
  Tensor<T> m;
  std::array<Tensor<T>, 3> in_v, in_h;    // conv inputs
  std::array<Tensor<T>, 3> pre_v, pre_h;  // conv outputs
  Tensor<T> cat;
  Tensor<T> u;  // final prelu input
};

namespace detail {

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    T* dst = out.data() + s * (ca + cb) * plane;
    std::copy_n(a.data() + s * ca * plane, ca * plane, dst);
    std::copy_n(b.data() + s * cb * plane, cb * plane, dst + ca * plane);
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t,
                                               std::size_t ca) {
  const std::size_t n = t.dim(0), c = t.dim(1), cb = c - ca;
  const std::size_t plane = t.dim(2) * t.dim(3);
  Tensor<T> a({n, ca, t.dim(2), t.dim(3)}), b({n, cb, t.dim(2), t.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    const T* src = t.data() + s * c * plane;
    std::copy_n(src, ca * plane, a.data() + s * ca * plane);
    std::copy_n(src + ca * plane, cb * plane, b.data() + s * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> run_branch(const std::array<Tensor<T>, 3>& w,
                     const std::array<PreluParam<T>, 3>& a, bool vertical,
                     std::size_t c, const Tensor<T>& m,
                     std::array<Tensor<T>, 3>* ins,
                     std::array<Tensor<T>, 3>* pres) {
  const auto specs = branch_specs(c, vertical);
  Tensor<T> t = m;
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor<T> pre = conv2d(t, specs[k], w[k]);
    if (ins) (*ins)[k] = std::move(t);
    t = prelu(pre, a[k]);
    if (pres) (*pres)[k] = std::move(pre);
  }
  return t;
}

}  // namespace detail

/// One application of the equilibrium map. `cache` keeps what a single
/// backward pass needs.
template <class T>
Tensor<T> eq_apply(const EqParams<T>& p, const Tensor<T>& m,
                   const Tensor<T>& x, EqCache<T>* cache = nullptr) {
  m.require_same_shape("eq_apply", x);
  if (m.rank() != 4 || m.dim(1) != p.channels)
    throw DimensionError("eq_apply", "channels", p.channels,
                         m.rank() == 4 ? m.dim(1) : 0);
  const std::size_t c = p.channels;
  Tensor<T> bv = detail::run_branch(p.wv, p.av, true, c, m,
                                    cache ? &cache->in_v : nullptr,
                                    cache ? &cache->pre_v : nullptr);
  Tensor<T> bh = detail::run_branch(p.wh, p.ah, false, c, m,
                                    cache ? &cache->in_h : nullptr,
                                    cache ? &cache->pre_h : nullptr);
  Tensor<T> cat = detail::concat_channels(bv, bh);
  Tensor<T> u = conv2d(cat, fuse_spec(c), p.merge);
  const T g = p.gain[0];
  for (std::size_t i = 0; i < u.size(); ++i) u[i] += g * m[i] + x[i];
  Tensor<T> out = prelu(u, p.act);
  if (cache) {
    cache->m = m;
    cache->cat = std::move(cat);
    cache->u = std::move(u);
  }
  return out;
}

template <class T>
struct EqGrads {
  EqParams<T> params;
  Tensor<T> latent;     // empty unless requested
  Tensor<T> injection;
};

/// Vector-Jacobian product of one application through the cached point.
template <class T>
EqGrads<T> eq_backward(const EqParams<T>& p, const EqCache<T>& cache,
                       const Tensor<T>& upstream, bool need_latent) {
  const std::size_t c = p.channels;
  EqGrads<T> g;
  g.params = EqParams<T>(c);
  auto du = prelu_backward(cache.u, p.act, upstream);
  g.params.act.alpha[0] = du.alpha;
  g.params.gain[0] = static_cast<T>(dot(du.input, cache.m));
  g.injection = du.input;
  auto dcat = conv2d_backward(cache.cat, fuse_spec(c), p.merge, du.input);
  g.params.merge = std::move(dcat.weights);
  auto [dv, dh] = detail::split_channels(dcat.input, c);
  auto branch_back = [&](bool vertical, Tensor<T> d,
                         const std::array<Tensor<T>, 3>& w,
                         const std::array<PreluParam<T>, 3>& a,
                         const std::array<Tensor<T>, 3>& ins,
                         const std::array<Tensor<T>, 3>& pres,
                         std::array<Tensor<T>, 3>& gw,
                         std::array<PreluParam<T>, 3>& ga) {
    const auto specs = branch_specs(c, vertical);
    for (std::size_t k = 3; k-- > 0;) {
      auto dp = prelu_backward(pres[k], a[k], d);
      ga[k].alpha[0] = dp.alpha;
      auto dc = conv2d_backward(ins[k], specs[k], w[k], dp.input,
                                k > 0 || need_latent);
      gw[k] = std::move(dc.weights);
      d = std::move(dc.input);
    }
    return d;
  };
  Tensor<T> mv = branch_back(true, std::move(dv), p.wv, p.av, cache.in_v,
                             cache.pre_v, g.params.wv, g.params.av);
  Tensor<T> mh = branch_back(false, std::move(dh), p.wh, p.ah, cache.in_h,
                             cache.pre_h, g.params.wh, g.params.ah);
  if (need_latent) {
    g.latent = Tensor<T>(cache.m.shape());
    const T gain = p.gain[0];
    for (std::size_t i = 0; i < g.latent.size(); ++i)
      g.latent[i] = gain * du.input[i] + mv[i] + mh[i];
  }
  return g;
}

/// Flattens every parameter gradient, then the injection gradient.
template <class T>
std::vector<double> flatten(const EqGrads<T>& g) {
  std::vector<double> out;
  EqParams<T>::visit(g.params, "", [&](const std::string&, const Tensor<T>& t) {
    out.insert(out.end(), t.begin(), t.end());
  });
  out.insert(out.end(), g.injection.begin(), g.injection.end());
  return out;
}

/// Jacobian-free gradient: one backward pass through the map at the last
/// iterate, ignoring the latent dependence of earlier iterations.
template <class T>
EqGrads<T> jfb_backward(const EqParams<T>& p, const Tensor<T>& latent_star,
                        const Tensor<T>& injection, const Tensor<T>& upstream) {
  EqCache<T> cache;
  eq_apply(p, latent_star, injection, &cache);
  return eq_backward(p, cache, upstream, false);
}

/// Dense Jacobian of the map w.r.t. the latent, J[i][j] = d out_i / d m_j.
template <class T>
Eigen::MatrixXd latent_jacobian(const EqParams<T>& p, const EqCache<T>& cache) {
  const std::size_t n = cache.m.size();
  Eigen::MatrixXd jac(n, n);
  Tensor<T> e(cache.m.shape());
  for (std::size_t i = 0; i < n; ++i) {
    e.fill(T(0));
    e[i] = T(1);
    const auto g = eq_backward(p, cache, e, true);
    for (std::size_t j = 0; j < n; ++j) jac(i, j) = g.latent[j];
  }
  return jac;
}

/// Exact implicit gradient at a fixed point: upstream (I - J)^-1 pushed
/// through one backward pass. Tiny latents only (dense n x n solve).
template <class T>
EqGrads<T> exact_implicit_backward(const EqParams<T>& p,
                                   const Tensor<T>& latent_star,
                                   const Tensor<T>& injection,
                                   const Tensor<T>& upstream) {
  constexpr std::size_t kMaxLatent = 4096;
  const std::size_t n = latent_star.size();
  if (n > kMaxLatent)
    throw Error("exact_implicit_backward: latent of " + std::to_string(n) +
                " entries is too large for a dense solve");
  EqCache<T> cache;
  eq_apply(p, latent_star, injection, &cache);
  const Eigen::MatrixXd jac = latent_jacobian(p, cache);
  const Eigen::MatrixXd a =
      Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(n)) - jac.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw Error("exact_implicit_backward: I - J is singular");
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) rhs(i) = upstream[i];
  const Eigen::VectorXd w = lu.solve(rhs);
  Tensor<T> wt(upstream.shape());
  for (std::size_t i = 0; i < n; ++i) wt[i] = static_cast<T>(w(i));
  return eq_backward(p, cache, wt, false);
}

/// Largest singular value of the merged branch operator with every slope
/// set to 1, by power iteration on one latent of the given spatial size.
template <class T>
double branch_spectral_norm(const EqParams<T>& p, std::size_t h, std::size_t w,
                            std::size_t iters, std::uint64_t seed) {
  EqParams<T> lin = p;
  for (std::size_t k = 0; k < 3; ++k) {
    lin.av[k].alpha[0] = T(1);
    lin.ah[k].alpha[0] = T(1);
  }
  lin.act.alpha[0] = T(1);
  lin.gain[0] = T(0);
  const Tensor<T> zero({1, p.channels, h, w});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor<T> v(zero.shape());
  for (auto& x : v) x = static_cast<T>(dist(rng));
  double sigma = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    const double nv = std::sqrt(squared_norm(v));
    if (nv == 0) return 0;
    v *= static_cast<T>(1.0 / nv);
    EqCache<T> cache;
    const Tensor<T> av = eq_apply(lin, v, zero, &cache);
    sigma = std::sqrt(squared_norm(av));
    v = eq_backward(lin, cache, av, true).latent;
  }
  return sigma;
}

}  // namespace deqcsi
