// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "deqcsi/error.hpp"
#include "deqcsi/parallel.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

using CMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic,
                              Eigen::Dynamic, Eigen::RowMajor>;

/// Synthetic multipath channel: `paths` plane waves on a half-wavelength ULA,
/// each with a CN(0, 1/paths) gain, a uniform angle in [-pi/2, pi/2] and an
/// integer delay tap uniform in [0, delay_spread].
struct ChannelConfig {
  std::uint32_t nt = 32;   // transmit antennas
  std::uint32_t nc = 256;  // subcarriers
  std::uint32_t na = 32;   // retained delay rows
  std::uint32_t paths = 12;
  std::uint32_t delay_spread = 24;
  std::uint64_t seed = 1;

  void validate() const {
    if (nt == 0) throw Error("ChannelConfig: nt must be positive");
    if (na == 0 || na >= nc)
      throw Error("ChannelConfig: need 0 < na < nc");
    if (paths == 0) throw Error("ChannelConfig: paths must be >= 1");
    if (delay_spread + 1 > na)
      throw Error("ChannelConfig: delay_spread must be <= na - 1");
  }

  friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

/// Unitary transforms for the delay (rows) and angle (columns) axes. The
/// delay transform uses the positive-exponent kernel so that a path delayed
/// by tap t, whose frequency response is exp(-j 2 pi k t / nc), lands in
/// row t.
struct DftPair {
  CMatrix delay;  // nc x nc
  CMatrix angle;  // nt x nt

  static CMatrix unitary_dft(std::size_t n, int sign) {
    CMatrix f(n, n);
    const double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        // reduce (r*c) mod n before scaling so the phase stays accurate
        const double phase = sign * 2.0 * std::numbers::pi *
                             static_cast<double>((r * c) % n) /
                             static_cast<double>(n);
        f(r, c) = std::polar(norm, phase);
      }
    return f;
  }

  static DftPair make(std::size_t nc, std::size_t nt) {
    return {unitary_dft(nc, +1), unitary_dft(nt, -1)};
  }
};

/// H' = F_d H F_a.
inline CMatrix to_angular_delay(const CMatrix& h, const DftPair& dft) {
  if (h.rows() != dft.delay.rows())
    throw DimensionError("to_angular_delay", "subcarriers",
                         static_cast<std::size_t>(dft.delay.rows()),
                         static_cast<std::size_t>(h.rows()));
  if (h.cols() != dft.angle.rows())
    throw DimensionError("to_angular_delay", "antennas",
                         static_cast<std::size_t>(dft.angle.rows()),
                         static_cast<std::size_t>(h.cols()));
  return dft.delay * h * dft.angle;
}

/// Inverse of to_angular_delay (both transforms are unitary).
inline CMatrix from_angular_delay(const CMatrix& hp, const DftPair& dft) {
  if (hp.rows() != dft.delay.rows() || hp.cols() != dft.angle.rows())
    throw DimensionError("from_angular_delay", "shape",
                         static_cast<std::size_t>(dft.delay.rows()),
                         static_cast<std::size_t>(hp.rows()));
  return dft.delay.adjoint() * hp * dft.angle.adjoint();
}

/// First `na` rows, unscaled.
inline CMatrix truncate(const CMatrix& hp, std::size_t na) {
  if (na == 0 || na > static_cast<std::size_t>(hp.rows()))
    throw DimensionError("truncate", "rows",
                         static_cast<std::size_t>(hp.rows()), na);
  return hp.topRows(static_cast<Eigen::Index>(na));
}

inline double energy(const CMatrix& m) { return m.squaredNorm(); }

struct ChannelSample {
  CMatrix h;        // nc x nt, spatial-frequency
  CMatrix h_trunc;  // na x nt, angular-delay
};

struct PathDraw {
  std::complex<double> gain;
  double angle;
  std::uint32_t tap;
};

/// Frequency response of a set of paths: H[k, n] = sum_l g_l
/// exp(-j 2 pi k tap_l / nc) exp(-j pi n sin(angle_l)).
inline CMatrix channel_response(const ChannelConfig& cfg,
                                std::span<const PathDraw> paths) {
  CMatrix h = CMatrix::Zero(cfg.nc, cfg.nt);
  for (const PathDraw& p : paths) {
    const double s = std::sin(p.angle);
    for (std::uint32_t k = 0; k < cfg.nc; ++k) {
      const double delay_phase = -2.0 * std::numbers::pi *
                                 static_cast<double>((std::uint64_t{k} * p.tap) % cfg.nc) /
                                 cfg.nc;
      for (std::uint32_t n = 0; n < cfg.nt; ++n) {
        const double phase = delay_phase - std::numbers::pi * n * s;
        h(k, n) += p.gain * std::polar(1.0, phase);
      }
    }
  }
  return h;
}

template <class Rng>
std::vector<PathDraw> draw_paths(const ChannelConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5 / cfg.paths));
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 2,
                                               std::numbers::pi / 2);
  std::uniform_int_distribution<std::uint32_t> tap(0, cfg.delay_spread);
  std::vector<PathDraw> out(cfg.paths);
  for (auto& p : out) {
    const double re = normal(rng);
    const double im = normal(rng);
    p.gain = {re, im};
    p.angle = angle(rng);
    p.tap = tap(rng);
  }
  return out;
}

template <class Rng>
ChannelSample generate_channel(const ChannelConfig& cfg, const DftPair& dft,
                               Rng& rng) {
  cfg.validate();
  const auto paths = draw_paths(cfg, rng);
  ChannelSample s;
  s.h = channel_response(cfg, paths);
  s.h_trunc = truncate(to_angular_delay(s.h, dft), cfg.na);
  return s;
}

/// Independent stream for sample `index` so generation order and
/// parallelism never change the drawn channels.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Truncated angular-delay matrices for `count` samples.
inline std::vector<CMatrix> generate_truncated(const ChannelConfig& cfg,
                                               std::size_t count,
                                               std::size_t first_index = 0) {
  cfg.validate();
  const DftPair dft = DftPair::make(cfg.nc, cfg.nt);
  std::vector<CMatrix> out(count);
  parallel_for(count, [&](std::size_t i) {
    auto rng = sample_rng(cfg.seed, first_index + i);
    out[i] = generate_channel(cfg, dft, rng).h_trunc;
  });
  return out;
}

// ---------------------------------------------------------------------------
// [0, 1] scaling for the sigmoid-output decoder
// ---------------------------------------------------------------------------

/// unit = (x - offset) / scale, applied to real and imaginary parts alike.
struct NormMeta {
  double offset = 0.0;
  double scale = 1.0;

  friend bool operator==(const NormMeta&, const NormMeta&) = default;
};

/// Global min/max over the real and imaginary parts of every matrix. A
/// constant dataset gets scale 1.
inline NormMeta fit_norm_meta(std::span<const CMatrix> mats) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& m : mats)
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto v = m.data()[i];
      lo = std::min({lo, v.real(), v.imag()});
      hi = std::max({hi, v.real(), v.imag()});
    }
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {};
  const double range = hi - lo;
  return {lo, range > 0 ? range : 1.0};
}

/// 2 x na x nt tensor: real plane then imaginary plane.
template <class T>
void write_unit(const CMatrix& m, const NormMeta& meta, std::span<T> out) {
  const std::size_t plane = static_cast<std::size_t>(m.size());
  if (out.size() != 2 * plane)
    throw DimensionError("normalize_csi", "size", 2 * plane, out.size());
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = static_cast<T>((m.data()[i].real() - meta.offset) / meta.scale);
    out[plane + i] =
        static_cast<T>((m.data()[i].imag() - meta.offset) / meta.scale);
  }
}

template <class T>
Tensor<T> normalize_csi(const CMatrix& m, const NormMeta& meta) {
  Tensor<T> out({2, static_cast<std::size_t>(m.rows()),
                 static_cast<std::size_t>(m.cols())});
  write_unit<T>(m, meta, out.span());
  return out;
}

/// Physical-scale values of a unit tensor (same 2 x na x nt layout).
template <class T>
std::vector<double> denormalize(std::span<const T> unit, const NormMeta& meta) {
  std::vector<double> out(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i)
    out[i] = static_cast<double>(unit[i]) * meta.scale + meta.offset;
  return out;
}

template <class T>
CMatrix denormalize_csi(std::span<const T> unit, std::size_t na,
                        std::size_t nt, const NormMeta& meta) {
  if (unit.size() != 2 * na * nt)
    throw DimensionError("denormalize_csi", "size", 2 * na * nt, unit.size());
  CMatrix m(na, nt);
  const std::size_t plane = na * nt;
  for (std::size_t i = 0; i < plane; ++i)
    m.data()[i] = {static_cast<double>(unit[i]) * meta.scale + meta.offset,
                   static_cast<double>(unit[plane + i]) * meta.scale +
                       meta.offset};
  return m;
}

}  // namespace deqcsi
