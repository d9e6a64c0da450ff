// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deqcsi/error.hpp"
#include "deqcsi/layers.hpp"

namespace deqcsi {

/// Shapes and iteration settings of one encoder/decoder pair.
struct CodecConfig {
  std::size_t na = 32;
  std::size_t nt = 32;
  std::size_t m = 512;  // codeword length
  std::size_t te = 10;
  std::size_t td = 5;
  double fp_tolerance = 1e-3;
  std::size_t fp_max_iters = 30;
  std::size_t width = 80;  // decoder latent channels

  std::size_t plane_size() const { return na * nt; }
  std::size_t unit_size() const { return 2 * na * nt; }
  double gamma() const { return static_cast<double>(m) / unit_size(); }

  /// Codeword length for compression ratio `gamma`; must come out integral.
  static CodecConfig with_gamma(std::size_t na, std::size_t nt, double gamma) {
    CodecConfig c;
    c.na = na;
    c.nt = nt;
    const double m = gamma * 2.0 * na * nt;
    if (!(m >= 1) || std::abs(m - std::round(m)) > 1e-9)
      throw Error("gamma " + std::to_string(gamma) +
                  " does not give an integer codeword length for " +
                  std::to_string(na) + "x" + std::to_string(nt));
    c.m = static_cast<std::size_t>(std::round(m));
    return c;
  }

  void validate() const {
    if (na == 0 || nt == 0) throw Error("codec: na and nt must be >= 1");
    if (m == 0) throw Error("codec: codeword length must be >= 1");
    if (te == 0 || td == 0) throw Error("codec: te and td must be >= 1");
    if (fp_max_iters == 0) throw Error("codec: fp_max_iters must be >= 1");
    if (!(fp_tolerance > 0)) throw Error("codec: fp_tolerance must be > 0");
    if (width < 4 || width % 4 != 0)
      throw Error("codec: width must be a positive multiple of 4");
  }

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

inline constexpr std::size_t kEncoderChannels = 2;
inline constexpr std::array<std::size_t, 3> kDilations = {1, 2, 3};

/// The three dilated convs of one branch; vertical branches use 3x1 kernels.
inline std::array<ConvSpec, 3> branch_specs(std::size_t c, bool vertical) {
  std::array<ConvSpec, 3> out;
  for (std::size_t i = 0; i < 3; ++i)
    out[i] = vertical ? ConvSpec::same(c, c, 3, 1, kDilations[i])
                      : ConvSpec::same(c, c, 1, 3, kDilations[i]);
  return out;
}

/// 1x1 conv merging the concatenated branch outputs back to c channels.
inline ConvSpec fuse_spec(std::size_t c) { return ConvSpec::same(2 * c, c, 1, 1); }

inline ConvSpec pre_spec() {
  return ConvSpec::same(kEncoderChannels, kEncoderChannels, 5, 5);
}

inline std::array<ConvSpec, 4> inject_specs(std::size_t width) {
  std::array<ConvSpec, 4> out;
  std::size_t cin = kEncoderChannels;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t cout = width * (i + 1) / 4;
    out[i] = ConvSpec::same(cin, cout, 3, 3);
    cin = cout;
  }
  return out;
}

inline ConvSpec post_spec(std::size_t width) {
  return ConvSpec::same(width, kEncoderChannels, 1, 1, 1, true);
}

}  // namespace deqcsi
