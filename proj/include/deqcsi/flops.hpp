// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>

#include "deqcsi/codec_config.hpp"
#include "deqcsi/error.hpp"

namespace deqcsi {

/// 2 I_in I_out.
constexpr std::uint64_t flops_fc(std::uint64_t in, std::uint64_t out) {
  return 2 * in * out;
}

/// 2 C_in K_h K_w H W C_out; dilation does not enter.
constexpr std::uint64_t flops_conv(std::uint64_t cin, std::uint64_t kh,
                                   std::uint64_t kw, std::uint64_t h,
                                   std::uint64_t w, std::uint64_t cout) {
  return 2 * cin * kh * kw * h * w * cout;
}

inline std::uint64_t flops_conv(const ConvSpec& s, std::uint64_t h,
                                std::uint64_t w) {
  return flops_conv(s.in_channels, s.kernel_h, s.kernel_w, h, w,
                    s.out_channels);
}

inline std::uint64_t conv_params(const ConvSpec& s) {
  return s.weight_count() + (s.has_bias ? s.out_channels : 0);
}

/// Per-block counts. Elementwise work (PReLU, normalization, sigmoid,
/// additions) is not counted; every FLOP here is half of one MAC pair.
struct BlockCounts {
  std::uint64_t pre = 0, eim = 0, down = 0, up = 0, dim = 0, post = 0;
  friend bool operator==(const BlockCounts&, const BlockCounts&) = default;
};

struct FlopsReport {
  BlockCounts flops;
  BlockCounts params;

  std::uint64_t encoder_params() const {
    return params.pre + params.eim + params.down;
  }
  std::uint64_t decoder_params() const {
    return params.up + params.dim + params.post;
  }
  std::uint64_t encoder_flops(std::uint64_t te) const {
    return flops.pre + te * flops.eim + flops.down;
  }
  std::uint64_t decoder_flops(std::uint64_t td) const {
    return flops.up + td * flops.dim + flops.post;
  }
};

namespace detail {

inline std::uint64_t eq_flops(std::size_t c, std::size_t h, std::size_t w) {
  std::uint64_t f = flops_conv(fuse_spec(c), h, w);
  for (bool v : {true, false})
    for (const auto& s : branch_specs(c, v)) f += flops_conv(s, h, w);
  return f;
}

// Conv weights, one PReLU slope per module, the shortcut gain and the
// combine slope.
inline std::uint64_t eq_params(std::size_t c) {
  std::uint64_t p = conv_params(fuse_spec(c)) + 2;
  for (bool v : {true, false})
    for (const auto& s : branch_specs(c, v)) p += conv_params(s) + 1;
  return p;
}

}  // namespace detail

inline FlopsReport flops_report(const CodecConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.na, w = cfg.nt;
  FlopsReport r;
  r.flops.pre = flops_conv(pre_spec(), h, w);
  r.params.pre = conv_params(pre_spec()) + 2 * kEncoderChannels + 1;
  r.flops.eim = detail::eq_flops(kEncoderChannels, h, w);
  r.params.eim = detail::eq_params(kEncoderChannels);
  r.flops.down = flops_fc(cfg.unit_size(), cfg.m);
  r.params.down = cfg.unit_size() * cfg.m + cfg.m;
  r.flops.up = flops_fc(cfg.m, cfg.unit_size());
  r.params.up = cfg.m * cfg.unit_size() + cfg.unit_size();
  for (const auto& s : inject_specs(cfg.width)) {
    r.flops.up += flops_conv(s, h, w);
    r.params.up += conv_params(s) + 2 * s.out_channels + 1;
  }
  r.flops.dim = detail::eq_flops(cfg.width, h, w);
  r.params.dim = detail::eq_params(cfg.width);
  r.flops.post = flops_conv(post_spec(cfg.width), h, w);
  r.params.post = conv_params(post_spec(cfg.width));
  return r;
}

/// (F_e, F_d) at the given iteration counts.
inline std::pair<std::uint64_t, std::uint64_t> total_flops(
    const FlopsReport& r, std::uint64_t te, std::uint64_t td) {
  return {r.encoder_flops(te), r.decoder_flops(td)};
}

/// floor((R - fixed) / per_iter), at least one iteration.
inline std::uint64_t affordable_iterations(const char* side,
                                           std::uint64_t budget,
                                           std::uint64_t fixed,
                                           std::uint64_t per_iter) {
  const std::uint64_t minimum = fixed + per_iter;
  if (budget < minimum) throw BudgetInfeasible(side, budget, minimum);
  return (budget - fixed) / per_iter;
}

inline std::uint64_t encoder_iterations(const FlopsReport& r,
                                        std::uint64_t budget) {
  return affordable_iterations("encoder", budget, r.flops.pre + r.flops.down,
                               r.flops.eim);
}

inline std::uint64_t decoder_iterations(const FlopsReport& r,
                                        std::uint64_t budget) {
  return affordable_iterations("decoder", budget, r.flops.up + r.flops.post,
                               r.flops.dim);
}

struct Iterations {
  std::uint64_t te = 0;
  std::uint64_t td = 0;
};

inline Iterations budget_to_iterations(const FlopsReport& r, std::uint64_t re,
                                       std::uint64_t rd) {
  return {encoder_iterations(r, re), decoder_iterations(r, rd)};
}

}  // namespace deqcsi
