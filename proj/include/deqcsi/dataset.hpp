// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deqcsi/binary_io.hpp"
#include "deqcsi/channel.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

/// Normalized CSI samples, count x 2 x na x nt, with the scaling that maps
/// them back to physical values.
struct Dataset {
  ChannelConfig config;
  NormMeta meta;
  Tensor<float> samples{Shape{0, 2, 32, 32}};

  std::size_t count() const { return samples.dim(0); }
  std::size_t na() const { return samples.dim(2); }
  std::size_t nt() const { return samples.dim(3); }

  /// Rows [first, first + n) as a new tensor.
  Tensor<float> slice(std::size_t first, std::size_t n) const {
    const std::size_t stride = 2 * na() * nt();
    Tensor<float> out({n, 2, na(), nt()});
    std::copy_n(samples.data() + first * stride, n * stride, out.data());
    return out;
  }

  /// Gathers the given rows in order.
  Tensor<float> gather(std::span<const std::size_t> rows) const {
    const std::size_t stride = 2 * na() * nt();
    Tensor<float> out({rows.size(), 2, na(), nt()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(samples.data() + rows[i] * stride, stride,
                  out.data() + i * stride);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Generates `count` samples and fits the [0, 1] scaling on the first
/// `fit_count` of them (the training split).
inline Dataset make_dataset(const ChannelConfig& cfg, std::size_t count,
                            std::size_t fit_count) {
  const auto mats = generate_truncated(cfg, count);
  Dataset ds;
  ds.config = cfg;
  ds.meta = fit_norm_meta(std::span<const CMatrix>(mats.data(),
                                                   std::min(fit_count, count)));
  ds.samples = Tensor<float>({count, 2, cfg.na, cfg.nt});
  const std::size_t stride = 2 * cfg.na * cfg.nt;
  for (std::size_t i = 0; i < count; ++i)
    write_unit<float>(mats[i], ds.meta,
                      std::span<float>(ds.samples.data() + i * stride, stride));
  return ds;
}

// File layout (little-endian):
//   "CSID" u16 version
//   u32 nt, nc, na, paths, delay_spread; u64 seed
//   u64 count; f64 offset; f64 scale
//   f32 payload, sample-major, each sample 2 x na x nt
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const Dataset& ds) {
  io::Writer w;
  w.bytes("CSID");
  w.u16(kDatasetVersion);
  w.u32(ds.config.nt);
  w.u32(ds.config.nc);
  w.u32(ds.config.na);
  w.u32(ds.config.paths);
  w.u32(ds.config.delay_spread);
  w.u64(ds.config.seed);
  w.u64(ds.count());
  w.f64(ds.meta.offset);
  w.f64(ds.meta.scale);
  w.f32s(ds.samples.span());
  return w.buffer();
}

inline Dataset decode_dataset(std::vector<char> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_bytes("CSID", "magic");
  const auto version_at = r.offset();
  if (r.u16("version") != kDatasetVersion)
    throw ParseError("unsupported version", version_at);
  Dataset ds;
  const auto cfg_at = r.offset();
  ds.config.nt = r.u32("nt");
  ds.config.nc = r.u32("nc");
  ds.config.na = r.u32("na");
  ds.config.paths = r.u32("paths");
  ds.config.delay_spread = r.u32("delay_spread");
  ds.config.seed = r.u64("seed");
  try {
    ds.config.validate();
  } catch (const Error& e) {
    throw ParseError(e.what(), cfg_at);
  }
  const auto count_at = r.offset();
  const std::uint64_t count = r.u64("count");
  ds.meta.offset = r.f64("offset");
  ds.meta.scale = r.f64("scale");
  const std::uint64_t per = 2ull * ds.config.na * ds.config.nt;
  if (count > r.remaining() / (4 * per))
    throw ParseError("sample count exceeds payload", count_at);
  ds.samples = Tensor<float>({static_cast<std::size_t>(count), 2,
                              ds.config.na, ds.config.nt});
  r.f32s(ds.samples.span(), "payload");
  r.expect_end();
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  const auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return decode_dataset(
      std::vector<char>(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace deqcsi
