// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deqcsi/binary_io.hpp"
#include "deqcsi/codec.hpp"

namespace deqcsi {

// File layout (little-endian):
//   "DEQC" u16 version
//   u32 na, nt, m, te, td; f64 fp_tolerance; u32 fp_max_iters, width
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 dims..., f32 payload
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const CodecParams<float>& p) {
  io::Writer w;
  w.bytes("DEQC");
  w.u16(kCheckpointVersion);
  const auto& c = p.config;
  for (std::size_t v : {c.na, c.nt, c.m, c.te, c.td})
    w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.fp_tolerance);
  w.u32(static_cast<std::uint32_t>(c.fp_max_iters));
  w.u32(static_cast<std::uint32_t>(c.width));
  std::uint32_t count = 0;
  CodecParams<float>::visit_all(p, [&](const std::string&, const Tensor<float>&) {
    ++count;
  });
  w.u32(count);
  CodecParams<float>::visit_all(p, [&](const std::string& name,
                                       const Tensor<float>& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.span());
  });
  return w.buffer();
}

inline CodecParams<float> decode_checkpoint(std::vector<char> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_bytes("DEQC", "magic");
  const auto version_at = r.offset();
  if (r.u16("version") != kCheckpointVersion)
    throw ParseError("unsupported version", version_at);
  const auto cfg_at = r.offset();
  CodecConfig c;
  c.na = r.u32("na");
  c.nt = r.u32("nt");
  c.m = r.u32("m");
  c.te = r.u32("te");
  c.td = r.u32("td");
  c.fp_tolerance = r.f64("fp_tolerance");
  c.fp_max_iters = r.u32("fp_max_iters");
  c.width = r.u32("width");
  try {
    c.validate();
  } catch (const Error& e) {
    throw ParseError(e.what(), cfg_at);
  }
  CodecParams<float> p(c);
  std::map<std::string, Tensor<float>*> slots;
  CodecParams<float>::visit_all(p, [&](const std::string& name,
                                       Tensor<float>& t) { slots[name] = &t; });
  const auto count_at = r.offset();
  const std::uint32_t count = r.u32("tensor count");
  if (count != slots.size())
    throw ParseError("expected " + std::to_string(slots.size()) + " tensors",
                     count_at);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    const std::uint32_t len = r.u32("name length");
    const std::string name = r.string(len, "tensor name");
    auto it = slots.find(name);
    if (it == slots.end() || it->second == nullptr)
      throw ParseError("unknown or repeated tensor '" + name + "'", at);
    Tensor<float>& t = *it->second;
    it->second = nullptr;
    const auto shape_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank && k < 8; ++k) shape.push_back(r.u32("dim"));
    if (shape != t.shape())
      throw ParseError("tensor '" + name + "' has shape " +
                           shape_string(shape) + ", expected " +
                           shape_string(t.shape()),
                       shape_at);
    r.f32s(t.span(), "tensor payload");
  }
  r.expect_end();
  return p;
}

inline void write_checkpoint(const std::string& path,
                             const CodecParams<float>& p) {
  const auto bytes = encode_checkpoint(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

inline CodecParams<float> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return decode_checkpoint(
      std::vector<char>(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace deqcsi
