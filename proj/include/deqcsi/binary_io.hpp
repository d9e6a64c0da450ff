// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deqcsi/error.hpp"

namespace deqcsi::io {

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }

  const std::vector<char>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("write to '" + path + "' failed");
  }

 private:
  std::vector<char> buf_;
};

/// Little-endian byte source; every failure reports the byte offset.
class Reader {
 public:
  explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return Reader(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  }

  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void expect_bytes(std::string_view s, const char* what) {
    need(s.size(), what);
    if (std::memcmp(buf_.data() + pos_, s.data(), s.size()) != 0)
      throw ParseError(std::string("bad ") + what, pos_);
    pos_ += s.size();
  }

  template <class U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::uint16_t u16(const char* what) { return uint<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void f32s(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (float& v : out) v = f32(what);
  }

  void expect_end() const {
    if (pos_ != buf_.size()) throw ParseError("trailing bytes", pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n)
      throw ParseError(std::string("truncated ") + what, buf_.size());
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace deqcsi::io
