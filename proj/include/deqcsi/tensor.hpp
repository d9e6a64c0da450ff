// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "deqcsi/error.hpp"

namespace deqcsi {

// Process-wide accounting of bytes held by tensor storage. Used to check
// that equilibrium training memory does not grow with the iteration count.
namespace memory {

inline std::atomic<std::int64_t> live_bytes{0};
inline std::atomic<std::int64_t> peak_bytes{0};

inline void on_alloc(std::size_t n) {
  const auto now = live_bytes.fetch_add(static_cast<std::int64_t>(n)) +
                   static_cast<std::int64_t>(n);
  auto peak = peak_bytes.load();
  while (now > peak && !peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

inline void on_free(std::size_t n) {
  live_bytes.fetch_sub(static_cast<std::int64_t>(n));
}

/// Resets the high-water mark to the current live size.
inline void reset_peak() { peak_bytes.store(live_bytes.load()); }

inline std::int64_t live() { return live_bytes.load(); }
inline std::int64_t peak() { return peak_bytes.load(); }

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    on_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    on_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace memory

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major N-d array. 4-D tensors are batch x channels x height x
/// width.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, memory::TrackingAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)) {
    if (values.size() != shape_size(shape_))
      throw DimensionError("Tensor", "size", shape_size(shape_),
                           values.size());
    data_.assign(values.begin(), values.end());
  }
  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::span<const T>(values.begin(),
                                                    values.size())) {}

  template <class U>
  static Tensor cast(const Tensor<U>& other) {
    Tensor out(other.shape());
    std::transform(other.begin(), other.end(), out.begin(),
                   [](U v) { return static_cast<T>(v); });
    return out;
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> span() const noexcept {
    return {data_.data(), data_.size()};
  }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Per-sample slice along the leading axis.
  std::span<T> sample(std::size_t n) {
    const std::size_t stride = size() / shape_[0];
    return {data_.data() + n * stride, stride};
  }
  std::span<const T> sample(std::size_t n) const {
    const std::size_t stride = size() / shape_[0];
    return {data_.data() + n * stride, stride};
  }

  Tensor& reshape(Shape s) {
    if (shape_size(s) != size())
      throw DimensionError("reshape", "size", size(), shape_size(s));
    shape_ = std::move(s);
    return *this;
  }
  Tensor reshaped(Shape s) const {
    Tensor out = *this;
    out.reshape(std::move(s));
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape("operator+=", o);
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape("operator-=", o);
    for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  void require_same_shape(const char* op, const Tensor& o) const {
    if (o.rank() != rank())
      throw DimensionError(op, "rank", rank(), o.rank());
    for (std::size_t i = 0; i < rank(); ++i)
      if (o.shape_[i] != shape_[i])
        throw DimensionError(op, "axis " + std::to_string(i), shape_[i],
                             o.shape_[i]);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
  }

 private:
  Shape shape_;
  Storage data_;
};

template <class T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  return a += b;
}
template <class T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  return a -= b;
}

template <class T>
double squared_norm(std::span<const T> v) {
  double acc = 0;
  for (T x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

template <class T>
double squared_norm(const Tensor<T>& t) {
  return squared_norm(t.span());
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape("dot", b);
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace deqcsi
