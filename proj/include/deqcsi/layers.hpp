// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <type_traits>
#include <vector>

#include "deqcsi/error.hpp"
#include "deqcsi/parallel.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation
// ---------------------------------------------------------------------------

namespace instrument {

inline std::atomic<std::uint64_t> mac_count{0};

/// Counts the multiply-accumulates issued by every GEMM during its lifetime.
class MacScope {
 public:
  MacScope() : start_(mac_count.load()) {}
  std::uint64_t count() const { return mac_count.load() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace instrument

namespace detail {

/// C (rows x cols) = op(A) * op(B), or C += when `accumulate`. All operands
/// row-major. Single precision goes through Eigen; double precision uses a
/// fixed k-ascending summation so results are reproducible bit for bit.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t rows, std::size_t cols,
          std::size_t inner, const T* a, const T* b, T* c, bool accumulate) {
  instrument::mac_count.fetch_add(
      static_cast<std::uint64_t>(rows) * cols * inner,
      std::memory_order_relaxed);
  if constexpr (std::is_same_v<T, float>) {
    using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                              Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    Eigen::Map<Mat> out(c, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
    const auto r = static_cast<Eigen::Index>(rows);
    const auto q = static_cast<Eigen::Index>(cols);
    const auto k = static_cast<Eigen::Index>(inner);
    auto run = [&](const auto& lhs, const auto& rhs) {
      if (accumulate)
        out.noalias() += lhs * rhs;
      else
        out.noalias() = lhs * rhs;
    };
    if (!trans_a && !trans_b)
      run(CMap(a, r, k), CMap(b, k, q));
    else if (trans_a && !trans_b)
      run(CMap(a, k, r).transpose(), CMap(b, k, q));
    else if (!trans_a && trans_b)
      run(CMap(a, r, k), CMap(b, q, k).transpose());
    else
      run(CMap(a, k, r).transpose(), CMap(b, q, k).transpose());
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < inner; ++p) {
          const T av = trans_a ? a[p * rows + i] : a[i * inner + p];
          const T bv = trans_b ? b[j * inner + p] : b[p * cols + j];
          acc += av * bv;
        }
        if (accumulate)
          c[i * cols + j] += acc;
        else
          c[i * cols + j] = acc;
      }
    }
  }
}

inline void require_rank(const char* op, std::size_t expected,
                         std::size_t actual) {
  if (expected != actual) throw DimensionError(op, "rank", expected, actual);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dilated 2-D convolution
// ---------------------------------------------------------------------------

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t dilation = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  bool has_bias = false;

  /// Padding that keeps the spatial extent unchanged (odd kernels).
  static ConvSpec same(std::size_t cin, std::size_t cout, std::size_t kh,
                       std::size_t kw, std::size_t d = 1, bool bias = false) {
    return {cin, cout, kh, kw, d, d * (kh - 1) / 2, d * (kw - 1) / 2, bias};
  }

  Shape weight_shape() const {
    return {out_channels, in_channels, kernel_h, kernel_w};
  }
  std::size_t weight_count() const {
    return out_channels * in_channels * kernel_h * kernel_w;
  }
  std::size_t out_h(std::size_t h) const {
    return h + 2 * pad_h - dilation * (kernel_h - 1);
  }
  std::size_t out_w(std::size_t w) const {
    return w + 2 * pad_w - dilation * (kernel_w - 1);
  }
};

namespace detail {

inline void check_conv(const char* op, const Shape& in, const ConvSpec& spec,
                       const Shape& weights) {
  require_rank(op, 4, in.size());
  if (in[1] != spec.in_channels)
    throw DimensionError(op, "channels", spec.in_channels, in[1]);
  require_rank(op, 4, weights.size());
  const Shape ws = spec.weight_shape();
  static const char* names[] = {"weight out_channels", "weight in_channels",
                                "weight kernel_h", "weight kernel_w"};
  for (std::size_t i = 0; i < 4; ++i)
    if (weights[i] != ws[i]) throw DimensionError(op, names[i], ws[i], weights[i]);
  if (spec.dilation == 0) throw DimensionError(op, "dilation", 1, 0);
  if ((spec.kernel_h - 1) * spec.dilation + 1 > in[2] + 2 * spec.pad_h)
    throw DimensionError(op, "height", (spec.kernel_h - 1) * spec.dilation + 1,
                         in[2] + 2 * spec.pad_h);
  if ((spec.kernel_w - 1) * spec.dilation + 1 > in[3] + 2 * spec.pad_w)
    throw DimensionError(op, "width", (spec.kernel_w - 1) * spec.dilation + 1,
                         in[3] + 2 * spec.pad_w);
}

inline bool is_pointwise(const ConvSpec& s) {
  return s.kernel_h == 1 && s.kernel_w == 1 && s.pad_h == 0 && s.pad_w == 0;
}

// Output columns j whose tap j + n*d - pad lands inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t ow,
                                                      std::size_t w,
                                                      std::size_t shift,
                                                      std::size_t pad) {
  const std::size_t lo = pad > shift ? std::min(ow, pad - shift) : 0;
  const std::size_t hi_raw = w + pad > shift ? w + pad - shift : 0;
  return {lo, std::max(lo, std::min(ow, hi_raw))};
}

// col is (C_in*kh*kw) x (out_h*out_w); padded taps are written as zero.
template <class T>
void im2col(const T* in, const ConvSpec& s, std::size_t h, std::size_t w,
            T* col) {
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t m = 0; m < s.kernel_h; ++m)
      for (std::size_t n = 0; n < s.kernel_w; ++n, ++row) {
        T* dst = col + row * oh * ow;
        const auto [lo, hi] = valid_span(ow, w, n * s.dilation, s.pad_w);
        for (std::size_t i = 0; i < oh; ++i) {
          T* out = dst + i * ow;
          const auto y = static_cast<std::ptrdiff_t>(i + m * s.dilation) -
                         static_cast<std::ptrdiff_t>(s.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(out, ow, T{0});
            continue;
          }
          const std::ptrdiff_t base =
              static_cast<std::ptrdiff_t>((c * h + y) * w + n * s.dilation) -
              static_cast<std::ptrdiff_t>(s.pad_w);
          std::fill_n(out, lo, T{0});
          std::copy(in + base + lo, in + base + hi, out + lo);
          std::fill(out + hi, out + ow, T{0});
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvSpec& s, std::size_t h, std::size_t w,
                T* in_grad) {
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t m = 0; m < s.kernel_h; ++m)
      for (std::size_t n = 0; n < s.kernel_w; ++n, ++row) {
        const T* src = col + row * oh * ow;
        const auto [lo, hi] = valid_span(ow, w, n * s.dilation, s.pad_w);
        for (std::size_t i = 0; i < oh; ++i) {
          const auto y = static_cast<std::ptrdiff_t>(i + m * s.dilation) -
                         static_cast<std::ptrdiff_t>(s.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          const std::ptrdiff_t base =
              static_cast<std::ptrdiff_t>((c * h + y) * w + n * s.dilation) -
              static_cast<std::ptrdiff_t>(s.pad_w);
          const T* g = src + i * ow;
          for (std::size_t j = lo; j < hi; ++j) in_grad[base + j] += g[j];
        }
      }
}

}  // namespace detail

/// Dilated cross-correlation, out[i,j] = sum_{c,m,n} in[c, i+d*m-p, j+d*n-p]
/// * K[c,m,n] (+ bias). An empty `bias` span means no bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec,
                 const Tensor<T>& weights,
                 std::type_identity_t<std::span<const T>> bias = {}) {
  detail::check_conv("conv2d", input.shape(), spec, weights.shape());
  if (!bias.empty() && bias.size() != spec.out_channels)
    throw DimensionError("conv2d", "bias", spec.out_channels, bias.size());
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const std::size_t k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  Tensor<T> out({n, spec.out_channels, oh, ow});
  const std::size_t in_stride = spec.in_channels * h * w;
  const std::size_t out_stride = spec.out_channels * oh * ow;
  const bool pointwise = detail::is_pointwise(spec);
  parallel_for(n, [&](std::size_t b) {
    const T* src = input.data() + b * in_stride;
    std::unique_ptr<T[]> col;
    if (!pointwise) {
      col.reset(new T[k * oh * ow]);
      detail::im2col(src, spec, h, w, col.get());
      src = col.get();
    }
    T* dst = out.data() + b * out_stride;
    detail::gemm<T>(false, false, spec.out_channels, oh * ow, k,
                    weights.data(), src, dst, false);
    if (!bias.empty())
      for (std::size_t c = 0; c < spec.out_channels; ++c)
        for (std::size_t i = 0; i < oh * ow; ++i) dst[c * oh * ow + i] += bias[c];
  });
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;  // empty when the layer has no bias
};

/// Gradients of conv2d given dL/d(output). Weight gradients are reduced over
/// the batch in sample order.
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvSpec& spec,
                             const Tensor<T>& weights,
                             const Tensor<T>& upstream,
                             bool need_input_grad = true) {
  detail::check_conv("conv2d_backward", input.shape(), spec, weights.shape());
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const Shape expect{n, spec.out_channels, oh, ow};
  detail::require_rank("conv2d_backward", 4, upstream.rank());
  for (std::size_t i = 0; i < 4; ++i)
    if (upstream.dim(i) != expect[i])
      throw DimensionError("conv2d_backward",
                           "upstream axis " + std::to_string(i), expect[i],
                           upstream.dim(i));
  const std::size_t k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t wsize = spec.weight_count();
  const std::size_t in_stride = spec.in_channels * h * w;
  const std::size_t out_stride = spec.out_channels * oh * ow;

  ConvGrads<T> g;
  if (need_input_grad) g.input = Tensor<T>(input.shape());
  g.weights = Tensor<T>(weights.shape());
  std::vector<T> per_sample(n * wsize);
  const bool pointwise = detail::is_pointwise(spec);
  parallel_for(n, [&](std::size_t b) {
    const T* dy = upstream.data() + b * out_stride;
    const T* src = input.data() + b * in_stride;
    std::unique_ptr<T[]> col;
    if (!pointwise) {
      col.reset(new T[k * oh * ow]);
      detail::im2col(src, spec, h, w, col.get());
      src = col.get();
    }
    detail::gemm<T>(false, true, spec.out_channels, k, oh * ow, dy, src,
                    per_sample.data() + b * wsize, false);
    if (need_input_grad) {
      T* gin = g.input.data() + b * in_stride;
      if (pointwise) {
        detail::gemm<T>(true, false, k, oh * ow, spec.out_channels,
                        weights.data(), dy, gin, false);
      } else {
        detail::gemm<T>(true, false, k, oh * ow, spec.out_channels,
                        weights.data(), dy, col.get(), false);
        detail::col2im_add(col.get(), spec, h, w, gin);
      }
    }
  });
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < wsize; ++i)
      g.weights[i] += per_sample[b * wsize + i];
  if (spec.has_bias) {
    g.bias = Tensor<T>({spec.out_channels});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        const T* dy = upstream.data() + b * out_stride + c * oh * ow;
        T acc = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += dy[i];
        g.bias[c] += acc;
      }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// y = W x + b per sample. Input is N x (anything), flattened to I_in;
/// weights are I_out x I_in. Output is N x I_out.
template <class T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights,
                          std::type_identity_t<std::span<const T>> bias) {
  detail::require_rank("fully_connected", 2, weights.rank());
  const std::size_t n = input.dim(0);
  const std::size_t in_len = input.size() / n;
  const std::size_t out_len = weights.dim(0);
  if (weights.dim(1) != in_len)
    throw DimensionError("fully_connected", "input length", weights.dim(1),
                         in_len);
  if (bias.size() != out_len)
    throw DimensionError("fully_connected", "bias", out_len, bias.size());
  Tensor<T> out({n, out_len});
  detail::gemm<T>(false, true, n, out_len, in_len, input.data(),
                  weights.data(), out.data(), false);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_len; ++o) out[b * out_len + o] += bias[o];
  return out;
}

template <class T>
struct LinearGrads {
  Tensor<T> input;  // same shape as the forward input
  Tensor<T> weights;
  Tensor<T> bias;
};

template <class T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input,
                                        const Tensor<T>& weights,
                                        const Tensor<T>& upstream) {
  const std::size_t n = input.dim(0);
  const std::size_t in_len = input.size() / n;
  const std::size_t out_len = weights.dim(0);
  if (weights.dim(1) != in_len)
    throw DimensionError("fully_connected_backward", "input length",
                         weights.dim(1), in_len);
  if (upstream.size() != n * out_len)
    throw DimensionError("fully_connected_backward", "upstream length",
                         n * out_len, upstream.size());
  LinearGrads<T> g;
  g.input = Tensor<T>(input.shape());
  g.weights = Tensor<T>(weights.shape());
  g.bias = Tensor<T>({out_len});
  detail::gemm<T>(false, false, n, in_len, out_len, upstream.data(),
                  weights.data(), g.input.data(), false);
  detail::gemm<T>(true, false, out_len, in_len, n, upstream.data(),
                  input.data(), g.weights.data(), false);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_len; ++o)
      g.bias[o] += upstream[b * out_len + o];
  return g;
}

// ---------------------------------------------------------------------------
// PReLU
// ---------------------------------------------------------------------------

/// Channel-shared learnable negative slope.
template <class T>
struct PreluParam {
  Tensor<T> alpha{Shape{1}, T(0.25)};
};

template <class T>
Tensor<T> prelu(const Tensor<T>& input, const PreluParam<T>& p) {
  const T a = p.alpha[0];
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T x = input[i];
    out[i] = x >= 0 ? x : a * x;
  }
  return out;
}

template <class T>
struct PreluGrads {
  Tensor<T> input;
  T alpha = 0;
};

template <class T>
PreluGrads<T> prelu_backward(const Tensor<T>& input, const PreluParam<T>& p,
                             const Tensor<T>& upstream) {
  input.require_same_shape("prelu_backward", upstream);
  const T a = p.alpha[0];
  PreluGrads<T> g{Tensor<T>(input.shape()), T(0)};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T x = input[i];
    if (x >= 0) {
      g.input[i] = upstream[i];
    } else {
      g.input[i] = a * upstream[i];
      g.alpha += x * upstream[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

enum class NormMode {
  batch,       // per channel over (batch, height, width); running stats at inference
  per_sample,  // per (sample, channel) over (height, width)
};

enum class Phase { train, infer };

template <class T>
struct NormParam {
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;  // batch mode only
  Tensor<T> running_var;
  NormMode mode = NormMode::per_sample;

  NormParam() = default;
  NormParam(std::size_t channels, NormMode m)
      : scale({channels}, T(1)),
        shift({channels}, T(0)),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)),
        mode(m) {}

  std::size_t channels() const { return scale.size(); }
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.1;

template <class T>
struct NormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;     // one per statistic group
  std::vector<T> batch_mean;  // batch mode, training only
  std::vector<T> batch_var;
  bool used_batch_statistics = true;
};

namespace detail {

// Visits every statistic group as (group index, channel, list of planes).
template <class Fn>
void for_each_norm_group(NormMode mode, std::size_t n, std::size_t c,
                         Fn&& fn) {
  if (mode == NormMode::batch) {
    std::vector<std::size_t> planes(n);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t b = 0; b < n; ++b) planes[b] = b * c + ch;
      fn(ch, ch, std::span<const std::size_t>(planes));
    }
  } else {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t plane = b * c + ch;
        fn(plane, ch, std::span<const std::size_t>(&plane, 1));
      }
  }
}

}  // namespace detail

/// Affine-normalizes each statistic group to zero mean and unit variance
/// (variance + 1e-5 in the denominator). Batch mode at Phase::infer uses
/// running statistics. `cache` (optional) receives what backward needs.
template <class T>
Tensor<T> normalize(const Tensor<T>& input, const NormParam<T>& p, Phase phase,
                    NormCache<T>* cache = nullptr) {
  detail::require_rank("normalize", 4, input.rank());
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (c != p.channels())
    throw DimensionError("normalize", "channels", p.channels(), c);
  Tensor<T> out(input.shape());
  const bool batch_stats = !(p.mode == NormMode::batch && phase == Phase::infer);
  const std::size_t groups = p.mode == NormMode::batch ? c : n * c;
  NormCache<T> local;
  NormCache<T>& nc = cache ? *cache : local;
  nc.xhat = Tensor<T>(input.shape());
  nc.inv_std.assign(groups, T(0));
  nc.used_batch_statistics = batch_stats;
  if (p.mode == NormMode::batch) {
    nc.batch_mean.assign(c, T(0));
    nc.batch_var.assign(c, T(0));
  }
  detail::for_each_norm_group(
      p.mode, n, c,
      [&](std::size_t g, std::size_t ch, std::span<const std::size_t> planes) {
        double mean, var;
        if (batch_stats) {
          double sum = 0;
          for (std::size_t pl : planes)
            for (std::size_t i = 0; i < plane; ++i) sum += input[pl * plane + i];
          const double count = static_cast<double>(planes.size() * plane);
          mean = sum / count;
          double sq = 0;
          for (std::size_t pl : planes)
            for (std::size_t i = 0; i < plane; ++i) {
              const double d = input[pl * plane + i] - mean;
              sq += d * d;
            }
          var = sq / count;
          if (p.mode == NormMode::batch) {
            nc.batch_mean[ch] = static_cast<T>(mean);
            nc.batch_var[ch] = static_cast<T>(var);
          }
        } else {
          mean = p.running_mean[ch];
          var = p.running_var[ch];
        }
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        nc.inv_std[g] = static_cast<T>(inv);
        for (std::size_t pl : planes)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = pl * plane + i;
            const T xh = static_cast<T>((input[idx] - mean) * inv);
            nc.xhat[idx] = xh;
            out[idx] = p.scale[ch] * xh + p.shift[ch];
          }
      });
  return out;
}

/// Exponential moving average of batch statistics (momentum 0.1, unbiased
/// variance), applied after a batch-mode training forward.
template <class T>
void update_running_stats(NormParam<T>& p, const NormCache<T>& cache,
                          std::size_t count_per_channel) {
  if (p.mode != NormMode::batch || cache.batch_mean.empty()) return;
  const double unbias =
      count_per_channel > 1
          ? static_cast<double>(count_per_channel) / (count_per_channel - 1)
          : 1.0;
  for (std::size_t ch = 0; ch < p.channels(); ++ch) {
    p.running_mean[ch] = static_cast<T>((1 - kNormMomentum) * p.running_mean[ch] +
                                        kNormMomentum * cache.batch_mean[ch]);
    p.running_var[ch] =
        static_cast<T>((1 - kNormMomentum) * p.running_var[ch] +
                       kNormMomentum * cache.batch_var[ch] * unbias);
  }
}

template <class T>
struct NormGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> shift;
};

template <class T>
NormGrads<T> normalize_backward(const NormParam<T>& p, const NormCache<T>& cache,
                                const Tensor<T>& upstream) {
  cache.xhat.require_same_shape("normalize_backward", upstream);
  const std::size_t n = upstream.dim(0), c = upstream.dim(1);
  const std::size_t plane = upstream.dim(2) * upstream.dim(3);
  NormGrads<T> g{Tensor<T>(upstream.shape()), Tensor<T>({c}),
                 Tensor<T>({c})};
  detail::for_each_norm_group(
      p.mode, n, c,
      [&](std::size_t grp, std::size_t ch, std::span<const std::size_t> planes) {
        const double inv = cache.inv_std[grp];
        const double gamma = p.scale[ch];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t pl : planes)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = pl * plane + i;
            sum_dy += upstream[idx];
            sum_dy_xhat += upstream[idx] * cache.xhat[idx];
          }
        g.scale[ch] += static_cast<T>(sum_dy_xhat);
        g.shift[ch] += static_cast<T>(sum_dy);
        if (!cache.used_batch_statistics) {
          for (std::size_t pl : planes)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = pl * plane + i;
              g.input[idx] = static_cast<T>(upstream[idx] * gamma * inv);
            }
          return;
        }
        const double count = static_cast<double>(planes.size() * plane);
        const double mean_dy = sum_dy / count;
        const double mean_dy_xhat = sum_dy_xhat / count;
        for (std::size_t pl : planes)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = pl * plane + i;
            g.input[idx] = static_cast<T>(
                gamma * inv *
                (upstream[idx] - mean_dy - cache.xhat[idx] * mean_dy_xhat));
          }
      });
  return g;
}

// ---------------------------------------------------------------------------
// Sigmoid
// ---------------------------------------------------------------------------

/// Logistic function; saturated outputs are held strictly inside (0, 1).
template <class T>
T sigmoid_scalar(T x) {
  T y;
  if (x >= 0) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T(1) + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(y, lo, hi);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = sigmoid_scalar(input[i]);
  return out;
}

/// dL/dx from the forward output y = sigmoid(x).
template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& upstream) {
  output.require_same_shape("sigmoid_backward", upstream);
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    g[i] = upstream[i] * output[i] * (T(1) - output[i]);
  return g;
}

}  // namespace deqcsi
