// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "deqcsi/codec_config.hpp"
#include "deqcsi/equilibrium.hpp"
#include "deqcsi/flops.hpp"
#include "deqcsi/layers.hpp"
#include "deqcsi/optim.hpp"
#include "deqcsi/tensor.hpp"

namespace deqcsi {

/// Every tensor of the encoder (pre, eim, down) and decoder (up + inject,
/// dim, post).
template <class T>
struct CodecParams {
  CodecConfig config;
  Tensor<T> pre_w;
  NormParam<T> pre_norm;
  PreluParam<T> pre_act;
  EqParams<T> eim;
  Tensor<T> down_w, down_b;
  Tensor<T> up_w, up_b;
  std::array<Tensor<T>, 4> inj_w;
  std::array<NormParam<T>, 4> inj_norm;
  std::array<PreluParam<T>, 4> inj_act;
  EqParams<T> dim;
  Tensor<T> post_w, post_b;

  CodecParams() = default;

  /// Zero weights and biases, unit norm scales, default slopes.
  explicit CodecParams(const CodecConfig& cfg) : config(cfg) {
    cfg.validate();
    pre_w = Tensor<T>(pre_spec().weight_shape());
    pre_norm = NormParam<T>(kEncoderChannels, NormMode::batch);
    eim = EqParams<T>(kEncoderChannels);
    down_w = Tensor<T>({cfg.m, cfg.unit_size()});
    down_b = Tensor<T>({cfg.m});
    up_w = Tensor<T>({cfg.unit_size(), cfg.m});
    up_b = Tensor<T>({cfg.unit_size()});
    const auto inj = inject_specs(cfg.width);
    for (std::size_t k = 0; k < 4; ++k) {
      inj_w[k] = Tensor<T>(inj[k].weight_shape());
      inj_norm[k] = NormParam<T>(inj[k].out_channels, NormMode::per_sample);
    }
    dim = EqParams<T>(cfg.width);
    post_w = Tensor<T>(post_spec(cfg.width).weight_shape());
    post_b = Tensor<T>({kEncoderChannels});
  }

  /// Trainable tensors in a fixed order.
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("pre.weight"), self.pre_w);
    fn(std::string("pre.norm.scale"), self.pre_norm.scale);
    fn(std::string("pre.norm.shift"), self.pre_norm.shift);
    fn(std::string("pre.act.alpha"), self.pre_act.alpha);
    EqParams<T>::visit(self.eim, "eim", fn);
    fn(std::string("down.weight"), self.down_w);
    fn(std::string("down.bias"), self.down_b);
    fn(std::string("up.weight"), self.up_w);
    fn(std::string("up.bias"), self.up_b);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string p = "inject" + std::to_string(k);
      fn(p + ".weight", self.inj_w[k]);
      fn(p + ".norm.scale", self.inj_norm[k].scale);
      fn(p + ".norm.shift", self.inj_norm[k].shift);
      fn(p + ".act.alpha", self.inj_act[k].alpha);
    }
    EqParams<T>::visit(self.dim, "dim", fn);
    fn(std::string("post.weight"), self.post_w);
    fn(std::string("post.bias"), self.post_b);
  }

  /// Non-trainable state (batch-norm running statistics).
  template <class Self, class Fn>
  static void visit_buffers(Self& self, Fn&& fn) {
    fn(std::string("pre.norm.running_mean"), self.pre_norm.running_mean);
    fn(std::string("pre.norm.running_var"), self.pre_norm.running_var);
  }

  template <class Self, class Fn>
  static void visit_all(Self& self, Fn&& fn) {
    visit(self, fn);
    visit_buffers(self, fn);
  }

  template <class U>
  CodecParams<U> cast() const {
    CodecParams<U> out(config);
    std::vector<const Tensor<T>*> src;
    visit_all(*this, [&](const std::string&, const Tensor<T>& t) {
      src.push_back(&t);
    });
    std::size_t i = 0;
    CodecParams<U>::visit_all(out, [&](const std::string&, Tensor<U>& t) {
      t = Tensor<U>::cast(*src[i++]);
    });
    return out;
  }

  /// Trainable scalars in the encoder and decoder halves.
  std::pair<std::size_t, std::size_t> param_counts() const {
    std::size_t enc = 0, dec = 0;
    visit(*this, [&](const std::string& name, const Tensor<T>& t) {
      const bool is_enc = name.starts_with("pre.") ||
                          name.starts_with("eim.") || name.starts_with("down.");
      (is_enc ? enc : dec) += t.size();
    });
    return {enc, dec};
  }

  bool all_finite() const {
    bool ok = true;
    visit_all(*this, [&](const std::string&, const Tensor<T>& t) {
      ok = ok && t.all_finite();
    });
    return ok;
  }

  friend bool operator==(const CodecParams& a, const CodecParams& b) {
    if (!(a.config == b.config)) return false;
    std::vector<const Tensor<T>*> ta;
    visit_all(a, [&](const std::string&, const Tensor<T>& t) { ta.push_back(&t); });
    std::size_t i = 0;
    bool same = true;
    visit_all(b, [&](const std::string&, const Tensor<T>& t) {
      same = same && *ta[i++] == t;
    });
    return same;
  }
};

/// Scales the merge weights so the linearized branch operator has spectral
/// norm `target`. Returns the estimate before scaling.
template <class T>
double spectral_rescale(EqParams<T>& p, double target, std::size_t h,
                        std::size_t w, std::uint64_t seed = 7) {
  const double sigma = branch_spectral_norm(p, h, w, 30, seed);
  if (sigma > 0) p.merge *= static_cast<T>(target / sigma);
  return sigma;
}

inline constexpr double kSpectralTarget = 0.9;

/// Kaiming-normal weights, zero biases, default norms and slopes; each
/// equilibrium map's branch operator is then rescaled to 0.9 (1 - gain) so
/// the linearized map starts out contractive.
template <class T>
CodecParams<T> init_params(const CodecConfig& cfg, std::uint64_t seed) {
  CodecParams<T> p(cfg);
  std::mt19937_64 rng(seed);
  auto conv = [&](Tensor<T>& w) {
    w = kaiming_init<T>(w.shape(), w.dim(1) * w.dim(2) * w.dim(3), rng);
  };
  conv(p.pre_w);
  for (auto* eq : {&p.eim, &p.dim}) {
    for (auto& w : eq->wv) conv(w);
    for (auto& w : eq->wh) conv(w);
    conv(eq->merge);
  }
  p.down_w = kaiming_init<T>(p.down_w.shape(), p.down_w.dim(1), rng);
  p.up_w = kaiming_init<T>(p.up_w.shape(), p.up_w.dim(1), rng);
  for (auto& w : p.inj_w) conv(w);
  conv(p.post_w);
  for (auto* eq : {&p.eim, &p.dim})
    spectral_rescale(*eq, kSpectralTarget * (1.0 - eq->gain[0]), cfg.na,
                     cfg.nt, seed + 1);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <class T>
void require_unit_batch(const char* op, const CodecConfig& cfg,
                        const Tensor<T>& h) {
  detail::require_rank(op, 4, h.rank());
  const Shape want{h.dim(0), 2, cfg.na, cfg.nt};
  static const char* names[] = {"batch", "channels", "height", "width"};
  for (std::size_t i = 1; i < 4; ++i)
    if (h.dim(i) != want[i]) throw DimensionError(op, names[i], want[i], h.dim(i));
}

template <class T>
struct PreTape {
  Tensor<T> h;
  Tensor<T> conv;
  NormCache<T> norm;
  Tensor<T> normed;
};

/// conv 5x5 -> normalize -> prelu.
template <class T>
Tensor<T> f_pre(const CodecParams<T>& p, const Tensor<T>& h, Phase phase,
                PreTape<T>* tape = nullptr) {
  require_unit_batch("f_pre", p.config, h);
  PreTape<T> local;
  PreTape<T>& t = tape ? *tape : local;
  t.conv = conv2d(h, pre_spec(), p.pre_w);
  t.normed = normalize(t.conv, p.pre_norm, phase, &t.norm);
  Tensor<T> x = prelu(t.normed, p.pre_act);
  if (tape) t.h = h;
  return x;
}

template <class T>
Tensor<T> eim_apply(const CodecParams<T>& p, const Tensor<T>& m,
                    const Tensor<T>& x) {
  return eq_apply(p.eim, m, x);
}

template <class T>
Tensor<T> dim_apply(const CodecParams<T>& p, const Tensor<T>& z,
                    const Tensor<T>& y) {
  return eq_apply(p.dim, z, y);
}

template <class T>
Tensor<T> f_down(const CodecParams<T>& p, const Tensor<T>& m) {
  return fully_connected(m, p.down_w, p.down_b.span());
}

template <class T>
struct UpTape {
  Tensor<T> s;
  std::array<Tensor<T>, 4> in;
  std::array<Tensor<T>, 4> conv;
  std::array<NormCache<T>, 4> norm;
  std::array<Tensor<T>, 4> normed;
};

/// FC to 2 x na x nt, then four [conv 3x3 -> normalize -> prelu] widening to
/// the decoder width.
template <class T>
Tensor<T> f_up(const CodecParams<T>& p, const Tensor<T>& s,
               UpTape<T>* tape = nullptr) {
  const auto& cfg = p.config;
  if (s.rank() != 2 || s.dim(1) != cfg.m)
    throw DimensionError("f_up", "codeword length", cfg.m,
                         s.rank() == 2 ? s.dim(1) : s.size());
  Tensor<T> t = fully_connected(s, p.up_w, p.up_b.span())
                    .reshaped({s.dim(0), 2, cfg.na, cfg.nt});
  const auto specs = inject_specs(cfg.width);
  for (std::size_t k = 0; k < 4; ++k) {
    Tensor<T> c = conv2d(t, specs[k], p.inj_w[k]);
    NormCache<T> nc;
    Tensor<T> nrm = normalize(c, p.inj_norm[k], Phase::train, &nc);
    Tensor<T> next = prelu(nrm, p.inj_act[k]);
    if (tape) {
      tape->in[k] = std::move(t);
      tape->conv[k] = std::move(c);
      tape->norm[k] = std::move(nc);
      tape->normed[k] = std::move(nrm);
    }
    t = std::move(next);
  }
  if (tape) tape->s = s;
  return t;
}

/// 1x1 conv to two channels with bias, then sigmoid.
template <class T>
Tensor<T> f_post(const CodecParams<T>& p, const Tensor<T>& z) {
  return sigmoid(conv2d(z, post_spec(p.config.width), p.post_w,
                        p.post_b.span()));
}

/// T - 1 plain applications from z = injection, then one recorded in
/// `cache`. Returns the last iterate.
template <class T>
Tensor<T> iterate_and_record(const EqParams<T>& p, const Tensor<T>& injection,
                             std::size_t t, EqCache<T>& cache) {
  if (t == 0) throw Error("iteration count must be >= 1");
  Tensor<T> z = injection;
  for (std::size_t i = 1; i < t; ++i) {
    z = eq_apply(p, z, injection);
    if (!z.all_finite()) throw DivergenceError(i);
  }
  z = eq_apply(p, z, injection, &cache);
  if (!z.all_finite()) throw DivergenceError(t);
  return z;
}

template <class T>
struct EncodeResult {
  Tensor<T> codeword;  // N x M
  FixedPointTrace<T> trace;
};

template <class T>
EncodeResult<T> encode_traced(const CodecParams<T>& p, const Tensor<T>& h,
                              const IterationOptions& opt) {
  const Tensor<T> x = f_pre(p, h, Phase::infer);
  auto trace = fixed_point_iterate(
      [&](const Tensor<T>& m) { return eq_apply(p.eim, m, x); }, x, opt);
  Tensor<T> s = f_down(p, trace.final_latent);
  return {std::move(s), std::move(trace)};
}

/// Codeword after exactly `te` encoder iterations.
template <class T>
Tensor<T> encode(const CodecParams<T>& p, const Tensor<T>& h, std::size_t te) {
  return encode_traced(p, h, IterationOptions::fixed(te)).codeword;
}

template <class T>
struct DecodeResult {
  Tensor<T> output;  // N x 2 x na x nt in (0, 1)
  FixedPointTrace<T> trace;
};

template <class T>
DecodeResult<T> decode_traced(const CodecParams<T>& p, const Tensor<T>& s,
                              const IterationOptions& opt) {
  const Tensor<T> y = f_up(p, s);
  auto trace = fixed_point_iterate(
      [&](const Tensor<T>& z) { return eq_apply(p.dim, z, y); }, y, opt);
  Tensor<T> out = f_post(p, trace.final_latent);
  return {std::move(out), std::move(trace)};
}

template <class T>
Tensor<T> decode(const CodecParams<T>& p, const Tensor<T>& s, std::size_t td) {
  return decode_traced(p, s, IterationOptions::fixed(td)).output;
}

template <class T>
struct BudgetedOutput {
  Tensor<T> output;
  std::uint64_t te = 0;
  std::uint64_t td = 0;
};

/// Iteration counts are the largest the FLOPs budgets afford.
template <class T>
BudgetedOutput<T> infer_with_budget(const CodecParams<T>& p,
                                    const Tensor<T>& h, const FlopsReport& r,
                                    std::uint64_t re, std::uint64_t rd) {
  const auto it = budget_to_iterations(r, re, rd);
  Tensor<T> out = decode(p, encode(p, h, it.te), it.td);
  return {std::move(out), it.te, it.td};
}

// ---------------------------------------------------------------------------
// Training passes: JFB through the equilibrium maps, ordinary reverse mode
// elsewhere. Gradients accumulate into a zero-initialised CodecParams.
// ---------------------------------------------------------------------------

template <class T>
struct EncoderTape {
  PreTape<T> pre;
  Tensor<T> x;
  EqCache<T> eim;
  Tensor<T> m_star;
};

template <class T>
Tensor<T> encoder_forward_train(const CodecParams<T>& p, const Tensor<T>& h,
                                std::size_t te, EncoderTape<T>& tape) {
  tape.x = f_pre(p, h, Phase::train, &tape.pre);
  tape.m_star = iterate_and_record(p.eim, tape.x, te, tape.eim);
  return f_down(p, tape.m_star);
}

template <class T>
void add_eq_grads(EqParams<T>& acc, const EqParams<T>& g) {
  std::vector<const Tensor<T>*> src;
  EqParams<T>::visit(g, "", [&](const std::string&, const Tensor<T>& t) {
    src.push_back(&t);
  });
  std::size_t i = 0;
  EqParams<T>::visit(acc, "", [&](const std::string&, Tensor<T>& t) {
    t += *src[i++];
  });
}

template <class T>
void encoder_backward(const CodecParams<T>& p, const EncoderTape<T>& tape,
                      const Tensor<T>& d_codeword, CodecParams<T>& grads) {
  auto dd = fully_connected_backward(tape.m_star, p.down_w, d_codeword);
  grads.down_w += dd.weights;
  grads.down_b += dd.bias;
  auto de = eq_backward(p.eim, tape.eim, dd.input, false);
  add_eq_grads(grads.eim, de.params);
  auto da = prelu_backward(tape.pre.normed, p.pre_act, de.injection);
  grads.pre_act.alpha[0] += da.alpha;
  auto dn = normalize_backward(p.pre_norm, tape.pre.norm, da.input);
  grads.pre_norm.scale += dn.scale;
  grads.pre_norm.shift += dn.shift;
  auto dc = conv2d_backward(tape.pre.h, pre_spec(), p.pre_w, dn.input, false);
  grads.pre_w += dc.weights;
}

template <class T>
struct DecoderTape {
  UpTape<T> up;
  Tensor<T> y;
  EqCache<T> dim;
  Tensor<T> z_star;
  Tensor<T> output;
};

template <class T>
Tensor<T> decoder_forward_train(const CodecParams<T>& p, const Tensor<T>& s,
                                std::size_t td, DecoderTape<T>& tape) {
  tape.y = f_up(p, s, &tape.up);
  tape.z_star = iterate_and_record(p.dim, tape.y, td, tape.dim);
  tape.output = f_post(p, tape.z_star);
  return tape.output;
}

/// Returns dL/d(codeword).
template <class T>
Tensor<T> decoder_backward(const CodecParams<T>& p, const DecoderTape<T>& tape,
                           const Tensor<T>& d_output, CodecParams<T>& grads) {
  const auto& cfg = p.config;
  Tensor<T> dsig = sigmoid_backward(tape.output, d_output);
  auto dp = conv2d_backward(tape.z_star, post_spec(cfg.width), p.post_w, dsig);
  grads.post_w += dp.weights;
  grads.post_b += dp.bias;
  auto de = eq_backward(p.dim, tape.dim, dp.input, false);
  add_eq_grads(grads.dim, de.params);
  Tensor<T> d = std::move(de.injection);
  const auto specs = inject_specs(cfg.width);
  for (std::size_t k = 4; k-- > 0;) {
    auto da = prelu_backward(tape.up.normed[k], p.inj_act[k], d);
    grads.inj_act[k].alpha[0] += da.alpha;
    auto dn = normalize_backward(p.inj_norm[k], tape.up.norm[k], da.input);
    grads.inj_norm[k].scale += dn.scale;
    grads.inj_norm[k].shift += dn.shift;
    auto dc = conv2d_backward(tape.up.in[k], specs[k], p.inj_w[k], dn.input);
    grads.inj_w[k] += dc.weights;
    d = std::move(dc.input);
  }
  d.reshape({tape.up.s.dim(0), cfg.unit_size()});
  auto du = fully_connected_backward(tape.up.s, p.up_w, d);
  grads.up_w += du.weights;
  grads.up_b += du.bias;
  return std::move(du.input);
}

}  // namespace deqcsi
