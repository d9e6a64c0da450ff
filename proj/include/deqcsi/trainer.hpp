// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "deqcsi/codec.hpp"
#include "deqcsi/dataset.hpp"
#include "deqcsi/metrics.hpp"
#include "deqcsi/optim.hpp"

namespace deqcsi {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 200;
  double eta_min = 5e-5;
  double eta_max = 1e-3;
  std::size_t te = 10;
  std::size_t td = 5;
  std::uint64_t seed = 1;
  AdamConfig adam;
  double train_fraction = 0.8;
  std::size_t chunk = 25;  // decoder samples per forward/backward slice

  void validate() const {
    if (!(eta_min > 0) || !(eta_min <= eta_max))
      throw Error("train: need 0 < eta_min <= eta_max");
    if (batch_size == 0) throw Error("train: batch size must be >= 1");
    if (epochs == 0) throw Error("train: epochs must be >= 1");
    if (te == 0 || td == 0) throw Error("train: te and td must be >= 1");
    if (!(train_fraction > 0 && train_fraction < 1))
      throw Error("train: train fraction must lie in (0, 1)");
    if (chunk == 0) throw Error("train: chunk must be >= 1");
  }
};

/// Mean of squared differences over every entry.
template <class T>
double mse_loss(const Tensor<T>& hat, const Tensor<T>& ref) {
  hat.require_same_shape("mse_loss", ref);
  if (ref.empty()) return 0;
  double acc = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(hat[i]) - ref[i];
    acc += d * d;
  }
  return acc / static_cast<double>(ref.size());
}

/// One JFB gradient evaluation over a batch. Returns the batch MSE; `grads`
/// receives dMSE/dparams (overwritten). Decoder work is sliced into chunks of
/// `chunk` samples, reduced in slice order.
template <class T>
double loss_and_gradients(const CodecParams<T>& p, const Tensor<T>& batch,
                          std::size_t te, std::size_t td, std::size_t chunk,
                          CodecParams<T>& grads,
                          EncoderTape<T>* tape_out = nullptr) {
  grads = CodecParams<T>(p.config);
  CodecParams<T>::visit(grads, [](const std::string&, Tensor<T>& t) {
    t.fill(T(0));
  });
  const std::size_t n = batch.dim(0);
  const std::size_t per = batch.size() / n;
  EncoderTape<T> local;
  EncoderTape<T>& tape = tape_out ? *tape_out : local;
  const Tensor<T> s = encoder_forward_train(p, batch, te, tape);
  Tensor<T> ds(s.shape());
  const double inv_count = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t len = std::min(chunk, n - lo);
    Tensor<T> sc({len, s.dim(1)});
    std::copy_n(s.data() + lo * s.dim(1), len * s.dim(1), sc.data());
    DecoderTape<T> dt;
    const Tensor<T>& out = decoder_forward_train(p, sc, td, dt);
    Tensor<T> dout(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = static_cast<double>(out[i]) - batch[lo * per + i];
      loss += d * d;
      dout[i] = static_cast<T>(2.0 * d * inv_count);
    }
    const Tensor<T> dsc = decoder_backward(p, dt, dout, grads);
    std::copy_n(dsc.data(), dsc.size(), ds.data() + lo * s.dim(1));
  }
  encoder_backward(p, tape, ds, grads);
  return loss * inv_count;
}

/// Training-mode forward loss over `data` in batches, without updates.
template <class T>
double training_loss(const CodecParams<T>& p, const Tensor<T>& data,
                     std::size_t te, std::size_t td, std::size_t batch) {
  const std::size_t n = data.dim(0);
  if (n == 0) return 0;
  const std::size_t per = data.size() / n;
  double acc = 0;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t len = std::min(batch, n - lo);
    Tensor<T> h({len, data.dim(1), data.dim(2), data.dim(3)});
    std::copy_n(data.data() + lo * per, len * per, h.data());
    EncoderTape<T> et;
    DecoderTape<T> dt;
    acc += mse_loss(decoder_forward_train(
                        p, encoder_forward_train(p, h, te, et), td, dt),
                    h) *
           static_cast<double>(len);
  }
  return acc / static_cast<double>(n);
}

template <class T>
void add_params(CodecParams<T>& acc, const CodecParams<T>& g) {
  std::vector<const Tensor<T>*> src;
  CodecParams<T>::visit(g, [&](const std::string&, const Tensor<T>& t) {
    src.push_back(&t);
  });
  std::size_t i = 0;
  CodecParams<T>::visit(acc, [&](const std::string&, Tensor<T>& t) {
    t += *src[i++];
  });
}

/// Encodes and decodes `data` in slices, returning unit-scale outputs.
template <class T>
Tensor<T> reconstruct(const CodecParams<T>& p, const Tensor<T>& data,
                      std::size_t te, std::size_t td, std::size_t chunk = 50) {
  Tensor<T> out(data.shape());
  const std::size_t n = data.dim(0);
  if (n == 0) return out;
  const std::size_t per = data.size() / n;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t len = std::min(chunk, n - lo);
    Tensor<T> h({len, data.dim(1), data.dim(2), data.dim(3)});
    std::copy_n(data.data() + lo * per, len * per, h.data());
    const Tensor<T> r = decode(p, encode(p, h, te), td);
    std::copy_n(r.data(), r.size(), out.data() + lo * per);
  }
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_mse = 0;
  double val_nmse_db = 0;
};

struct TrainResult {
  CodecParams<float> best;
  std::size_t best_epoch = 0;
  double best_val_nmse_db = 0;
  double initial_val_nmse_db = 0;
  double initial_train_mse = 0;
  std::vector<EpochMetrics> log;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const CodecParams<float>&, const EpochMetrics&)> on_best;
};

/// Train/validation split: the first round(fraction * count) samples train.
inline std::size_t train_count(std::size_t count, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * count));
}

/// Adam on shuffled mini-batches with a per-epoch cosine learning rate.
/// Throws on a non-finite loss or gradient; the best checkpoint so far has
/// already been handed to `on_best`.
inline TrainResult train(const Dataset& ds, const CodecConfig& codec,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (ds.na() != codec.na || ds.nt() != codec.nt)
    throw DimensionError("train", "dataset plane", codec.na * codec.nt,
                         ds.na() * ds.nt());
  const std::size_t n_train = train_count(ds.count(), cfg.train_fraction);
  if (n_train == 0 || n_train >= ds.count())
    throw Error("train: dataset too small for a train/validation split");
  const Tensor<float> val = ds.slice(n_train, ds.count() - n_train);

  CodecParams<float> p = init_params<float>(codec, cfg.seed);
  Adam<float> opt(cfg.adam);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor<float>*> params;
  CodecParams<float>::visit(p, [&](const std::string&, Tensor<float>& t) {
    params.push_back(&t);
  });

  auto validate = [&] {
    return nmse_unit(reconstruct(p, val, cfg.te, cfg.td), val, ds.meta).db();
  };

  TrainResult result;
  result.initial_val_nmse_db = validate();
  result.initial_train_mse =
      training_loss(p, ds.slice(0, n_train), cfg.te, cfg.td, cfg.batch_size);
  result.best = p;
  result.best_val_nmse_db = std::numeric_limits<double>::infinity();
  CodecParams<float> grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<double>(epoch),
                                static_cast<double>(cfg.epochs), cfg.eta_min,
                                cfg.eta_max);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < n_train; lo += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n_train - lo);
      const Tensor<float> batch =
          ds.gather(std::span<const std::size_t>(order.data() + lo, len));
      EncoderTape<float> tape;
      const double loss =
          loss_and_gradients(p, batch, cfg.te, cfg.td, cfg.chunk, grads, &tape);
      if (!std::isfinite(loss) || !grads.all_finite())
        throw Error("training diverged at epoch " + std::to_string(epoch + 1));
      std::vector<const Tensor<float>*> g;
      CodecParams<float>::visit(grads, [&](const std::string&,
                                           const Tensor<float>& t) {
        g.push_back(&t);
      });
      opt.step(params, g, lr);
      update_running_stats(p.pre_norm, tape.pre.norm, len * codec.plane_size());
      loss_sum += loss * len;
      seen += len;
    }
    EpochMetrics m{epoch + 1, lr, loss_sum / seen, validate()};
    if (!std::isfinite(m.train_mse))
      throw Error("training diverged at epoch " + std::to_string(epoch + 1));
    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (m.val_nmse_db < result.best_val_nmse_db) {
      result.best = p;
      result.best_epoch = m.epoch;
      result.best_val_nmse_db = m.val_nmse_db;
      if (hooks.on_best) hooks.on_best(p, m);
    }
  }
  return result;
}

}  // namespace deqcsi
