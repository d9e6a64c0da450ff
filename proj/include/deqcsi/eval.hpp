// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deqcsi/codec.hpp"
#include "deqcsi/dataset.hpp"
#include "deqcsi/flops.hpp"
#include "deqcsi/metrics.hpp"
#include "deqcsi/trainer.hpp"

namespace deqcsi {

struct EvalRow {
  std::optional<std::uint64_t> budget_enc;  // tradeoff rows only
  bool feasible = true;
  std::uint64_t te = 0;
  std::uint64_t td = 0;
  std::uint64_t enc_flops = 0;
  std::uint64_t dec_flops = 0;
  Nmse nmse;
  double runtime_ms = 0;
};

struct EvalReport {
  double gamma = 0;
  std::uint64_t encoder_params = 0;
  std::uint64_t decoder_params = 0;
  std::vector<EvalRow> rows;
  bool timed = false;

  /// Consecutive row pairs whose NMSE did not rise by more than `slack` dB.
  double nonincreasing_fraction(double slack = 0) const {
    std::size_t ok = 0, pairs = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!rows[i].feasible || !rows[i - 1].feasible) continue;
      ++pairs;
      if (rows[i].nmse.db() <= rows[i - 1].nmse.db() + slack) ++ok;
    }
    return pairs ? static_cast<double>(ok) / pairs : 1.0;
  }
};

namespace detail {

template <class T>
EvalRow evaluate_point(const CodecParams<T>& p, const Tensor<T>& data,
                       const NormMeta& meta, const FlopsReport& r,
                       std::uint64_t te, std::uint64_t td) {
  EvalRow row;
  row.te = te;
  row.td = td;
  std::tie(row.enc_flops, row.dec_flops) = total_flops(r, te, td);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<T> out = reconstruct(p, data, te, td);
  row.runtime_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  row.nmse = nmse_unit(out, data, meta);
  return row;
}

template <class T>
EvalReport report_header(const CodecParams<T>& p, const FlopsReport& r) {
  EvalReport rep;
  rep.gamma = p.config.gamma();
  rep.encoder_params = r.encoder_params();
  rep.decoder_params = r.decoder_params();
  return rep;
}

}  // namespace detail

/// One NMSE point per encoder iteration count, decoder count fixed.
template <class T>
EvalReport sweep_iterations(const CodecParams<T>& p, const Tensor<T>& data,
                            const NormMeta& meta,
                            const std::vector<std::uint64_t>& te_values,
                            std::uint64_t td) {
  const auto r = flops_report(p.config);
  EvalReport rep = detail::report_header(p, r);
  for (auto te : te_values)
    rep.rows.push_back(detail::evaluate_point(p, data, meta, r, te, td));
  return rep;
}

/// For each encoder budget: the affordable T_e, its ledger FLOPs and NMSE.
/// Budgets below one iteration give an infeasible row.
template <class T>
EvalReport tradeoff_report(const CodecParams<T>& p, const Tensor<T>& data,
                           const NormMeta& meta,
                           const std::vector<std::uint64_t>& budgets,
                           std::uint64_t td) {
  const auto r = flops_report(p.config);
  EvalReport rep = detail::report_header(p, r);
  for (auto budget : budgets) {
    EvalRow row;
    try {
      row = detail::evaluate_point(p, data, meta, r,
                                   encoder_iterations(r, budget), td);
    } catch (const BudgetInfeasible&) {
      row.feasible = false;
      row.td = td;
    }
    row.budget_enc = budget;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string to_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "gamma,budget_enc,feasible,te,td,enc_flops,dec_flops,nmse_linear,"
         "nmse_db,ci95_low_db,ci95_high_db,samples,excluded,encoder_params,"
         "decoder_params";
  if (rep.timed) out << ",runtime_ms";
  out << '\n';
  for (const auto& row : rep.rows) {
    out << format_double(rep.gamma) << ','
        << (row.budget_enc ? std::to_string(*row.budget_enc) : "") << ','
        << (row.feasible ? 1 : 0) << ',';
    if (row.feasible) {
      const auto [lo, hi] = row.nmse.ci95_db();
      char lin[32];
      std::snprintf(lin, sizeof lin, "%.9g", row.nmse.linear);
      out << row.te << ',' << row.td << ',' << row.enc_flops << ','
          << row.dec_flops << ',' << lin << ',' << format_double(row.nmse.db())
          << ',' << format_double(lo) << ',' << format_double(hi) << ','
          << row.nmse.samples << ',' << row.nmse.excluded;
    } else {
      out << ",,,,,,,,,";
    }
    out << ',' << rep.encoder_params << ',' << rep.decoder_params;
    if (rep.timed) out << ',' << format_double(row.runtime_ms);
    out << '\n';
  }
  return out.str();
}

/// Finite dB values as numbers; -inf as null with perfect_reconstruction.
inline nlohmann::ordered_json db_json(double db) {
  return std::isfinite(db) ? nlohmann::ordered_json(db)
                           : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json nmse_json(const Nmse& n) {
  const auto [lo, hi] = n.ci95_db();
  nlohmann::ordered_json j;
  j["nmse_linear"] = n.linear;
  j["nmse_db"] = db_json(n.db());
  j["perfect_reconstruction"] = n.samples > 0 && n.linear == 0;
  j["ci95_db"] = {db_json(lo), db_json(hi)};
  j["samples"] = n.samples;
  j["excluded"] = n.excluded;
  return j;
}

inline nlohmann::ordered_json to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["gamma"] = rep.gamma;
  j["param_counts"] = {{"encoder", rep.encoder_params},
                       {"decoder", rep.decoder_params}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : rep.rows) {
    nlohmann::ordered_json r;
    if (row.budget_enc) r["budget_enc"] = *row.budget_enc;
    r["feasible"] = row.feasible;
    if (row.feasible) {
      r["te"] = row.te;
      r["td"] = row.td;
      r["enc_flops"] = row.enc_flops;
      r["dec_flops"] = row.dec_flops;
      r.update(nmse_json(row.nmse));
      if (rep.timed) r["runtime_ms"] = row.runtime_ms;
    }
    rows.push_back(r);
  }
  j["rows"] = rows;
  j["nonincreasing_fraction"] = rep.nonincreasing_fraction();
  return j;
}

inline nlohmann::ordered_json to_json(const FlopsReport& r) {
  auto block = [](const BlockCounts& b) {
    return nlohmann::ordered_json{{"pre", b.pre}, {"eim", b.eim},
                                  {"down", b.down}, {"up", b.up},
                                  {"dim", b.dim},   {"post", b.post}};
  };
  nlohmann::ordered_json j;
  j["flops"] = block(r.flops);
  j["param_counts"] = block(r.params);
  j["encoder_params"] = r.encoder_params();
  j["decoder_params"] = r.decoder_params();
  return j;
}

}  // namespace deqcsi
