// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

// deq-csi: dataset generation, training, budgeted inference and reports.
// Exit codes: 0 ok, 1 other failure, 2 infeasible budget, 3 parse error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deqcsi/checkpoint.hpp"
#include "deqcsi/dataset.hpp"
#include "deqcsi/eval.hpp"
#include "deqcsi/flops.hpp"
#include "deqcsi/trainer.hpp"

namespace {

using namespace deqcsi;
using json = nlohmann::ordered_json;

constexpr int kExitFailure = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitParse = 3;

/// Accepts "1/4" or "0.25".
double parse_gamma(const std::string& text) {
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else {
      const double num = std::stod(text.substr(0, slash), &used);
      if (used == slash) {
        const std::string den_text = text.substr(slash + 1);
        const double den = std::stod(den_text, &used);
        if (used == den_text.size() && den != 0) return num / den;
      }
    }
  } catch (const std::exception&) {
  }
  throw CLI::ValidationError("--gamma", "expected a ratio like 1/4 or 0.25, got '" + text + "'");
}

/// "a..b" (inclusive) or a comma list.
std::vector<std::uint64_t> parse_list(const std::string& flag,
                                      const std::string& text) {
  std::vector<std::uint64_t> out;
  auto number = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || s[0] == '-')
      throw CLI::ValidationError(flag, "bad integer '" + s + "'");
    return v;
  };
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = number(text.substr(0, dots));
    const auto hi = number(text.substr(dots + 2));
    if (lo > hi) throw CLI::ValidationError(flag, "empty range '" + text + "'");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    out.push_back(number(text.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

/// "all", "train" (first 80%) or "val" (the rest).
Tensor<float> select_split(const Dataset& ds, const std::string& split) {
  const std::size_t n_train = train_count(ds.count(), TrainConfig{}.train_fraction);
  if (split == "train") return ds.slice(0, n_train);
  if (split == "val") return ds.slice(n_train, ds.count() - n_train);
  return ds.samples;
}

void add_split_option(CLI::App* cmd, std::string& split) {
  cmd->add_option("--split", split,
                  "Samples to evaluate: all, train (first 80%) or val (rest)")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
}

void require_compatible(const CodecParams<float>& p, const Dataset& ds) {
  if (ds.na() != p.config.na || ds.nt() != p.config.nt)
    throw DimensionError("dataset vs checkpoint", "plane",
                         p.config.na * p.config.nt, ds.na() * ds.nt());
}

// ---------------------------------------------------------------------------

struct GenArgs {
  ChannelConfig cfg;
  std::size_t samples = 5000;
  std::string out;
};

int run_gen(const GenArgs& a) {
  a.cfg.validate();
  if (a.samples == 0) throw Error("--samples must be >= 1");
  const Dataset ds = make_dataset(
      a.cfg, a.samples, train_count(a.samples, TrainConfig{}.train_fraction));
  write_dataset(a.out, ds);
  json j;
  j["out"] = a.out;
  j["samples"] = ds.count();
  j["shape"] = ds.samples.shape();
  j["norm_meta"] = {{"offset", ds.meta.offset}, {"scale", ds.meta.scale}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string gamma = "1/4";
  std::size_t width = CodecConfig{}.width;
  TrainConfig cfg;
  std::string out_ckpt;
  std::string metrics_csv;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const Dataset ds = read_dataset(a.dataset);
  CodecConfig codec =
      CodecConfig::with_gamma(ds.na(), ds.nt(), parse_gamma(a.gamma));
  codec.width = a.width;
  codec.te = a.cfg.te;
  codec.td = a.cfg.td;
  codec.validate();

  std::ofstream csv;
  if (!a.metrics_csv.empty()) {
    csv.open(a.metrics_csv, std::ios::trunc);
    if (!csv) throw Error("cannot open '" + a.metrics_csv + "' for writing");
    csv << "epoch,lr,train_mse,val_nmse_db\n" << std::flush;
  }
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%s\n", m.epoch, m.lr,
                  m.train_mse, format_double(m.val_nmse_db).c_str());
    if (csv.is_open()) csv << line << std::flush;
    if (!a.quiet) std::cerr << "epoch " << line << std::flush;
  };
  hooks.on_best = [&](const CodecParams<float>& p, const EpochMetrics&) {
    write_checkpoint(a.out_ckpt, p);
  };
  const TrainResult r = train(ds, codec, a.cfg, hooks);

  const auto [enc, dec] = r.best.param_counts();
  json j;
  j["checkpoint"] = a.out_ckpt;
  j["gamma"] = codec.gamma();
  j["codeword_length"] = codec.m;
  j["epochs"] = r.log.size();
  j["best_epoch"] = r.best_epoch;
  j["initial_val_nmse_db"] = db_json(r.initial_val_nmse_db);
  j["initial_train_mse"] = r.initial_train_mse;
  j["final_train_mse"] = r.log.back().train_mse;
  j["best_val_nmse_db"] = db_json(r.best_val_nmse_db);
  j["final_val_nmse_db"] = db_json(r.log.back().val_nmse_db);
  j["param_counts"] = {{"encoder", enc}, {"decoder", dec}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct IterArgs {
  std::optional<std::uint64_t> te, td, budget_enc, budget_dec;
};

void add_iteration_options(CLI::App* cmd, IterArgs& a) {
  auto* te = cmd->add_option("--te", a.te, "Encoder iterations");
  auto* td = cmd->add_option("--td", a.td, "Decoder iterations");
  auto* be = cmd->add_option("--budget-enc", a.budget_enc,
                             "Encoder FLOPs budget R_e");
  auto* bd = cmd->add_option("--budget-dec", a.budget_dec,
                             "Decoder FLOPs budget R_d");
  te->excludes(be);
  td->excludes(bd);
  for (auto* o : {te, td}) o->check(CLI::PositiveNumber);
}

/// Resolves (te, td) from explicit counts, budgets, or checkpoint defaults.
Iterations resolve(const IterArgs& a, const FlopsReport& r,
                   const CodecConfig& c) {
  Iterations it{c.te, c.td};
  if (a.te) it.te = *a.te;
  if (a.td) it.td = *a.td;
  if (a.budget_enc) it.te = encoder_iterations(r, *a.budget_enc);
  if (a.budget_dec) it.td = decoder_iterations(r, *a.budget_dec);
  return it;
}

json iteration_json(const IterArgs& a, const Iterations& it,
                    const FlopsReport& r) {
  const auto [fe, fd] = total_flops(r, it.te, it.td);
  json j;
  if (a.budget_enc) j["budget_enc"] = *a.budget_enc;
  if (a.budget_dec) j["budget_dec"] = *a.budget_dec;
  j["te"] = it.te;
  j["td"] = it.td;
  j["enc_flops"] = fe;
  j["dec_flops"] = fd;
  return j;
}

struct InferArgs {
  std::string ckpt, dataset;
  IterArgs iter;
  std::string split = "all";
  bool timing = false;
};

int run_infer(const InferArgs& a) {
  const auto p = read_checkpoint(a.ckpt);
  const auto r = flops_report(p.config);
  const Iterations it = resolve(a.iter, r, p.config);
  const Dataset ds = read_dataset(a.dataset);
  require_compatible(p, ds);
  const Tensor<float> data = select_split(ds, a.split);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> out = reconstruct(p, data, it.te, it.td);
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  json j = iteration_json(a.iter, it, r);
  j.update(nmse_json(nmse_unit(out, data, ds.meta)));
  j["param_counts"] = {{"encoder", r.encoder_params()},
                       {"decoder", r.decoder_params()}};
  if (a.timing) j["runtime_ms"] = ms;
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct FlopsArgs {
  std::string ckpt;
  std::string gamma;
  std::size_t na = 32, nt = 32, width = CodecConfig{}.width;
  IterArgs iter;
};

int run_flops(const FlopsArgs& a) {
  CodecConfig c;
  if (!a.ckpt.empty()) {
    c = read_checkpoint(a.ckpt).config;
  } else {
    c = CodecConfig::with_gamma(a.na, a.nt, parse_gamma(a.gamma));
    c.width = a.width;
    c.validate();
  }
  const auto r = flops_report(c);
  const Iterations it = resolve(a.iter, r, c);
  json j;
  j["gamma"] = c.gamma();
  j.update(iteration_json(a.iter, it, r));
  j["per_block"] = to_json(r);
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct ReportArgs {
  std::string ckpt, dataset;
  std::string values;  // te range or budget list
  std::optional<std::uint64_t> td;
  std::string format = "csv";
  std::string out;
  std::string split = "all";
  bool timing = false;
};

void add_report_options(CLI::App* cmd, ReportArgs& a) {
  cmd->add_option("--ckpt", a.ckpt, "Checkpoint (DEQC)")->required();
  cmd->add_option("--dataset", a.dataset, "Dataset (CSID)")->required();
  cmd->add_option("--td", a.td, "Decoder iterations (default: checkpoint)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--format", a.format, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--out", a.out, "Output file (default stdout)");
  cmd->add_flag("--timing", a.timing, "Add wall-clock runtime per row");
  add_split_option(cmd, a.split);
}

template <class Build>
int run_report(const ReportArgs& a, Build build) {
  const auto p = read_checkpoint(a.ckpt);
  const Dataset ds = read_dataset(a.dataset);
  require_compatible(p, ds);
  const Tensor<float> data = select_split(ds, a.split);
  EvalReport rep = build(p, data, ds.meta, a.td.value_or(p.config.td));
  rep.timed = a.timing;
  emit(a.format == "json" ? to_json(rep).dump(2) + "\n" : to_csv(rep), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-equilibrium CSI feedback codec"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic CSID dataset");
  g->add_option("--nt", gen.cfg.nt, "Transmit antennas")->capture_default_str();
  g->add_option("--nc", gen.cfg.nc, "Subcarriers")->capture_default_str();
  g->add_option("--na", gen.cfg.na, "Retained delay rows")->capture_default_str();
  g->add_option("--paths", gen.cfg.paths, "Multipath components")
      ->capture_default_str();
  g->add_option("--delay-spread", gen.cfg.delay_spread, "Largest delay tap")
      ->capture_default_str();
  g->add_option("--samples", gen.samples, "Sample count")->capture_default_str();
  g->add_option("--seed", gen.cfg.seed, "Generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a codec and write a DEQC checkpoint");
  t->add_option("--dataset", tr.dataset, "Training dataset (CSID)")->required();
  t->add_option("--gamma", tr.gamma, "Compression ratio, e.g. 1/4")
      ->capture_default_str();
  t->add_option("--width", tr.width, "Equilibrium channel width W")
      ->capture_default_str();
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
  t->add_option("--te", tr.cfg.te, "Encoder iterations in training")
      ->capture_default_str();
  t->add_option("--td", tr.cfg.td, "Decoder iterations in training")
      ->capture_default_str();
  t->add_option("--lr-max", tr.cfg.eta_max)->capture_default_str();
  t->add_option("--lr-min", tr.cfg.eta_min)->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--out-ckpt", tr.out_ckpt, "Best checkpoint path")->required();
  t->add_option("--metrics-csv", tr.metrics_csv, "Per-epoch metrics");
  t->add_flag("--quiet", tr.quiet, "No progress lines on stderr");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Reconstruct a dataset and report NMSE");
  i->add_option("--ckpt", inf.ckpt)->required();
  i->add_option("--dataset", inf.dataset)->required();
  add_iteration_options(i, inf.iter);
  add_split_option(i, inf.split);
  i->add_flag("--timing", inf.timing, "Add wall-clock runtime");

  FlopsArgs fl;
  auto* f = app.add_subcommand("flops", "FLOPs and parameter ledger as JSON");
  auto* f_ckpt = f->add_option("--ckpt", fl.ckpt);
  auto* f_gamma = f->add_option("--gamma", fl.gamma, "Ratio instead of --ckpt");
  f_ckpt->excludes(f_gamma);
  f->add_option("--na", fl.na)->capture_default_str();
  f->add_option("--nt", fl.nt)->capture_default_str();
  f->add_option("--width", fl.width)->capture_default_str();
  add_iteration_options(f, fl.iter);

  ReportArgs sw;
  sw.values = "1..10";
  auto* s = app.add_subcommand("sweep", "NMSE versus encoder iterations");
  add_report_options(s, sw);
  s->add_option("--te-range", sw.values, "Range a..b or list a,b,c")
      ->capture_default_str();

  ReportArgs to;
  auto* o = app.add_subcommand("tradeoff", "NMSE versus encoder FLOPs budget");
  add_report_options(o, to);
  o->add_option("--budgets", to.values, "Comma list of encoder budgets")
      ->required();

  try {
    app.parse(argc, argv);
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*i) return run_infer(inf);
    if (*f) {
      if (fl.ckpt.empty() && fl.gamma.empty())
        throw CLI::RequiredError("--ckpt or --gamma");
      return run_flops(fl);
    }
    if (*s) {
      const auto te = parse_list("--te-range", sw.values);
      return run_report(sw, [&](const auto& p, const auto& d, const auto& m,
                                std::uint64_t td) {
        return sweep_iterations(p, d, m, te, td);
      });
    }
    if (*o) {
      const auto budgets = parse_list("--budgets", to.values);
      return run_report(to, [&](const auto& p, const auto& d, const auto& m,
                                std::uint64_t td) {
        return tradeoff_report(p, d, m, budgets, td);
      });
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitParse;
  } catch (const BudgetInfeasible& e) {
    std::cerr << "deq-csi: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const ParseError& e) {
    std::cerr << "deq-csi: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::exception& e) {
    std::cerr << "deq-csi: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
