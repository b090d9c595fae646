#pragma once

// Synthetic-oracle experiment runners: capacity sweep, bin-count sweep,
// data-efficiency sweep and loss ablation. Each produces a flat table that
// can be written as CSV or JSON for external plotting.

#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibkit/calibrator.hpp"
#include "calibkit/evaluation.hpp"
#include "calibkit/io.hpp"
#include "calibkit/synth.hpp"

namespace calibkit::experiments {

using Cell = std::variant<std::string, std::size_t, double>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  [[nodiscard]] std::string to_csv() const {
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
    out += '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out += ',';
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::string>) out += v;
              else if constexpr (std::is_same_v<T, double>) out += io::format_real(v);
              else out += std::to_string(v);
            },
            row[c]);
      }
      out += '\n';
    }
    return out;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json obj = nlohmann::json::object();
      for (std::size_t c = 0; c < row.size(); ++c) std::visit([&](const auto& v) { obj[columns[c]] = v; }, row[c]);
      rows_json.push_back(obj);
    }
    return {{"experiment", name}, {"columns", columns}, {"rows", rows_json}};
  }

  // Value of `column` in the first row whose string cells match `keys`.
  [[nodiscard]] double lookup(const std::vector<std::pair<std::string, Cell>>& keys, const std::string& column) const {
    auto index_of = [&](const std::string& col) {
      for (std::size_t c = 0; c < columns.size(); ++c)
        if (columns[c] == col) return c;
      throw InvalidArgument("no column " + col);
    };
    for (const auto& row : rows) {
      bool match = true;
      for (const auto& [k, v] : keys) match = match && row[index_of(k)] == v;
      if (match) return std::get<double>(row[index_of(column)]);
    }
    throw InvalidArgument("no matching row in " + name);
  }
};

struct Options {
  std::uint64_t seed = 17;
  PtsTrainConfig pts{.steps = 20000};
  std::vector<std::size_t> widths{1, 2, 5, 10, 20};
  std::vector<std::size_t> bins{5, 7, 9, 11, 13, 15, 17, 19};
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<Method> methods;  // empty: experiment default
  std::vector<LossKind> losses{LossKind::mse, LossKind::ece};
  std::size_t val_size = 50000;
  std::size_t test_size = 50000;
  std::optional<Dataset> val, test;  // replace the synthetic oracle when both set
};

struct OracleSplit {
  Dataset val, test;
};

// A synthetic oracle generated once and split into disjoint val/test halves.
inline OracleSplit oracle(synth::SynthConfig cfg, std::size_t val_size, std::size_t test_size) {
  cfg.num_samples = val_size + test_size;
  const auto data = synth::generate(cfg);
  const double n = static_cast<double>(cfg.num_samples);
  const double fr[2] = {static_cast<double>(val_size) / n, static_cast<double>(test_size) / n};
  auto parts = synth::split(data.dataset, fr, cfg.seed);
  return {std::move(parts[0]), std::move(parts[1])};
}

inline synth::SynthConfig heteroscedastic_config(std::uint64_t seed) {
  synth::SynthConfig c;
  c.regime = synth::Regime::heteroscedastic;
  c.base = 1.0;
  c.slope = 0.5;
  c.seed = seed;
  return c;
}

inline synth::SynthConfig global_config(std::uint64_t seed, double scale = 2.5) {
  synth::SynthConfig c;
  c.regime = synth::Regime::global_temp;
  c.scale = scale;
  c.seed = seed;
  return c;
}

// The five regimes of the bin-count sweep.
inline std::vector<std::pair<std::string, synth::SynthConfig>> sweep_regimes(std::uint64_t seed) {
  auto tail = heteroscedastic_config(seed);
  tail.regime = synth::Regime::overconfident_tail;
  tail.slope = 1.0;
  tail.knee = 2.0;
  return {{"global_s2.5", global_config(seed, 2.5)},
          {"global_s1.5", global_config(seed + 1, 1.5)},
          {"global_s0.7", global_config(seed + 2, 0.7)},
          {"heteroscedastic", heteroscedastic_config(seed + 3)},
          {"overconfident_tail", tail}};
}

namespace detail {

inline OracleSplit data_or_oracle(const Options& opt, const synth::SynthConfig& cfg) {
  if (opt.val && opt.test) return {*opt.val, *opt.test};
  return oracle(cfg, opt.val_size, opt.test_size);
}

inline FitOptions fit_options(const Options& opt) {
  FitOptions f;
  f.pts = opt.pts;
  f.pts.seed = opt.seed;
  f.pbmc.seed = opt.seed;
  return f;
}

inline double test_ece(const Calibrator& c, const Dataset& test, std::size_t bins = 10) {
  return ece(c.predict(test), bins, 1).value;
}

}  // namespace detail

// Test ECE^1 (M=10) against parameter count: TS (1), ETS (4) and PTS with two
// hidden layers of each requested width, on the heteroscedastic oracle.
inline Table capacity(const Options& opt) {
  const auto data = detail::data_or_oracle(opt, heteroscedastic_config(opt.seed));
  FitOptions fo = detail::fit_options(opt);
  Table t{"capacity", {"method", "hidden_width", "num_params", "ece"}, {}};
  t.rows.push_back({std::string("ts"), std::size_t{0}, std::size_t{1}, detail::test_ece(fit(Method::ts, data.val, fo), data.test)});
  t.rows.push_back({std::string("ets"), std::size_t{0}, std::size_t{4}, detail::test_ece(fit(Method::ets, data.val, fo), data.test)});
  for (std::size_t w : opt.widths) {
    fo.pts.hidden = {w, w};
    const auto c = fit(Method::pts, data.val, fo);
    const auto& model = std::get<PtsModel>(c.model);
    t.rows.push_back({std::string("pts"), w, model.mlp.size(), detail::test_ece(c, data.test)});
  }
  return t;
}

// Test ECE^1 for every requested bin count, per regime and method, followed
// by the across-regime mean ("mean" rows).
inline Table bin_sweep(const Options& opt) {
  std::vector<Method> methods = opt.methods.empty() ? std::vector<Method>{Method::ts, Method::ets, Method::pts} : opt.methods;
  std::vector<std::pair<std::string, OracleSplit>> sets;
  if (opt.val && opt.test) {
    sets.push_back({"files", {*opt.val, *opt.test}});
  } else {
    for (auto& [name, cfg] : sweep_regimes(opt.seed)) sets.push_back({name, oracle(cfg, opt.val_size, opt.test_size)});
  }
  const FitOptions fo = detail::fit_options(opt);
  Table t{"bins", {"regime", "method", "bins", "ece"}, {}};
  std::vector<std::vector<double>> sums(methods.size() + 1, std::vector<double>(opt.bins.size(), 0.0));
  for (const auto& [name, data] : sets) {
    std::vector<std::vector<PredictionRecord>> preds{uncalibrated_predictions(data.test)};
    for (Method m : methods) preds.push_back(fit(m, data.val, fo).predict(data.test));
    for (std::size_t k = 0; k < preds.size(); ++k)
      for (std::size_t b = 0; b < opt.bins.size(); ++b) {
        const double v = ece(preds[k], opt.bins[b], 1).value;
        sums[k][b] += v;
        t.rows.push_back({name, k == 0 ? std::string("base") : to_string(methods[k - 1]), opt.bins[b], v});
      }
  }
  for (std::size_t k = 0; k < sums.size(); ++k)
    for (std::size_t b = 0; b < opt.bins.size(); ++b)
      t.rows.push_back({std::string("mean"), k == 0 ? std::string("base") : to_string(methods[k - 1]), opt.bins[b],
                        sums[k][b] / static_cast<double>(sets.size())});
  return t;
}

// Test ECE^1 and accuracy of calibrators fitted on nested seeded subsets of
// the validation set (global-temperature oracle).
inline Table data_efficiency(const Options& opt) {
  std::vector<Method> methods = opt.methods.empty()
                                    ? std::vector<Method>{Method::ts, Method::ets, Method::pts, Method::irova,
                                                          Method::irova_ts, Method::irm, Method::pbmc}
                                    : opt.methods;
  const auto data = detail::data_or_oracle(opt, global_config(opt.seed));
  std::vector<std::size_t> perm(data.val.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(opt.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const FitOptions fo = detail::fit_options(opt);
  Table t{"data_efficiency", {"method", "fraction", "num_val", "ece", "accuracy"}, {}};
  for (double f : opt.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("fractions must lie in (0, 1]");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(perm.size()) + 1e-9)));
    const Dataset subset = data.val.subset(std::span(perm).first(n));
    for (Method m : methods) {
      const auto preds = fit(m, subset, fo).predict(data.test);
      t.rows.push_back({to_string(m), f, n, ece(preds, 10, 1).value, accuracy(preds)});
    }
  }
  return t;
}

// Test ECE^1 of each method trained with each loss, on the heteroscedastic oracle.
inline Table loss_ablation(const Options& opt) {
  std::vector<Method> methods = opt.methods.empty() ? std::vector<Method>{Method::ets, Method::pts} : opt.methods;
  const auto data = detail::data_or_oracle(opt, heteroscedastic_config(opt.seed));
  Table t{"loss_ablation", {"method", "loss", "ece"}, {}};
  for (Method m : methods) {
    if (m != Method::ets && m != Method::pts) throw InvalidArgument("loss ablation supports ets and pts only");
    for (LossKind loss : opt.losses) {
      FitOptions fo = detail::fit_options(opt);
      fo.ets_loss = loss;
      fo.pts.loss = loss;
      t.rows.push_back({to_string(m), to_string(loss), detail::test_ece(fit(m, data.val, fo), data.test)});
    }
  }
  return t;
}

inline Table run(const std::string& name, const Options& opt) {
  if (name == "capacity") return capacity(opt);
  if (name == "bins") return bin_sweep(opt);
  if (name == "data_efficiency") return data_efficiency(opt);
  if (name == "loss_ablation") return loss_ablation(opt);
  throw InvalidArgument("unknown experiment '" + name + "'");
}

}  // namespace calibkit::experiments
