#pragma once

// Non-scaling baselines built on pool-adjacent-violators: histogram binning,
// one-vs-all isotonic regression (IROvA), accuracy-preserving isotonic
// regression with a shared strictly increasing map (IRM), the TS + IROvA
// composite and the scaling-binning calibrator (PBMC). All of them act on
// softmax probabilities, never on raw logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "calibkit/core.hpp"
#include "calibkit/metrics.hpp"
#include "calibkit/scaling.hpp"
#include "calibkit/synth.hpp"

namespace calibkit {

// Weighted least-squares nondecreasing fit of ys (ordered by xs). Runs of
// equal xs are pooled first, so tied inputs always receive the same value.
inline std::vector<double> pav(std::span<const double> xs, std::span<const double> ys,
                               std::span<const double> weights) {
  const std::size_t n = ys.size();
  if (xs.size() != n || weights.size() != n) throw InvalidArgument("pav: length mismatch");
  for (std::size_t i = 1; i < n; ++i)
    if (xs[i] < xs[i - 1]) throw InvalidArgument("pav: xs must be sorted ascending");
  for (double w : weights)
    if (!(w > 0.0)) throw InvalidArgument("pav: weights must be positive");

  struct Block {
    double mean, weight;
    std::size_t len;
  };
  std::vector<Block> stack;
  stack.reserve(n);
  for (std::size_t i = 0; i < n;) {
    // Tie group [i, j).
    std::size_t j = i;
    double wsum = 0.0, ysum = 0.0;
    while (j < n && xs[j] == xs[i]) {
      wsum += weights[j];
      ysum += weights[j] * ys[j];
      ++j;
    }
    Block b{ysum / wsum, wsum, j - i};
    while (!stack.empty() && stack.back().mean >= b.mean) {
      const Block top = stack.back();
      stack.pop_back();
      const double w = top.weight + b.weight;
      b = {(top.mean * top.weight + b.mean * b.weight) / w, w, top.len + b.len};
    }
    stack.push_back(b);
    i = j;
  }
  std::vector<double> out;
  out.reserve(n);
  for (const auto& b : stack) out.insert(out.end(), b.len, b.mean);
  return out;
}

// Right-continuous step function with constant extrapolation on both sides.
struct StepFunction {
  std::vector<double> knots;   // strictly increasing
  std::vector<double> values;  // nondecreasing

  [[nodiscard]] double operator()(double x) const {
    if (knots.empty()) return x;
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    if (it == knots.begin()) return values.front();
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
  }
};

// Isotonic fit of targets against scores, one knot per distinct score.
inline StepFunction fit_isotonic(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw InvalidArgument("isotonic fit: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> xs, ys;
  xs.reserve(order.size());
  ys.reserve(order.size());
  for (auto i : order) {
    xs.push_back(scores[i]);
    ys.push_back(targets[i]);
  }
  const std::vector<double> w(xs.size(), 1.0);
  const auto fitted = pav(xs, ys, w);
  StepFunction f;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!f.knots.empty() && f.knots.back() == xs[i]) continue;
    f.knots.push_back(xs[i]);
    f.values.push_back(fitted[i]);
  }
  return f;
}

// Rewrites a probability vector so its top entry becomes `q`. Raising the
// top entry shrinks the others proportionally; lowering it mixes toward the
// uniform vector, which keeps the ranking for q above 1/C.
inline ProbVector set_top_confidence(std::span<const double> probs, double q) {
  const std::size_t c_count = probs.size();
  const double u = 1.0 / static_cast<double>(c_count);
  const std::size_t top = argmax(probs);
  const double p = probs[top];
  ProbVector out(probs.begin(), probs.end());
  if (q >= p) {
    const double rest = 1.0 - p;
    for (std::size_t c = 0; c < c_count; ++c)
      out[c] = c == top ? q : (rest > 0.0 ? probs[c] * (1.0 - q) / rest : (1.0 - q) / static_cast<double>(c_count - 1));
  } else if (p - u > 0.0) {
    const double lambda = (q - u) / (p - u);
    for (std::size_t c = 0; c < c_count; ++c) out[c] = lambda * probs[c] + (1.0 - lambda) * u;
    out[top] = q;
  } else {
    for (std::size_t c = 0; c < c_count; ++c) out[c] = c == top ? q : (1.0 - q) / static_cast<double>(c_count - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histogram binning

struct HistBinModel {
  std::vector<double> thresholds;  // upper edges of all but the last bin
  std::vector<double> scores;      // Q_m per bin

  [[nodiscard]] std::size_t bin_of(double confidence) const {
    return static_cast<std::size_t>(std::lower_bound(thresholds.begin(), thresholds.end(), confidence) -
                                    thresholds.begin());
  }
  [[nodiscard]] double calibrate(double confidence) const { return scores[bin_of(confidence)]; }
};

namespace detail {

// Thresholds halfway between neighbouring equal-mass bins.
inline std::vector<double> thresholds_of(std::span<const BinStats> bins) {
  std::vector<double> t;
  for (std::size_t m = 0; m + 1 < bins.size(); ++m) t.push_back(0.5 * (bins[m].upper + bins[m + 1].lower));
  return t;
}

}  // namespace detail

// Equal-mass bins over the fit confidences; Q_m is the bin's mean correctness,
// the minimiser of the bin-wise squared loss.
inline HistBinModel fit_hist_binning(std::span<const PredictionRecord> preds, std::size_t num_bins) {
  const auto bins = bin_equal_mass(preds, num_bins);
  HistBinModel m;
  m.thresholds = detail::thresholds_of(bins);
  for (const auto& b : bins) m.scores.push_back(b.accuracy);
  return m;
}

inline ProbVector apply_hist_binning(std::span<const double> logits, const HistBinModel& m) {
  const ProbVector p = softmax(logits);
  return set_top_confidence(p, m.calibrate(p[argmax(p)]));
}

// ---------------------------------------------------------------------------
// One-vs-all isotonic regression

// One map per class. An empty map list is the identity calibrator.
struct IrovaModel {
  std::vector<StepFunction> maps;
};

inline IrovaModel fit_irova_probs(std::span<const ProbVector> probs, std::span<const std::size_t> labels,
                                  std::size_t num_classes) {
  if (probs.empty() || probs.size() != labels.size()) throw InvalidArgument("fit_irova: need matching probs and labels");
  IrovaModel m;
  std::vector<double> xs(probs.size()), ys(probs.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      xs[i] = probs[i][c];
      ys[i] = labels[i] == c ? 1.0 : 0.0;
    }
    m.maps.push_back(fit_isotonic(xs, ys));
  }
  return m;
}

inline IrovaModel fit_irova(const Dataset& ds) {
  if (ds.empty()) throw InvalidArgument("fit_irova needs a nonempty dataset");
  std::vector<ProbVector> probs;
  std::vector<std::size_t> labels;
  for (const auto& r : ds.records) {
    probs.push_back(softmax(r.logits));
    labels.push_back(r.label);
  }
  return fit_irova_probs(probs, labels, ds.num_classes);
}

// Per-class map then renormalisation; all-zero scores fall back to uniform.
inline ProbVector apply_irova_probs(std::span<const double> probs, const IrovaModel& m) {
  ProbVector out(probs.begin(), probs.end());
  if (m.maps.empty()) return out;
  if (m.maps.size() != probs.size()) throw InvalidArgument("IROvA model class count mismatch");
  double sum = 0.0;
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = m.maps[c](probs[c]);
    sum += out[c];
  }
  if (sum <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (double& v : out) v /= sum;
  return out;
}

inline ProbVector apply_irova(std::span<const double> logits, const IrovaModel& m) {
  return apply_irova_probs(softmax(logits), m);
}

// ---------------------------------------------------------------------------
// Accuracy-preserving isotonic regression

inline constexpr double kIrmStrictness = 1e-6;

// One isotonic map shared by all classes, made strictly increasing by adding
// delta * p, so the within-sample ranking of class scores survives.
struct IrmModel {
  StepFunction map;
  double delta = kIrmStrictness;
};

inline IrmModel fit_irm(const Dataset& ds) {
  if (ds.empty()) throw InvalidArgument("fit_irm needs a nonempty dataset");
  std::vector<double> xs, ys;
  xs.reserve(ds.size() * ds.num_classes);
  ys.reserve(ds.size() * ds.num_classes);
  for (const auto& r : ds.records) {
    const ProbVector p = softmax(r.logits);
    for (std::size_t c = 0; c < p.size(); ++c) {
      xs.push_back(p[c]);
      ys.push_back(c == r.label ? 1.0 : 0.0);
    }
  }
  return {fit_isotonic(xs, ys), kIrmStrictness};
}

inline ProbVector apply_irm(std::span<const double> logits, const IrmModel& m) {
  ProbVector p = softmax(logits);
  double sum = 0.0;
  for (double& v : p) {
    v = m.map(v) + m.delta * v;
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

// ---------------------------------------------------------------------------
// TS followed by IROvA

struct IrovaTsModel {
  TsModel ts;
  IrovaModel irova;
};

inline IrovaTsModel fit_irova_ts(const Dataset& ds) {
  IrovaTsModel m;
  m.ts = fit_ts(ds);
  std::vector<ProbVector> probs;
  std::vector<std::size_t> labels;
  for (const auto& r : ds.records) {
    probs.push_back(apply_ts(r.logits, m.ts));
    labels.push_back(r.label);
  }
  m.irova = fit_irova_probs(probs, labels, ds.num_classes);
  return m;
}

inline ProbVector apply_irova_ts(std::span<const double> logits, const IrovaTsModel& m) {
  return apply_irova_probs(apply_ts(logits, m.ts), m.irova);
}

// ---------------------------------------------------------------------------
// Scaling-binning (PBMC)

struct PbmcModel {
  TsModel ts;
  std::vector<double> thresholds;
  std::vector<double> scores;  // mean TS-scaled confidence per bin

  [[nodiscard]] double calibrate(double scaled_confidence) const {
    const auto m = static_cast<std::size_t>(std::lower_bound(thresholds.begin(), thresholds.end(), scaled_confidence) -
                                            thresholds.begin());
    return scores[m];
  }
};

struct PbmcOptions {
  std::size_t num_bins = 10;
  std::uint64_t seed = 17;
  std::optional<double> fixed_temperature;  // skips the TS fit when set
};

// Three disjoint folds from a seeded shuffle: fold 1 fits T, fold 2 places
// equal-mass edges over the scaled confidences, fold 3 sets each bin's output
// to the mean scaled confidence falling in it.
inline PbmcModel fit_pbmc(const Dataset& ds, const PbmcOptions& opt = {}) {
  if (opt.num_bins == 0) throw InvalidArgument("fit_pbmc: bin count must be >= 1");
  if (ds.size() < 3 * opt.num_bins) throw InvalidArgument("fit_pbmc needs at least 3 * bins samples");
  const double third = 1.0 / 3.0;
  const double fr[3] = {third, third, third};
  auto folds = synth::split(ds, fr, opt.seed);

  PbmcModel m;
  m.ts = opt.fixed_temperature ? TsModel{*opt.fixed_temperature} : fit_ts(folds[0]);

  auto scaled_preds = [&](const Dataset& d) {
    std::vector<PredictionRecord> out;
    for (const auto& r : d.records) out.push_back(make_prediction(apply_ts(r.logits, m.ts), r.label));
    return out;
  };
  const auto edges = bin_equal_mass(scaled_preds(folds[1]), opt.num_bins);
  m.thresholds = detail::thresholds_of(edges);

  std::vector<double> sum(edges.size(), 0.0), count(edges.size(), 0.0);
  for (const auto& p : scaled_preds(folds[2])) {
    const auto b = static_cast<std::size_t>(std::lower_bound(m.thresholds.begin(), m.thresholds.end(), p.confidence) -
                                            m.thresholds.begin());
    sum[b] += p.confidence;
    count[b] += 1.0;
  }
  for (std::size_t b = 0; b < edges.size(); ++b)
    m.scores.push_back(count[b] > 0.0 ? sum[b] / count[b] : edges[b].mean_confidence);
  return m;
}

inline ProbVector apply_pbmc(std::span<const double> logits, const PbmcModel& m) {
  const ProbVector p = apply_ts(logits, m.ts);
  return set_top_confidence(p, m.calibrate(p[argmax(p)]));
}

}  // namespace calibkit
