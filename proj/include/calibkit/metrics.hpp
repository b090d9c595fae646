#pragma once

// Calibration metrics: binned ECE (equal-width and equal-mass), a kernel
// density ECE, accuracy, NLL and reliability-diagram rows.
//
// All sums run sequentially in input order, so results are bitwise stable
// for a fixed input sequence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "calibkit/core.hpp"

namespace calibkit {

struct BinStats {
  std::size_t bin_index = 0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

enum class EceKind { equal_width, equal_mass, kde };

inline std::string to_string(EceKind k) {
  switch (k) {
    case EceKind::equal_width: return "equal_width";
    case EceKind::equal_mass: return "equal_mass";
    case EceKind::kde: return "kde";
  }
  return "?";
}

struct EceReport {
  EceKind kind = EceKind::equal_width;
  double value = 0.0;
  std::size_t num_bins = 0;  // zero for kde
  double bandwidth = 0.0;    // kde only
  std::vector<BinStats> bins;
};

// 1-based bin m of the interval ((m-1)/M, m/M]; confidence 0 lands in bin 1.
inline std::size_t equal_width_bin(double confidence, std::size_t num_bins) {
  const double mf = static_cast<double>(num_bins);
  auto m = static_cast<std::size_t>(std::clamp(std::ceil(confidence * mf), 1.0, mf));
  // Correct the rare off-by-one from rounding in confidence * M.
  while (m > 1 && confidence <= static_cast<double>(m - 1) / mf) --m;
  while (m < num_bins && confidence > static_cast<double>(m) / mf) ++m;
  return m;
}

inline std::vector<BinStats> bin_equal_width(std::span<const PredictionRecord> preds, std::size_t num_bins) {
  if (num_bins == 0) throw InvalidArgument("bin count must be >= 1");
  std::vector<BinStats> bins(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0), hit_sum(num_bins, 0.0);
  for (std::size_t m = 0; m < num_bins; ++m) {
    bins[m].bin_index = m + 1;
    bins[m].lower = static_cast<double>(m) / static_cast<double>(num_bins);
    bins[m].upper = static_cast<double>(m + 1) / static_cast<double>(num_bins);
  }
  for (const auto& p : preds) {
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) throw InvalidArgument("confidence outside [0,1]");
    const std::size_t m = equal_width_bin(p.confidence, num_bins) - 1;
    ++bins[m].count;
    conf_sum[m] += p.confidence;
    hit_sum[m] += p.correct ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < num_bins; ++m) {
    if (bins[m].count == 0) continue;
    const auto n = static_cast<double>(bins[m].count);
    bins[m].mean_confidence = conf_sum[m] / n;
    bins[m].accuracy = hit_sum[m] / n;
  }
  return bins;
}

namespace detail {

inline double gap(double acc, double conf, int degree) {
  const double g = acc - conf;
  return degree == 1 ? std::abs(g) : g * g;
}

inline double weighted_gap_sum(std::span<const BinStats> bins, std::size_t total, int degree) {
  if (total == 0) return 0.0;
  double v = 0.0;
  const auto n = static_cast<double>(total);
  for (const auto& b : bins)
    if (b.count > 0) v += static_cast<double>(b.count) / n * gap(b.accuracy, b.mean_confidence, degree);
  return v;
}

}  // namespace detail

// Binned ECE with M equal-width bins. degree 1 uses |acc - conf|,
// degree 2 the squared gap.
inline EceReport ece(std::span<const PredictionRecord> preds, std::size_t num_bins, int degree = 1) {
  if (degree != 1 && degree != 2) throw InvalidArgument("ECE degree must be 1 or 2");
  EceReport r;
  r.kind = EceKind::equal_width;
  r.num_bins = num_bins;
  r.bins = bin_equal_width(preds, num_bins);
  r.value = detail::weighted_gap_sum(r.bins, preds.size(), degree);
  return r;
}

// Equal-mass bins over the confidences sorted by (confidence, original index).
// A quantile boundary that would split a run of identical confidences is
// dropped, so tied samples always share a bin.
inline std::vector<BinStats> bin_equal_mass(std::span<const PredictionRecord> preds, std::size_t num_bins) {
  if (num_bins == 0) throw InvalidArgument("bin count must be >= 1");
  const std::size_t n = preds.size();
  if (n < num_bins) throw InvalidArgument("equal-mass binning needs at least as many samples as bins");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence < preds[b].confidence; });

  std::vector<std::size_t> starts{0};
  for (std::size_t m = 1; m < num_bins; ++m) {
    const std::size_t cut = m * n / num_bins;
    if (cut > starts.back() && preds[order[cut - 1]].confidence < preds[order[cut]].confidence)
      starts.push_back(cut);
  }
  starts.push_back(n);

  std::vector<BinStats> bins;
  for (std::size_t b = 0; b + 1 < starts.size(); ++b) {
    BinStats s;
    s.bin_index = b + 1;
    s.count = starts[b + 1] - starts[b];
    double conf = 0.0, hits = 0.0;
    for (std::size_t i = starts[b]; i < starts[b + 1]; ++i) {
      conf += preds[order[i]].confidence;
      hits += preds[order[i]].correct ? 1.0 : 0.0;
    }
    s.mean_confidence = conf / static_cast<double>(s.count);
    s.accuracy = hits / static_cast<double>(s.count);
    s.lower = preds[order[starts[b]]].confidence;
    s.upper = preds[order[starts[b + 1] - 1]].confidence;
    bins.push_back(s);
  }
  return bins;
}

inline EceReport ece_equal_mass(std::span<const PredictionRecord> preds, std::size_t num_bins) {
  EceReport r;
  r.kind = EceKind::equal_mass;
  r.num_bins = num_bins;
  r.bins = bin_equal_mass(preds, num_bins);
  r.value = detail::weighted_gap_sum(r.bins, preds.size(), 1);
  return r;
}

inline double accuracy(std::span<const PredictionRecord> preds) {
  if (preds.empty()) throw InvalidArgument("accuracy of empty prediction set");
  double hits = 0.0;
  for (const auto& p : preds) hits += p.correct ? 1.0 : 0.0;
  return hits / static_cast<double>(preds.size());
}

inline double mean_confidence(std::span<const PredictionRecord> preds) {
  if (preds.empty()) throw InvalidArgument("mean confidence of empty prediction set");
  double s = 0.0;
  for (const auto& p : preds) s += p.confidence;
  return s / static_cast<double>(preds.size());
}

inline constexpr std::size_t kKdeGridPoints = 1024;

// Kernel-density ECE. A Gaussian-kernel Nadaraya-Watson estimate of accuracy
// given confidence is compared against the diagonal and integrated against
// the kernel density of the confidences on a 1024-point grid spanning the
// observed confidence range. Bandwidth is Silverman's rule clamped to
// [1e-3, 0.1]. Zero-variance confidences fall back to |acc - conf|.
inline EceReport ece_kde(std::span<const PredictionRecord> preds) {
  const std::size_t n = preds.size();
  if (n < 10) throw InvalidArgument("kde ECE needs at least 10 predictions");
  EceReport r;
  r.kind = EceKind::kde;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence < preds[b].confidence; });
  std::vector<double> conf(n), hit(n);
  for (std::size_t i = 0; i < n; ++i) {
    conf[i] = preds[order[i]].confidence;
    hit[i] = preds[order[i]].correct ? 1.0 : 0.0;
  }

  const double mean = mean_confidence(preds);
  double var = 0.0;
  for (double c : conf) var += (c - mean) * (c - mean);
  var /= static_cast<double>(n - 1);
  const double sd = std::sqrt(var);
  if (sd == 0.0 || conf.front() == conf.back()) {
    r.value = std::abs(accuracy(preds) - mean);
    return r;
  }

  const double h = std::clamp(1.06 * sd * std::pow(static_cast<double>(n), -0.2), 1e-3, 0.1);
  r.bandwidth = h;
  const double lo = conf.front(), hi = conf.back();
  const double step = (hi - lo) / static_cast<double>(kKdeGridPoints - 1);
  const double reach = 8.0 * h;
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * 3.14159265358979323846));

  double value = 0.0;
  std::size_t first = 0;
  for (std::size_t g = 0; g < kKdeGridPoints; ++g) {
    const double p = lo + step * static_cast<double>(g);
    while (first < n && conf[first] < p - reach) ++first;
    double wsum = 0.0, ysum = 0.0;
    for (std::size_t i = first; i < n && conf[i] <= p + reach; ++i) {
      const double u = (p - conf[i]) / h;
      const double k = std::exp(-0.5 * u * u);
      wsum += k;
      ysum += k * hit[i];
    }
    if (wsum <= 0.0) continue;
    const double acc_hat = ysum / wsum;
    const double density = wsum * norm;
    value += std::abs(acc_hat - p) * density * step;
  }
  r.value = std::min(value, 1.0);
  return r;
}

// Mean negative log-likelihood of the labels; probabilities are clamped at 1e-12.
inline double nll(const Dataset& ds, std::span<const ProbVector> probs) {
  if (ds.empty() || probs.size() != ds.size()) throw InvalidArgument("nll needs one probability vector per record");
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) s -= std::log(std::max(probs[i][ds.records[i].label], 1e-12));
  return s / static_cast<double>(ds.size());
}

// Plot-ready reliability rows: the equal-width bins, empty bins included.
inline std::vector<BinStats> reliability_data(std::span<const PredictionRecord> preds, std::size_t num_bins) {
  return bin_equal_width(preds, num_bins);
}

}  // namespace calibkit
