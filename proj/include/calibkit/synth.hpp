#pragma once

// Seeded generators of miscalibrated logit datasets whose calibration map is
// known exactly.
//
// True logits z* are drawn from a Gaussian mixture (a uniformly chosen class
// gets mean `concentration`, every coordinate gets unit-variance noise) and
// labels are sampled from softmax(z*). The emitted logits are z = T*(z*) z*
// where the regime fixes the oracle temperature T*:
//
//   global_temp        T* = s
//   heteroscedastic    T* = b + a * gap(z*)
//   overconfident_tail T* = b + a * max(0, gap(z*) - knee)
//
// with gap the difference of the two largest logits. Each map is invertible
// from the emitted logits, so softmax(z / T*) recovers the label-generating
// probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "calibkit/core.hpp"

namespace calibkit::synth {

enum class Regime { global_temp, heteroscedastic, overconfident_tail };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::global_temp: return "global_temp";
    case Regime::heteroscedastic: return "heteroscedastic";
    case Regime::overconfident_tail: return "overconfident_tail";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "global_temp") return Regime::global_temp;
  if (s == "heteroscedastic") return Regime::heteroscedastic;
  if (s == "overconfident_tail") return Regime::overconfident_tail;
  throw InvalidArgument("unknown synthetic regime '" + s + "'");
}

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t num_samples = 20000;
  Regime regime = Regime::global_temp;
  double scale = 2.5;   // s, global_temp
  double slope = 0.5;   // a, heteroscedastic and overconfident_tail
  double base = 1.0;    // b, heteroscedastic and overconfident_tail
  double knee = 2.0;    // overconfident_tail only
  double concentration = 3.0;
  std::uint64_t seed = 17;

  void validate() const {
    if (num_samples < 1) throw InvalidArgument("synth: need at least one sample");
    if (num_classes < 2) throw InvalidArgument("synth: need at least two classes");
    if (!(scale > 0.0)) throw InvalidArgument("synth: scale must be positive");
    if (!(base >= 1e-2)) throw InvalidArgument("synth: base temperature must be >= t_min");
    if (!(slope >= 0.0)) throw InvalidArgument("synth: slope must be nonnegative");
    if (!(knee >= 0.0)) throw InvalidArgument("synth: knee must be nonnegative");
    if (!std::isfinite(concentration)) throw InvalidArgument("synth: concentration must be finite");
  }
};

struct SynthData {
  Dataset dataset;
  std::vector<ProbVector> true_probs;        // softmax(z*) per record
  std::vector<double> oracle_temperature;    // T*(z*) per record
};

inline double top_gap(std::span<const double> z) {
  double first = -HUGE_VAL, second = -HUGE_VAL;
  for (double v : z) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first - second;
}

// T* as a function of the true logits.
inline double forward_temperature(const SynthConfig& cfg, std::span<const double> true_logits) {
  switch (cfg.regime) {
    case Regime::global_temp: return cfg.scale;
    case Regime::heteroscedastic: return cfg.base + cfg.slope * top_gap(true_logits);
    case Regime::overconfident_tail: return cfg.base + cfg.slope * std::max(0.0, top_gap(true_logits) - cfg.knee);
  }
  return 1.0;
}

// T* recovered from the emitted logits alone: the gap scales as G = T*(g) g,
// which is solved for the true gap g.
inline double oracle_temperature(const SynthConfig& cfg, std::span<const double> logits) {
  const double big_gap = top_gap(logits);
  const double a = cfg.slope, b = cfg.base;
  switch (cfg.regime) {
    case Regime::global_temp: return cfg.scale;
    case Regime::heteroscedastic: {
      if (a == 0.0) return b;
      const double g = 2.0 * big_gap / (b + std::sqrt(b * b + 4.0 * a * big_gap));
      return b + a * g;
    }
    case Regime::overconfident_tail: {
      if (a == 0.0 || big_gap <= b * cfg.knee) return b;
      const double lin = b - a * cfg.knee;
      const double g = 2.0 * big_gap / (lin + std::sqrt(lin * lin + 4.0 * a * big_gap));
      return b + a * (g - cfg.knee);
    }
  }
  return 1.0;
}

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, cfg.num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthData out;
  out.dataset.num_classes = cfg.num_classes;
  out.dataset.records.reserve(cfg.num_samples);
  out.true_probs.reserve(cfg.num_samples);
  out.oracle_temperature.reserve(cfg.num_samples);
  std::vector<double> zstar(cfg.num_classes);
  for (std::size_t n = 0; n < cfg.num_samples; ++n) {
    const std::size_t centre = pick_class(rng);
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
      zstar[c] = (c == centre ? cfg.concentration : 0.0) + noise(rng);
    ProbVector p = softmax(zstar);
    const double u = unit(rng);
    std::size_t label = cfg.num_classes - 1;
    double acc = 0.0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      acc += p[c];
      if (u < acc) {
        label = c;
        break;
      }
    }
    const double t = forward_temperature(cfg, zstar);
    LogitRecord r;
    r.label = label;
    r.logits.resize(cfg.num_classes);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) r.logits[c] = t * zstar[c];
    out.dataset.records.push_back(std::move(r));
    out.true_probs.push_back(std::move(p));
    out.oracle_temperature.push_back(t);
  }
  return out;
}

// Disjoint index sets from one seeded shuffle, taken as contiguous runs of
// floor(f * n) indices for each fraction f.
inline std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions,
                                                           std::uint64_t seed) {
  if (fractions.empty()) throw InvalidArgument("split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidArgument("split: fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw InvalidArgument("split: fractions sum above 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> parts;
  std::size_t pos = 0;
  for (double f : fractions) {
    const auto len = std::min(static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)), n - pos);
    if (len == 0) throw InvalidArgument("split: a fraction yields an empty subset");
    parts.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                       perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

inline std::vector<Dataset> split(const Dataset& ds, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<Dataset> out;
  for (const auto& idx : split_indices(ds.size(), fractions, seed)) out.push_back(ds.subset(idx));
  return out;
}

}  // namespace calibkit::synth
