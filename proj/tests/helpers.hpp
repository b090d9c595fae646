#pragma once

#include <random>
#include <vector>

#include "calibkit/core.hpp"

namespace calibkit::testing {

inline Dataset random_dataset(std::size_t n, std::size_t classes, std::uint64_t seed, double spread = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, spread);
  std::uniform_int_distribution<std::size_t> lab(0, classes - 1);
  std::vector<LogitRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    LogitRecord r;
    r.label = lab(rng);
    for (std::size_t c = 0; c < classes; ++c) r.logits.push_back(z(rng));
    recs.push_back(std::move(r));
  }
  return Dataset::make(std::move(recs));
}

inline std::vector<PredictionRecord> preds_from(std::vector<double> conf, std::vector<bool> correct) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < conf.size(); ++i) out.push_back({0, conf[i], correct[i]});
  return out;
}

}  // namespace calibkit::testing
