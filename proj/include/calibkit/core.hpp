#pragma once

// Core value types shared by every calibrator and metric: logit records,
// probability vectors, top-label predictions, and the error hierarchy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calibkit {

// Bad argument or violated precondition. Maps to CLI exit code 1.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input data (files, inconsistent widths). Maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN loss, diverged optimizer and the like. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void warn(const std::string& msg) { std::cerr << "calibkit: warning: " << msg << '\n'; }
}  // namespace detail

struct LogitRecord {
  std::size_t label = 0;
  std::vector<double> logits;
};

// A set of records sharing one class count. Construct through make() to
// have the invariants checked.
struct Dataset {
  std::vector<LogitRecord> records;
  std::size_t num_classes = 0;

  [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
  [[nodiscard]] bool empty() const noexcept { return records.empty(); }

  static Dataset make(std::vector<LogitRecord> records) {
    if (records.empty()) throw InvalidArgument("dataset must be nonempty");
    Dataset ds;
    ds.num_classes = records.front().logits.size();
    if (ds.num_classes < 2) throw InvalidArgument("need at least 2 classes");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.logits.size() != ds.num_classes)
        throw InvalidArgument("record " + std::to_string(i) + " has inconsistent class count");
      if (r.label >= ds.num_classes)
        throw InvalidArgument("record " + std::to_string(i) + " label out of range");
      for (double z : r.logits)
        if (!std::isfinite(z)) throw InvalidArgument("record " + std::to_string(i) + " has non-finite logit");
    }
    ds.records = std::move(records);
    return ds;
  }

  // Records at the given indices, in that order.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.records.reserve(indices.size());
    for (std::size_t i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

using ProbVector = std::vector<double>;

struct PredictionRecord {
  std::size_t predicted_class = 0;
  double confidence = 0.0;
  bool correct = false;
};

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Max-shifted softmax of logits divided by `temperature`.
inline ProbVector softmax(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw InvalidArgument("softmax of empty sequence");
  double zmax = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidArgument("softmax input must be finite");
    zmax = std::max(zmax, z);
  }
  ProbVector p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp((logits[c] - zmax) / temperature);
    sum += p[c];
  }
  for (double& x : p) x /= sum;
  return p;
}

inline std::pair<std::size_t, double> top_label(std::span<const double> probs) {
  const std::size_t c = argmax(probs);
  return {c, probs[c]};
}

inline PredictionRecord make_prediction(std::span<const double> probs, std::size_t label) {
  const auto [cls, conf] = top_label(probs);
  return {cls, conf, cls == label};
}

// The min(k, C) largest logits in decreasing order. When C < k the tail is
// padded with the smallest selected value so the result always has length k.
inline std::vector<double> sorted_topk(std::span<const double> logits, std::size_t k) {
  if (k == 0) throw InvalidArgument("sorted_topk needs k >= 1");
  if (logits.empty()) throw InvalidArgument("sorted_topk of empty sequence");
  std::vector<double> v(logits.begin(), logits.end());
  const std::size_t take = std::min(k, v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take), v.end(), std::greater<>());
  v.resize(take);
  v.resize(k, v.back());
  return v;
}

// Top-label predictions of a dataset under plain softmax.
inline std::vector<PredictionRecord> uncalibrated_predictions(const Dataset& ds) {
  std::vector<PredictionRecord> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(make_prediction(softmax(r.logits), r.label));
  return out;
}

}  // namespace calibkit
