#pragma once

// Fitting several calibrators on a validation set and scoring them on a test
// set, plus the JSON layout of the resulting report.

#include <chrono>
#include <cstdlib>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibkit/calibrator.hpp"
#include "calibkit/metrics.hpp"

namespace calibkit {

struct MethodReport {
  std::string method;
  double accuracy = 0.0;
  double nll = 0.0;
  std::vector<std::pair<std::size_t, double>> ece_equal_width;  // (M, ECE^1)
  std::size_t equal_mass_bins = 0;
  double ece_equal_mass = 0.0;
  double ece_kde = 0.0;
  std::vector<BinStats> reliability;
  std::size_t changed_predictions = 0;
  double fit_seconds = 0.0;
};

// Scores calibrated probabilities. Equal-mass ECE and the reliability rows use
// the first entry of `bins`.
inline MethodReport evaluate(const std::string& name, const Dataset& test, std::span<const ProbVector> probs,
                             std::span<const std::size_t> bins) {
  if (bins.empty()) throw InvalidArgument("evaluate: need at least one bin count");
  MethodReport r;
  r.method = name;
  std::vector<PredictionRecord> preds;
  preds.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    preds.push_back(make_prediction(probs[i], test.records[i].label));
    if (preds.back().predicted_class != argmax(test.records[i].logits)) ++r.changed_predictions;
  }
  r.accuracy = accuracy(preds);
  r.nll = nll(test, probs);
  for (std::size_t m : bins) r.ece_equal_width.emplace_back(m, ece(preds, m, 1).value);
  r.equal_mass_bins = std::min(bins.front(), preds.size());
  r.ece_equal_mass = ece_equal_mass(preds, r.equal_mass_bins).value;
  r.ece_kde = preds.size() >= 10 ? ece_kde(preds).value : std::abs(r.accuracy - mean_confidence(preds));
  r.reliability = reliability_data(preds, bins.front());
  return r;
}

inline MethodReport evaluate_uncalibrated(const Dataset& test, std::span<const std::size_t> bins) {
  std::vector<ProbVector> probs;
  probs.reserve(test.size());
  for (const auto& r : test.records) probs.push_back(softmax(r.logits));
  return evaluate("base", test, probs, bins);
}

inline MethodReport evaluate_calibrator(const Calibrator& c, const Dataset& test, std::span<const std::size_t> bins) {
  if (c.num_classes != test.num_classes) throw DataError("test set class count does not match the model");
  return evaluate(to_string(c.kind()), test, c.probabilities(test), bins);
}

// Upper bound on worker threads: CALIBKIT_THREADS when set, else the hardware count.
inline std::size_t thread_cap() {
  if (const char* env = std::getenv("CALIBKIT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct FittedMethod {
  Calibrator calibrator;
  double seconds = 0.0;
};

// Fits every method on `val`, up to thread_cap() at a time. Results come back
// in the order of `methods` whatever the scheduling.
inline std::vector<FittedMethod> fit_all(std::span<const Method> methods, const Dataset& val, const FitOptions& opt) {
  auto one = [&](Method m) {
    const auto t0 = std::chrono::steady_clock::now();
    FittedMethod f{fit(m, val, opt), 0.0};
    f.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return f;
  };
  std::vector<FittedMethod> out;
  out.reserve(methods.size());
  const std::size_t cap = thread_cap();
  for (std::size_t start = 0; start < methods.size(); start += cap) {
    const std::size_t stop = std::min(methods.size(), start + cap);
    if (cap == 1) {
      out.push_back(one(methods[start]));
      continue;
    }
    std::vector<std::future<FittedMethod>> jobs;
    for (std::size_t i = start; i < stop; ++i) jobs.push_back(std::async(std::launch::async, one, methods[i]));
    for (auto& j : jobs) out.push_back(j.get());
  }
  return out;
}

// Base row first, then one row per method in the given order.
inline std::vector<MethodReport> compare(std::span<const Method> methods, const Dataset& val, const Dataset& test,
                                         const FitOptions& opt, std::span<const std::size_t> bins) {
  if (val.num_classes != test.num_classes) throw DataError("validation and test sets differ in class count");
  std::vector<MethodReport> out{evaluate_uncalibrated(test, bins)};
  for (auto& f : fit_all(methods, val, opt)) {
    out.push_back(evaluate_calibrator(f.calibrator, test, bins));
    out.back().fit_seconds = f.seconds;
  }
  return out;
}

// Report JSON. Wall-clock times are left out so identical runs produce
// identical bytes; see timings_to_json.
inline nlohmann::json report_to_json(std::span<const MethodReport> reports, std::size_t num_samples) {
  using nlohmann::json;
  json methods = json::object();
  std::vector<std::string> order;
  for (const auto& r : reports) {
    json ew = json::object();
    for (const auto& [m, v] : r.ece_equal_width) ew[std::to_string(m)] = v;
    json rel = json::array();
    for (const auto& b : r.reliability)
      rel.push_back({{"bin", b.bin_index},
                     {"count", b.count},
                     {"mean_confidence", b.mean_confidence},
                     {"accuracy", b.accuracy},
                     {"lower", b.lower},
                     {"upper", b.upper}});
    methods[r.method] = {{"accuracy", r.accuracy},
                         {"nll", r.nll},
                         {"ece_equal_width", ew},
                         {"ece_equal_mass", {{"bins", r.equal_mass_bins}, {"value", r.ece_equal_mass}}},
                         {"ece_kde", r.ece_kde},
                         {"changed_predictions", r.changed_predictions},
                         {"reliability", rel}};
    order.push_back(r.method);
  }
  return {{"num_samples", num_samples}, {"method_order", order}, {"methods", methods}};
}

inline nlohmann::json timings_to_json(std::span<const MethodReport> reports) {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& r : reports)
    if (r.method != "base") t[r.method] = {{"fit_seconds", r.fit_seconds}};
  return t;
}

}  // namespace calibkit
