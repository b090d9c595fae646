#pragma once

// Accuracy-preserving scaling calibrators: temperature scaling (TS),
// ensemble temperature scaling (ETS) and parameterized temperature scaling
// (PTS), where a small network maps the sorted top-k logits of each sample
// to its own temperature.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "calibkit/core.hpp"
#include "calibkit/metrics.hpp"
#include "calibkit/tinynn.hpp"

namespace calibkit {

enum class LossKind { mse, ece };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "ece"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "ece") return LossKind::ece;
  throw InvalidArgument("unknown loss kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Temperature scaling

struct TsModel {
  double temperature = 1.0;
};

inline ProbVector apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  return softmax(logits, temperature);
}

inline ProbVector apply_ts(std::span<const double> logits, const TsModel& m) {
  return apply_temperature(logits, m.temperature);
}

// Mean NLL of the labels under softmax(z / T).
inline double temperature_nll(const Dataset& ds, double temperature) {
  double total = 0.0;
  for (const auto& r : ds.records) {
    const double zmax = *std::max_element(r.logits.begin(), r.logits.end());
    double s = 0.0;
    for (double z : r.logits) s += std::exp((z - zmax) / temperature);
    total += std::log(s) - (r.logits[r.label] - zmax) / temperature;
  }
  return total / static_cast<double>(ds.size());
}

inline constexpr double kMinTemperature = 1e-2;
inline constexpr double kMaxTemperature = 1e2;

// Golden-section search for the NLL-minimising T over log T in
// [ln 1e-2, ln 1e2], stopping when the bracket is narrower than 1e-4.
inline TsModel fit_ts(const Dataset& ds) {
  if (ds.empty()) throw InvalidArgument("fit_ts needs a nonempty dataset");
  {
    bool single = true;
    for (const auto& r : ds.records) single = single && r.label == ds.records.front().label;
    if (single) detail::warn("fit_ts: all labels belong to one class; temperature is poorly determined");
  }
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(kMinTemperature), b = std::log(kMaxTemperature);
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = temperature_nll(ds, std::exp(c)), fd = temperature_nll(ds, std::exp(d));
  while (b - a > 1e-4) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = temperature_nll(ds, std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = temperature_nll(ds, std::exp(d));
    }
  }
  return {std::exp(0.5 * (a + b))};
}

// ---------------------------------------------------------------------------
// Ensemble temperature scaling

// Mixture w[0] * softmax(z/T) + w[1] * softmax(z) + w[2] * uniform.
struct EtsModel {
  double temperature = 1.0;
  std::array<double, 3> weights{1.0, 0.0, 0.0};
};

inline ProbVector apply_ets(std::span<const double> logits, const EtsModel& m) {
  ProbVector scaled = apply_temperature(logits, m.temperature);
  const ProbVector plain = softmax(logits);
  const double u = 1.0 / static_cast<double>(logits.size());
  for (std::size_t c = 0; c < scaled.size(); ++c)
    scaled[c] = m.weights[0] * scaled[c] + m.weights[1] * plain[c] + m.weights[2] * u;
  return scaled;
}

namespace detail {

// Simplex points are held in integer units of 1/1000.
struct SimplexPoint {
  int a, b, c;
  [[nodiscard]] std::array<double, 3> weights() const {
    const double s = static_cast<double>(a + b + c);
    return {a / s, b / s, c / s};
  }
};

template <class Loss>
SimplexPoint simplex_search(Loss&& loss) {
  SimplexPoint best{1000, 0, 0};
  double best_loss = loss(best.weights());
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; i + j <= 100; ++j) {
      const SimplexPoint p{10 * i, 10 * j, 1000 - 10 * i - 10 * j};
      const double l = loss(p.weights());
      if (l < best_loss) {
        best_loss = l;
        best = p;
      }
    }
  // Coordinate refinement: move 0.001 of mass between any two weights while
  // that strictly improves the loss.
  for (int iter = 0; iter < 100000; ++iter) {
    bool moved = false;
    for (int from = 0; from < 3; ++from)
      for (int to = 0; to < 3; ++to) {
        if (from == to) continue;
        SimplexPoint p = best;
        int* units[3] = {&p.a, &p.b, &p.c};
        if (*units[from] == 0) continue;
        --*units[from];
        ++*units[to];
        const double l = loss(p.weights());
        if (l < best_loss) {
          best_loss = l;
          best = p;
          moved = true;
        }
      }
    if (!moved) break;
  }
  return best;
}

}  // namespace detail

// T by NLL (as fit_ts), then the mixture weights by simplex grid search at
// resolution 0.01 followed by coordinate refinement at 0.001. The mse loss
// compares full probability vectors to one-hot labels; the ece loss is the
// squared-gap ECE over `num_bins` equal-width bins of the top-label confidence.
inline EtsModel fit_ets(const Dataset& ds, LossKind loss = LossKind::mse, std::size_t num_bins = 10) {
  if (ds.empty()) throw InvalidArgument("fit_ets needs a nonempty dataset");
  EtsModel model;
  model.temperature = fit_ts(ds).temperature;
  const double u = 1.0 / static_cast<double>(ds.num_classes);
  const auto n = static_cast<double>(ds.size());

  detail::SimplexPoint best;
  if (loss == LossKind::mse) {
    // The mse is quadratic in w: accumulate its Gram matrix once.
    std::array<std::array<double, 3>, 3> gram{};
    std::array<double, 3> lin{};
    for (const auto& r : ds.records) {
      const ProbVector a = softmax(r.logits, model.temperature);
      const ProbVector b = softmax(r.logits);
      for (std::size_t c = 0; c < a.size(); ++c) {
        const std::array<double, 3> v{a[c], b[c], u};
        const double y = c == r.label ? 1.0 : 0.0;
        for (int i = 0; i < 3; ++i) {
          lin[i] += v[i] * y;
          for (int j = 0; j < 3; ++j) gram[i][j] += v[i] * v[j];
        }
      }
    }
    best = detail::simplex_search([&](const std::array<double, 3>& w) {
      double q = n;
      for (int i = 0; i < 3; ++i) {
        q -= 2.0 * lin[i] * w[i];
        for (int j = 0; j < 3; ++j) q += w[i] * gram[i][j] * w[j];
      }
      return q / n;
    });
  } else {
    // Every component preserves the argmax, so the top-label confidence is
    // linear in w.
    std::vector<std::array<double, 3>> tops;
    std::vector<PredictionRecord> preds(ds.size());
    tops.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& r = ds.records[i];
      const std::size_t top = argmax(r.logits);
      tops.push_back({softmax(r.logits, model.temperature)[top], softmax(r.logits)[top], u});
      preds[i].predicted_class = top;
      preds[i].correct = top == r.label;
    }
    best = detail::simplex_search([&](const std::array<double, 3>& w) {
      for (std::size_t i = 0; i < preds.size(); ++i)
        preds[i].confidence = std::clamp(w[0] * tops[i][0] + w[1] * tops[i][1] + w[2] * tops[i][2], 0.0, 1.0);
      return ece(preds, num_bins, 2).value;
    });
  }
  model.weights = best.weights();
  return model;
}

// ---------------------------------------------------------------------------
// Parameterized temperature scaling

struct PtsTrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 1000;
  std::size_t steps = 100000;
  std::size_t num_bins = 10;
  std::vector<std::size_t> hidden{5, 5};
  LossKind loss = LossKind::ece;
  std::uint64_t seed = 17;
  std::size_t topk = 10;

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || steps == 0 || num_bins == 0 || topk == 0)
      throw InvalidArgument("PTS config values must be positive");
    for (auto h : hidden)
      if (h == 0) throw InvalidArgument("PTS hidden widths must be positive");
  }
};

inline constexpr double kPtsMinTemperature = 1e-2;

struct PtsModel {
  nn::MlpParams mlp;
  std::size_t topk = 10;
  std::size_t num_classes = 0;
  double t_min = kPtsMinTemperature;
  PtsTrainConfig config;
};

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline std::vector<std::size_t> pts_widths(std::size_t topk, std::span<const std::size_t> hidden) {
  std::vector<std::size_t> w{topk};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(1);
  return w;
}

}  // namespace detail

// Untrained model with seeded weights; widths are [topk, hidden..., 1].
inline PtsModel make_pts_model(std::size_t num_classes, const PtsTrainConfig& config) {
  config.validate();
  PtsModel m;
  m.topk = config.topk;
  m.num_classes = num_classes;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  m.mlp = nn::init_params(detail::pts_widths(config.topk, config.hidden), rng);
  return m;
}

// A model whose network ignores its input and always yields `temperature`.
inline PtsModel make_pinned_pts_model(std::size_t num_classes, double temperature, PtsTrainConfig config = {}) {
  if (!(temperature > kPtsMinTemperature)) throw InvalidArgument("pinned temperature must exceed t_min");
  PtsModel m;
  m.topk = config.topk;
  m.num_classes = num_classes;
  m.config = config;
  m.mlp = nn::MlpParams(detail::pts_widths(config.topk, config.hidden));
  m.mlp.bias(m.mlp.num_layers() - 1, 0) = detail::softplus_inverse(temperature - m.t_min);
  return m;
}

inline double pts_temperature(std::span<const double> logits, const PtsModel& m) {
  if (logits.size() != m.num_classes) throw InvalidArgument("logit count does not match PTS model");
  const auto input = sorted_topk(logits, m.topk);
  nn::ForwardCache cache;
  return m.t_min + detail::softplus(nn::forward_into(m.mlp, input, cache));
}

inline ProbVector apply_pts(std::span<const double> logits, const PtsModel& m) {
  return softmax(logits, pts_temperature(logits, m));
}

namespace detail {

// Per-dataset precomputation for PTS training: the network inputs and the
// fixed top-label correctness of every record.
// Holds a pointer to the dataset, which must outlive the table.
struct PtsTable {
  const Dataset* ds = nullptr;
  std::size_t k = 0;
  std::vector<double> inputs;
  std::vector<std::size_t> top;
  std::vector<double> correct;

  PtsTable(const Dataset& d, std::size_t topk) : ds(&d), k(topk) {
    inputs.reserve(d.size() * k);
    for (const auto& r : d.records) {
      const auto x = sorted_topk(r.logits, k);
      inputs.insert(inputs.end(), x.begin(), x.end());
      const std::size_t t = argmax(r.logits);
      top.push_back(t);
      correct.push_back(t == r.label ? 1.0 : 0.0);
    }
  }
  [[nodiscard]] std::span<const double> input(std::size_t i) const { return {inputs.data() + i * k, k}; }
};

// Bin memberships and bin accuracies of one minibatch, held fixed while
// differentiating the loss.
struct FrozenBins {
  std::vector<std::size_t> bin_of;
  std::vector<double> accuracy;
  std::vector<double> count;
};

struct PtsWorkspace {
  std::vector<nn::ForwardCache> caches;
  std::vector<double> q, dq_dout;
};

// L_ECE = sum_m (|B_m| / n) (acc_m - mean Q over B_m)^2 or the top-label mse,
// over the records `batch`. Bins come from `frozen` when given, otherwise from
// the current confidences (and are then written to `bins_out`). Gradient
// flows only through the confidences Q.
inline double pts_objective(const nn::MlpParams& params, double t_min, const PtsTable& table,
                            std::span<const std::size_t> batch, LossKind loss, std::size_t num_bins,
                            const FrozenBins* frozen, nn::MlpParams* grad, FrozenBins* bins_out,
                            PtsWorkspace& ws) {
  const std::size_t n = batch.size();
  ws.caches.resize(n);
  ws.q.resize(n);
  ws.dq_dout.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t i = batch[b];
    const double out = nn::forward_into(params, table.input(i), ws.caches[b]);
    const double t = t_min + softplus(out);
    const auto& z = table.ds->records[i].logits;
    const double zmax = z[table.top[i]];
    double denom = 0.0, spread = 0.0;
    for (double zc : z) {
      const double e = std::exp((zc - zmax) / t);
      denom += e;
      spread += e * (zmax - zc);
    }
    const double q = 1.0 / denom;
    ws.q[b] = q;
    // dQ/dT = -(Q / T^2) * sum_c q_c (z_max - z_c), with q_c = e_c * Q.
    const double dq_dt = -(q / (t * t)) * spread * q;
    ws.dq_dout[b] = dq_dt * sigmoid(out);
  }

  const auto nb = static_cast<double>(n);
  double value = 0.0;
  std::vector<double> dl_dq(n, 0.0);
  if (loss == LossKind::mse) {
    for (std::size_t b = 0; b < n; ++b) {
      const double r = ws.q[b] - table.correct[batch[b]];
      value += r * r;
      dl_dq[b] = 2.0 * r / nb;
    }
    value /= nb;
  } else {
    FrozenBins local;
    const FrozenBins* bins = frozen;
    if (!bins) {
      local.bin_of.resize(n);
      local.accuracy.assign(num_bins, 0.0);
      local.count.assign(num_bins, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t m = equal_width_bin(ws.q[b], num_bins) - 1;
        local.bin_of[b] = m;
        local.count[m] += 1.0;
        local.accuracy[m] += table.correct[batch[b]];
      }
      for (std::size_t m = 0; m < num_bins; ++m)
        if (local.count[m] > 0) local.accuracy[m] /= local.count[m];
      bins = &local;
    }
    std::vector<double> qsum(num_bins, 0.0);
    for (std::size_t b = 0; b < n; ++b) qsum[bins->bin_of[b]] += ws.q[b];
    std::vector<double> gap(num_bins, 0.0);
    for (std::size_t m = 0; m < num_bins; ++m) {
      if (bins->count[m] == 0) continue;
      gap[m] = bins->accuracy[m] - qsum[m] / bins->count[m];
      value += bins->count[m] / nb * gap[m] * gap[m];
    }
    // d/dQ_b of (|B|/n)(acc - sum_B Q / |B|)^2 = -2 (acc - meanQ) / n.
    for (std::size_t b = 0; b < n; ++b) dl_dq[b] = -2.0 * gap[bins->bin_of[b]] / nb;
    if (bins_out && !frozen) *bins_out = std::move(local);
  }

  if (grad) {
    for (std::size_t b = 0; b < n; ++b) {
      const double up = dl_dq[b] * ws.dq_dout[b];
      if (up != 0.0) nn::backward_into(params, ws.caches[b], up, *grad);
    }
  }
  return value;
}

}  // namespace detail

// Training loss of `model` over the whole of `ds` (bins from current confidences).
inline double pts_loss(const PtsModel& model, const Dataset& ds, LossKind loss, std::size_t num_bins) {
  detail::PtsTable table(ds, model.topk);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  detail::PtsWorkspace ws;
  return detail::pts_objective(model.mlp, model.t_min, table, all, loss, num_bins, nullptr, nullptr, nullptr, ws);
}

// The loss over `batch` as a function of the network parameters, with bin
// memberships and bin accuracies frozen at the model's current parameters.
// Used for finite-difference checks of the training gradient.
inline nn::LossFn pts_frozen_loss(const PtsModel& model, const Dataset& batch, LossKind loss, std::size_t num_bins) {
  // The table points into its dataset, so the closure keeps its own copy.
  auto data = std::make_shared<const Dataset>(batch);
  auto table = std::make_shared<detail::PtsTable>(*data, model.topk);
  auto idx = std::make_shared<std::vector<std::size_t>>(batch.size());
  std::iota(idx->begin(), idx->end(), std::size_t{0});
  auto bins = std::make_shared<detail::FrozenBins>();
  detail::PtsWorkspace ws;
  detail::pts_objective(model.mlp, model.t_min, *table, *idx, loss, num_bins, nullptr, nullptr, bins.get(), ws);
  const double t_min = model.t_min;
  return [=, keep = data](const nn::MlpParams& p, nn::MlpParams* grad) {
    (void)keep;
    detail::PtsWorkspace w;
    return detail::pts_objective(p, t_min, *table, *idx, loss, num_bins, loss == LossKind::ece ? bins.get() : nullptr,
                                 grad, nullptr, w);
  };
}

// Smoothness predicate for grad_check on pts_frozen_loss: the two parameter
// vectors give every record of `batch` the same hidden ReLU states.
inline nn::SmoothFn pts_relu_smooth(const PtsModel& model, const Dataset& batch) {
  auto inputs = std::make_shared<std::vector<std::vector<double>>>();
  for (const auto& r : batch.records) inputs->push_back(sorted_topk(r.logits, model.topk));
  return [inputs](const nn::MlpParams& a, const nn::MlpParams& b) {
    return nn::relu_pattern(a, *inputs) == nn::relu_pattern(b, *inputs);
  };
}

// Continues training `model` in place for config.steps Adam steps on
// minibatches drawn by epoch-wise seeded shuffles (i.i.d. with replacement
// when the batch exceeds the dataset).
inline void train_pts(PtsModel& model, const Dataset& ds) {
  const auto& cfg = model.config;
  cfg.validate();
  if (ds.empty()) throw InvalidArgument("fit_pts needs a nonempty dataset");
  if (ds.num_classes != model.num_classes) throw InvalidArgument("dataset class count does not match PTS model");
  detail::PtsTable table(ds, model.topk);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  nn::AdamState adam(model.mlp.size());
  nn::MlpParams grad = model.mlp.zeros_like();
  detail::PtsWorkspace ws;

  const std::size_t n = ds.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t cursor = n;
  std::vector<std::size_t> batch(cfg.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.batch_size > n) {
      for (auto& b : batch) b = pick(rng);
    } else {
      for (auto& b : batch) {
        if (cursor == n) {
          std::shuffle(perm.begin(), perm.end(), rng);
          cursor = 0;
        }
        b = perm[cursor++];
      }
    }
    std::fill(grad.values.begin(), grad.values.end(), 0.0);
    const double value = detail::pts_objective(model.mlp, model.t_min, table, batch, cfg.loss, cfg.num_bins, nullptr,
                                               &grad, nullptr, ws);
    if (!std::isfinite(value) || !grad.all_finite())
      throw NumericalError("PTS training produced a non-finite loss at step " + std::to_string(step));
    nn::adam_step(model.mlp, grad, adam, cfg.learning_rate);
  }
}

inline PtsModel fit_pts(const Dataset& ds, const PtsTrainConfig& config = {}) {
  if (ds.empty()) throw InvalidArgument("fit_pts needs a nonempty dataset");
  PtsModel model = make_pts_model(ds.num_classes, config);
  train_pts(model, ds);
  return model;
}

}  // namespace calibkit
