#pragma once

// A minimal fully-connected network in double precision: ReLU hidden layers,
// linear scalar output, exact reverse-mode gradients, Adam, and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "calibkit/core.hpp"

namespace calibkit::nn {

// Parameters stored flat. Layer l occupies a weight block of
// widths[l+1] x widths[l] (row-major, one row per output unit) followed by
// widths[l+1] biases. The same type carries gradients.
struct MlpParams {
  std::vector<std::size_t> widths;
  std::vector<double> values;

  MlpParams() = default;

  explicit MlpParams(std::vector<std::size_t> layer_widths) : widths(std::move(layer_widths)) {
    if (widths.size() < 2) throw InvalidArgument("network needs an input and an output layer");
    if (widths.back() != 1) throw InvalidArgument("network output must be scalar");
    for (auto w : widths)
      if (w == 0) throw InvalidArgument("layer widths must be positive");
    values.assign(count_params(widths), 0.0);
  }

  static std::size_t count_params(std::span<const std::size_t> widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
    return n;
  }

  [[nodiscard]] std::size_t num_layers() const noexcept { return widths.size() - 1; }
  [[nodiscard]] std::size_t input_width() const noexcept { return widths.front(); }
  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }

  [[nodiscard]] std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += widths[l + 1] * widths[l] + widths[l + 1];
    return off;
  }
  [[nodiscard]] std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + widths[layer + 1] * widths[layer];
  }

  double& weight(std::size_t layer, std::size_t out, std::size_t in) {
    return values[weight_offset(layer) + out * widths[layer] + in];
  }
  [[nodiscard]] double weight(std::size_t layer, std::size_t out, std::size_t in) const {
    return values[weight_offset(layer) + out * widths[layer] + in];
  }
  double& bias(std::size_t layer, std::size_t out) { return values[bias_offset(layer) + out]; }
  [[nodiscard]] double bias(std::size_t layer, std::size_t out) const { return values[bias_offset(layer) + out]; }

  [[nodiscard]] MlpParams zeros_like() const {
    MlpParams g;
    g.widths = widths;
    g.values.assign(values.size(), 0.0);
    return g;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline MlpParams init_params(std::vector<std::size_t> widths, std::mt19937_64& rng) {
  MlpParams p(std::move(widths));
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(p.widths[l] + p.widths[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t off = p.weight_offset(l);
    for (std::size_t i = 0; i < p.widths[l + 1] * p.widths[l]; ++i) p.values[off + i] = dist(rng);
  }
  return p;
}

// Activations of every layer from one forward pass; reusable across calls.
struct ForwardCache {
  std::vector<std::vector<double>> activations;  // [0] is the input, back() the output

  void prepare(const MlpParams& p) {
    activations.resize(p.widths.size());
    for (std::size_t l = 0; l < p.widths.size(); ++l) activations[l].resize(p.widths[l]);
  }
};

inline double forward_into(const MlpParams& p, std::span<const double> input, ForwardCache& cache) {
  if (input.size() != p.input_width()) throw InvalidArgument("input width does not match network");
  cache.prepare(p);
  std::copy(input.begin(), input.end(), cache.activations[0].begin());
  const std::size_t last = p.num_layers() - 1;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const auto& in = cache.activations[l];
    auto& out = cache.activations[l + 1];
    const double* w = p.values.data() + p.weight_offset(l);
    const double* b = p.values.data() + p.bias_offset(l);
    const std::size_t n_in = p.widths[l];
    for (std::size_t o = 0; o < p.widths[l + 1]; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < n_in; ++i) s += w[o * n_in + i] * in[i];
      out[o] = (l == last || s > 0.0) ? s : 0.0;
    }
  }
  return cache.activations.back()[0];
}

inline std::pair<double, ForwardCache> forward(const MlpParams& p, std::span<const double> input) {
  ForwardCache cache;
  const double y = forward_into(p, input, cache);
  return {y, std::move(cache)};
}

// Adds upstream * d(output)/d(params) into `grads`. ReLU units with zero
// output pass no gradient (subgradient 0 at the kink). Writes d(output)/d(input)
// scaled by upstream into `input_grad` when given.
inline void backward_into(const MlpParams& p, const ForwardCache& cache, double upstream, MlpParams& grads,
                          std::vector<double>* input_grad = nullptr) {
  const std::size_t layers = p.num_layers();
  thread_local std::vector<double> delta, next;
  delta.assign(1, upstream);
  for (std::size_t l = layers; l-- > 0;) {
    const auto& in = cache.activations[l];
    const std::size_t n_in = p.widths[l];
    const std::size_t n_out = p.widths[l + 1];
    const double* w = p.values.data() + p.weight_offset(l);
    double* gw = grads.values.data() + p.weight_offset(l);
    double* gb = grads.values.data() + p.bias_offset(l);
    next.assign(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      for (std::size_t i = 0; i < n_in; ++i) {
        gw[o * n_in + i] += d * in[i];
        next[i] += d * w[o * n_in + i];
      }
    }
    // Gate by the ReLU of layer l (the input layer has no activation).
    if (l > 0)
      for (std::size_t i = 0; i < n_in; ++i)
        if (!(in[i] > 0.0)) next[i] = 0.0;
    delta.swap(next);
  }
  if (input_grad) *input_grad = delta;
}

struct Gradient {
  MlpParams params;
  std::vector<double> input;
};

inline Gradient backward(const MlpParams& p, const ForwardCache& cache, double upstream) {
  Gradient g{p.zeros_like(), {}};
  backward_into(p, cache, upstream, g.params, &g.input);
  return g;
}

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update in place.
inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, double lr) {
  if (grads.values.size() != params.values.size() || state.m.size() != params.values.size())
    throw InvalidArgument("adam: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double g = grads.values[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params.values[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

// Loss over the parameters; fills `grad` (same shape, zero-initialised by
// the caller) with the analytic gradient when it is non-null.
using LossFn = std::function<double(const MlpParams&, MlpParams* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose probe straddled a kink
  [[nodiscard]] bool passed() const noexcept { return checked > 0 && max_rel_error <= tolerance; }
};

// True when the loss is smooth on the segment between two parameter vectors.
using SmoothFn = std::function<bool(const MlpParams&, const MlpParams&)>;

// Gradients smaller than this are compared absolutely: at h = 1e-5 the
// central difference carries round-off near 1e-11 times the loss.
inline constexpr double kGradCheckFloor = 1e-7;

// Compares the analytic gradient with central differences on every parameter.
// Relative error is |a - n| / max(|a|, |n|, kGradCheckFloor). When `smooth`
// is given, a coordinate whose +-h probes are not joined by a smooth piece
// (a ReLU changing state, say) is skipped and counted, since the difference
// quotient there does not estimate the derivative.
inline GradCheckReport grad_check(const MlpParams& params, const LossFn& loss, double tolerance, double h = 1e-5,
                                  const SmoothFn& smooth = {}) {
  MlpParams analytic = params.zeros_like();
  loss(params, &analytic);
  GradCheckReport rep;
  rep.tolerance = tolerance;
  MlpParams up_probe = params, down_probe = params;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    up_probe.values[i] = params.values[i] + h;
    down_probe.values[i] = params.values[i] - h;
    const bool usable = !smooth || smooth(up_probe, down_probe);
    const double up = usable ? loss(up_probe, nullptr) : 0.0;
    const double down = usable ? loss(down_probe, nullptr) : 0.0;
    up_probe.values[i] = down_probe.values[i] = params.values[i];
    if (!usable) {
      ++rep.skipped;
      continue;
    }
    ++rep.checked;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.values[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  return rep;
}

// ReLU on/off state of every hidden unit for every input, flattened.
inline std::vector<bool> relu_pattern(const MlpParams& p, std::span<const std::vector<double>> inputs) {
  std::vector<bool> out;
  ForwardCache cache;
  for (const auto& x : inputs) {
    forward_into(p, x, cache);
    for (std::size_t l = 1; l + 1 < cache.activations.size(); ++l)
      for (double a : cache.activations[l]) out.push_back(a > 0.0);
  }
  return out;
}

}  // namespace calibkit::nn
