#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "calibkit/tinynn.hpp"

using namespace calibkit;
using namespace calibkit::nn;

namespace {

// Independent forward pass using nested weight matrices.
double naive_forward(const MlpParams& p, std::vector<double> x) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < p.widths.size(); ++l) {
    const std::size_t in = p.widths[l], out = p.widths[l + 1];
    std::vector<std::vector<double>> W(out, std::vector<double>(in));
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) W[o][i] = p.values[off++];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = p.values[off + o];
      for (std::size_t i = 0; i < in; ++i) s += W[o][i] * x[i];
      const bool last = l + 2 == p.widths.size();
      y[o] = last ? s : std::max(0.0, s);
    }
    off += out;
    x = y;
  }
  return x[0];
}

std::vector<double> random_input(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

// Loss = 0.5 * sum_j (f(x_j) - y_j)^2 over a fixed batch.
LossFn regression_loss(std::vector<std::vector<double>> xs, std::vector<double> ys) {
  return [xs, ys](const MlpParams& p, MlpParams* grad) {
    ForwardCache cache;
    double loss = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double r = forward_into(p, xs[j], cache) - ys[j];
      loss += 0.5 * r * r;
      if (grad) backward_into(p, cache, r, *grad, nullptr);
    }
    return loss;
  };
}

}  // namespace

TEST(Mlp, ZeroNetworkOutputsZero) {
  const MlpParams p({4, 5, 5, 1});
  EXPECT_EQ(p.size(), MlpParams::count_params(p.widths));
  EXPECT_EQ(p.size(), 4u * 5 + 5 + 5 * 5 + 5 + 5 + 1);
  EXPECT_EQ(forward(p, std::vector<double>{1, 2, 3, 4}).first, 0.0);
}

TEST(Mlp, IdentityNetwork) {
  MlpParams p({1, 1, 1});
  p.weight(0, 0, 0) = 1.0;
  p.weight(1, 0, 0) = 1.0;
  EXPECT_EQ(forward(p, std::vector<double>{3.0}).first, 3.0);
}

TEST(Mlp, RejectsBadShapes) {
  EXPECT_THROW(MlpParams({3}), InvalidArgument);
  EXPECT_THROW(MlpParams({3, 2}), InvalidArgument);
  EXPECT_THROW(MlpParams({3, 0, 1}), InvalidArgument);
  const MlpParams p({3, 2, 1});
  EXPECT_THROW(forward(p, std::vector<double>{1.0}), InvalidArgument);
}

TEST(Mlp, MatchesNaiveImplementation) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const auto p = init_params({6, 4, 3, 1}, rng);
    const auto x = random_input(rng, 6);
    ASSERT_NEAR(forward(p, x).first, naive_forward(p, x), 1e-12);
  }
}

TEST(Mlp, InitialisationIsBoundedWithZeroBiases) {
  std::mt19937_64 rng(22);
  const auto p = init_params({10, 5, 5, 1}, rng);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(p.widths[l] + p.widths[l + 1]));
    for (std::size_t o = 0; o < p.widths[l + 1]; ++o) {
      EXPECT_EQ(p.bias(l, o), 0.0);
      for (std::size_t i = 0; i < p.widths[l]; ++i) EXPECT_LE(std::abs(p.weight(l, o, i)), bound);
    }
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  std::mt19937_64 rng(23);
  const auto p = init_params({5, 4, 1}, rng);
  const auto [out, cache] = forward(p, random_input(rng, 5));
  const auto g = backward(p, cache, 0.0);
  for (double v : g.params.values) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearWeightGradientIsInput) {
  MlpParams p({1, 1});
  p.weight(0, 0, 0) = 0.7;
  const auto [out, cache] = forward(p, std::vector<double>{2.5});
  const auto g = backward(p, cache, 1.0);
  EXPECT_EQ(g.params.weight(0, 0, 0), 2.5);
  EXPECT_EQ(g.params.bias(0, 0), 1.0);
  EXPECT_EQ(g.input[0], 0.7);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<std::size_t> width(1, 6);
  for (int t = 0; t < 100; ++t) {
    const std::vector<std::size_t> widths{width(rng), width(rng), width(rng), 1};
    auto p = init_params(widths, rng);
    for (std::size_t l = 0; l < p.num_layers(); ++l)
      for (std::size_t o = 0; o < p.widths[l + 1]; ++o) p.bias(l, o) = 0.1 * random_input(rng, 1)[0];
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (int j = 0; j < 4; ++j) {
      xs.push_back(random_input(rng, widths[0]));
      ys.push_back(random_input(rng, 1)[0]);
    }
    const SmoothFn smooth = [&](const MlpParams& a, const MlpParams& b) {
      return relu_pattern(a, xs) == relu_pattern(b, xs);
    };
    const auto rep = grad_check(p, regression_loss(xs, ys), 1e-4, 1e-5, smooth);
    ASSERT_TRUE(rep.passed()) << "trial " << t << " rel error " << rep.max_rel_error;
  }
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(25);
  const auto p = init_params({4, 6, 1}, rng);
  const auto x = random_input(rng, 4);
  const auto [out, cache] = forward(p, x);
  const auto g = backward(p, cache, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto up = x, down = x;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    EXPECT_NEAR(g.input[i], (forward(p, up).first - forward(p, down).first) / 2e-6, 1e-6);
  }
}

TEST(Backward, PositiveHomogeneityOfReluNet) {
  // A bias-free ReLU net is positively homogeneous: f(a x) = a f(x), so the
  // input gradient dotted with x equals f(x).
  std::mt19937_64 rng(26);
  auto p = init_params({5, 7, 7, 1}, rng);
  for (std::size_t l = 0; l < p.num_layers(); ++l)
    for (std::size_t o = 0; o < p.widths[l + 1]; ++o) p.values[p.bias_offset(l) + o] = 0.0;
  const auto x = random_input(rng, 5);
  auto scaled = x;
  for (auto& v : scaled) v *= 3.0;
  const auto [fx, cache] = forward(p, x);
  EXPECT_NEAR(forward(p, scaled).first, 3.0 * fx, 1e-12);
  const auto g = backward(p, cache, 1.0);
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += g.input[i] * x[i];
  EXPECT_NEAR(dot, fx, 1e-12);
}

TEST(GradCheck, LinearQuadraticIsNearlyExact) {
  std::mt19937_64 rng(27);
  const auto p = init_params({3, 1}, rng);
  std::vector<std::vector<double>> xs{random_input(rng, 3), random_input(rng, 3)};
  const auto rep = grad_check(p, regression_loss(xs, {0.5, -0.2}), 1e-8);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_error;
}

TEST(GradCheck, DetectsBrokenGradient) {
  std::mt19937_64 rng(28);
  const auto p = init_params({3, 4, 1}, rng);
  std::vector<std::vector<double>> xs{random_input(rng, 3), random_input(rng, 3)};
  const auto good = regression_loss(xs, {1.0, 0.0});
  const LossFn broken = [good](const MlpParams& q, MlpParams* grad) {
    const double v = good(q, grad);
    if (grad) grad->values[2] *= 1.01;
    return v;
  };
  EXPECT_TRUE(grad_check(p, good, 1e-4).passed());
  EXPECT_FALSE(grad_check(p, broken, 1e-4).passed());
}

TEST(GradCheck, SkipsProbesAcrossKinks) {
  // One ReLU unit whose pre-activation is exactly zero: the difference
  // quotient on its bias straddles the kink.
  MlpParams p({1, 1, 1});
  p.weight(0, 0, 0) = 1.0;
  p.weight(1, 0, 0) = 1.0;
  const std::vector<std::vector<double>> xs{{0.0}};
  const auto loss = regression_loss(xs, {1.0});
  EXPECT_FALSE(grad_check(p, loss, 1e-4).passed());
  const SmoothFn smooth = [&](const MlpParams& a, const MlpParams& b) {
    return relu_pattern(a, xs) == relu_pattern(b, xs);
  };
  const auto rep = grad_check(p, loss, 1e-4, 1e-5, smooth);
  EXPECT_TRUE(rep.passed());
  EXPECT_GT(rep.skipped, 0u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(29);
  auto p = init_params({3, 2, 1}, rng);
  const auto before = p.values;
  AdamState s(p.size());
  for (int i = 0; i < 10; ++i) adam_step(p, p.zeros_like(), s, 1e-2);
  EXPECT_EQ(p.values, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  MlpParams p({1, 1});
  MlpParams g = p.zeros_like();
  g.values = {0.3, -2.0};
  AdamState s(p.size());
  adam_step(p, g, s, 1e-3);
  // Bias-corrected m/sqrt(v) is g/|g| on the first step, up to epsilon.
  EXPECT_NEAR(p.values[0], -1e-3, 1e-10);
  EXPECT_NEAR(p.values[1], 1e-3, 1e-10);
}

TEST(Adam, ConstantGradientMovesOppositeSign) {
  MlpParams p({1, 1});
  MlpParams g = p.zeros_like();
  g.values = {0.5, -0.5};
  AdamState s(p.size());
  for (int i = 0; i < 100; ++i) adam_step(p, g, s, 1e-2);
  EXPECT_NEAR(p.values[0], -1.0, 1e-6);
  EXPECT_NEAR(p.values[1], 1.0, 1e-6);
  EXPECT_THROW(adam_step(p, MlpParams({2, 1}), s, 1e-2), InvalidArgument);
}
