// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "calibkit/binning.hpp"
#include "calibkit/calibrator.hpp"
#include "calibkit/experiments.hpp"
#include "calibkit/metrics.hpp"
#include "calibkit/synth.hpp"

using namespace calibkit;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `check`, turning an escaped exception into a failure line.
void criterion(int id, const std::string& title, const std::function<void()>& check) {
  try {
    check();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

double test_ece(const Calibrator& c, const Dataset& test) { return ece(c.predict(test), 10, 1).value; }

std::size_t changed_predictions(const Calibrator& c, const Dataset& ds) {
  std::size_t n = 0;
  for (const auto& r : ds.records) n += argmax(c.apply(r.logits)) != argmax(r.logits);
  return n;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Least-squares monotone fit by exhaustive search over block partitions.
std::vector<double> brute_isotonic(const std::vector<double>& y, const std::vector<double>& w) {
  const std::size_t n = y.size();
  std::vector<double> best;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    std::vector<double> fit(n);
    double prev = -std::numeric_limits<double>::infinity(), err = 0.0;
    bool monotone = true;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n && monotone; ++i) {
      if (i + 1 != n && !((cuts >> i) & 1u)) continue;
      double sw = 0, sy = 0;
      for (std::size_t j = start; j <= i; ++j) sw += w[j], sy += w[j] * y[j];
      const double mean = sy / sw;
      monotone = mean >= prev - 1e-12;
      prev = mean;
      for (std::size_t j = start; j <= i; ++j) fit[j] = mean, err += w[j] * (y[j] - mean) * (y[j] - mean);
      start = i + 1;
    }
    if (monotone && err < best_err - 1e-15) best_err = err, best = fit;
  }
  return best;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  const std::uint64_t seed = 17;
  const auto hetero = experiments::oracle(experiments::heteroscedastic_config(seed), 50000, 50000);

  criterion(1, "oracle temperature recovery", [] {
    synth::SynthConfig c;
    c.num_classes = 10;
    c.num_samples = 20000;
    c.scale = 2.5;
    c.seed = 17;
    const auto data = synth::generate(c);
    const auto t0 = std::chrono::steady_clock::now();
    const double t = fit_ts(data.dataset).temperature;
    const double secs = seconds_since(t0);
    report(1, "oracle temperature recovery", t >= 2.3 && t <= 2.7 && secs < 10.0,
           fmt("T=%.4f (need [2.3, 2.7]), fit %.2fs (need < 10s)", t, secs));
  });

  Calibrator pts_full;
  criterion(2, "PTS separation on heteroscedastic oracle", [&] {
    FitOptions opt;
    opt.pts.seed = seed;  // S = 100000 steps, the training default
    const auto t0 = std::chrono::steady_clock::now();
    pts_full = fit(Method::pts, hetero.val, opt);
    const double secs = seconds_since(t0);
    const double e_pts = test_ece(pts_full, hetero.test);
    const double e_ts = test_ece(fit(Method::ts, hetero.val, opt), hetero.test);
    const bool ok = e_pts <= 0.5 * e_ts && e_ts >= 0.02 && e_pts <= 0.015 && secs < 900.0;
    report(2, "PTS separation on heteroscedastic oracle", ok,
           fmt("ECE PTS=%.3fpp TS=%.3fpp (need PTS <= 0.5*TS, TS >= 2pp, PTS <= 1.5pp); S=%zu steps in %.0fs (need < 900s)",
               100 * e_pts, 100 * e_ts, opt.pts.steps, secs));
  });

  criterion(3, "exact accuracy preservation", [&] {
    const auto global = experiments::oracle(experiments::global_config(seed), 50000, 50000);
    FitOptions opt;
    opt.pts.steps = 20000;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 4.0);
    std::vector<LogitRecord> random_recs;
    for (int i = 0; i < 100000; ++i) {
      LogitRecord r;
      for (int c = 0; c < 10; ++c) r.logits.push_back(g(rng));
      random_recs.push_back(std::move(r));
    }
    const auto random_logits = Dataset::make(std::move(random_recs));
    std::string detail;
    bool ok = true;
    for (Method m : {Method::ts, Method::ets, Method::pts, Method::irm, Method::pbmc}) {
      std::size_t changed = 0;
      for (const auto* data : {&hetero, &global}) {
        const Calibrator c = m == Method::pts && data == &hetero && !pts_full.model.valueless_by_exception() &&
                                     pts_full.num_classes == 10
                                 ? pts_full
                                 : fit(m, data->val, opt);
        changed += changed_predictions(c, data->test) + changed_predictions(c, random_logits);
      }
      ok = ok && changed == 0;
      detail += fmt("%s=%zu ", to_string(m).c_str(), changed);
    }
    // IROvA witness: a 3-class instance where renormalisation reorders classes.
    const auto witness_fit = Dataset::make({{1, {2.0, 1.9, 0.0}}, {1, {1.0, 0.0, 0.0}}, {0, {0.0, 1.0, 0.0}},
                                            {2, {0.0, 0.0, 1.0}}, {1, {0.5, 0.4, 0.0}}});
    const auto irova = fit_irova(witness_fit);
    const std::vector<double> probe{2.0, 1.9, 0.0};
    const auto out = apply_irova(probe, irova);
    const bool witness = out[argmax(out)] > out[argmax(probe)];
    ok = ok && witness;
    report(3, "exact accuracy preservation", ok,
           detail + fmt("changed predictions over 2x50000 test + 2x100000 random logits (need 0); IROvA witness %s",
                        witness ? "found" : "missing"));
  });

  criterion(4, "capacity sweep", [&] {
    experiments::Options opt;
    opt.seed = seed;
    opt.val = hetero.val;
    opt.test = hetero.test;
    const auto table = experiments::capacity(opt);
    const double e_ts = table.lookup({{"method", std::string("ts")}}, "ece");
    std::vector<double> e;
    std::string detail = fmt("TS=%.3fpp ", 100 * e_ts);
    for (std::size_t w : opt.widths) {
      e.push_back(table.lookup({{"method", std::string("pts")}, {"hidden_width", w}}, "ece"));
      detail += fmt("w%zu=%.3fpp ", w, 100 * e.back());
    }
    bool nonincreasing = true, ts_worst = true;
    double best = e.front();
    for (std::size_t i = 1; i < e.size(); ++i) {
      nonincreasing = nonincreasing && e[i] <= best + 0.003;
      best = std::min(best, e[i]);
    }
    for (double v : e) ts_worst = ts_worst && v < e_ts;
    const bool plateau = std::abs(e[e.size() - 1] - e[e.size() - 2]) <= 0.003;
    report(4, "capacity sweep", nonincreasing && plateau && ts_worst,
           detail + fmt("(need nonincreasing within 0.3pp: %s, plateau within 0.3pp: %s, TS worst: %s; S=%zu)",
                        nonincreasing ? "yes" : "no", plateau ? "yes" : "no", ts_worst ? "yes" : "no",
                        opt.pts.steps));
  });

  criterion(5, "hand-computed metric fixtures", [] {
    const std::vector<PredictionRecord> four{{0, 0.9, true}, {0, 0.8, true}, {0, 0.7, false}, {0, 0.3, false}};
    const double w = ece(four, 2, 1).value, m = ece_equal_mass(four, 2).value;
    report(5, "hand-computed metric fixtures", std::abs(w - 0.175) <= 1e-12 && std::abs(m - 0.325) <= 1e-12,
           fmt("equal-width=%.15f (0.175), equal-mass=%.15f (0.325), tolerance 1e-12", w, m));
  });

  criterion(6, "PAV oracle equivalence", [] {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len(1, 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = len(rng);
      std::vector<double> x(n), y(n), wt(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i), y[i] = u(rng), wt[i] = 0.2 + u(rng);
      const auto got = pav(x, y, wt), want = brute_isotonic(y, wt);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    report(6, "PAV oracle equivalence", worst <= 1e-6, fmt("100 instances, max abs diff %.3g (need <= 1e-6)", worst));
  });

  criterion(7, "gradient correctness", [&] {
    // Random parameter points in general position: seeded init plus nonzero
    // biases, so no hidden unit sits exactly on its ReLU kink.
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, hetero.val.size() - 1);
    std::normal_distribution<double> bias(0.0, 0.1);
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0;
    const int batches = 20;
    bool all_checked = true;
    for (int b = 0; b < batches; ++b) {
      PtsTrainConfig cfg;
      cfg.seed = rng();
      auto model = make_pts_model(10, cfg);
      for (std::size_t l = 0; l < model.mlp.num_layers(); ++l)
        for (std::size_t o = 0; o < model.mlp.widths[l + 1]; ++o) model.mlp.bias(l, o) = bias(rng);
      std::vector<std::size_t> idx(200);
      for (auto& i : idx) i = pick(rng);
      const auto batch = hetero.val.subset(idx);
      const auto rep = nn::grad_check(model.mlp, pts_frozen_loss(model, batch, LossKind::ece, 10), 1e-4, 1e-5,
                                      pts_relu_smooth(model, batch));
      worst = std::max(worst, rep.max_rel_error);
      checked += rep.checked;
      skipped += rep.skipped;
      all_checked = all_checked && rep.checked > 0;
    }
    report(7, "gradient correctness", all_checked && worst <= 1e-4,
           fmt("%d minibatches of 200, h=1e-5, max relative error %.3g (need <= 1e-4); %zu coordinates checked, %zu "
               "skipped at ReLU kinks",
               batches, worst, checked, skipped));
  });

  criterion(8, "bin-count bias", [] {
    experiments::Options opt;
    opt.seed = seed;
    const auto table = experiments::bin_sweep(opt);
    std::vector<double> ms(opt.bins.begin(), opt.bins.end());
    bool ok = true;
    std::string detail = fmt("%zu regimes, Spearman(M, mean ECE): ", experiments::sweep_regimes(seed).size());
    for (const char* method : {"ts", "ets", "pts"}) {
      std::vector<double> e;
      for (std::size_t m : opt.bins)
        e.push_back(table.lookup({{"regime", std::string("mean")}, {"method", std::string(method)}, {"bins", m}}, "ece"));
      const double rho = spearman(ms, e);
      ok = ok && rho > 0.0;
      detail += fmt("%s=%.3f ", method, rho);
    }
    report(8, "bin-count bias", ok, detail + "(need > 0)");
  });

  criterion(9, "data efficiency", [] {
    experiments::Options opt;
    opt.seed = seed;
    opt.fractions = {0.1, 1.0};
    opt.methods = {Method::pts, Method::irova};
    const auto table = experiments::data_efficiency(opt);
    auto at = [&](const char* m, double f) {
      return table.lookup({{"method", std::string(m)}, {"fraction", f}}, "ece");
    };
    const double pts_ratio = at("pts", 0.1) / at("pts", 1.0);
    const double irova_ratio = at("irova", 0.1) / at("irova", 1.0);
    report(9, "data efficiency", pts_ratio <= 2.0 && irova_ratio > pts_ratio,
           fmt("PTS 10%%/100%% = %.3fpp/%.3fpp = %.2f (need <= 2); IROvA = %.3fpp/%.3fpp = %.2f (need > PTS ratio)",
               100 * at("pts", 0.1), 100 * at("pts", 1.0), pts_ratio, 100 * at("irova", 0.1), 100 * at("irova", 1.0),
               irova_ratio));
  });

  criterion(10, "loss ablation", [&] {
    experiments::Options opt;
    opt.seed = seed;
    opt.val = hetero.val;
    opt.test = hetero.test;
    const auto table = experiments::loss_ablation(opt);
    auto at = [&](const char* m, const char* l) {
      return table.lookup({{"method", std::string(m)}, {"loss", std::string(l)}}, "ece");
    };
    const double ets_gap = std::abs(at("ets", "mse") - at("ets", "ece"));
    const double pts_gain = at("pts", "mse") - at("pts", "ece");
    report(10, "loss ablation", ets_gap <= 0.003 && pts_gain >= 0.005,
           fmt("ETS mse=%.3fpp ece=%.3fpp |diff|=%.3fpp (need <= 0.3pp); PTS mse=%.3fpp ece=%.3fpp gain=%.3fpp "
               "(need >= 0.5pp); S=%zu",
               100 * at("ets", "mse"), 100 * at("ets", "ece"), 100 * ets_gap, 100 * at("pts", "mse"),
               100 * at("pts", "ece"), 100 * pts_gain, opt.pts.steps));
  });

  criterion(11, "determinism of compare reports", [] {
    const auto dir = fs::temp_directory_path() / "calibkit_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = CALIBKIT_CLI, d = dir.string();
    auto sh = [](const std::string& cmd) { return std::system((cmd + " >/dev/null").c_str()); };
    bool ok = sh(cli + " generate --samples 6000 --seed 17 --val " + d + "/val.csv --test " + d + "/test.csv") == 0;
    const std::string cmp = cli + " compare --methods ts,ets,pts,irova,irm,irova_ts,pbmc,histbin --seed 17 --steps 3000 --bins 5,10,15 --val " +
                            d + "/val.csv --test " + d + "/test.csv --out ";
    ok = ok && sh(cmp + d + "/a.json") == 0 && sh(cmp + d + "/b.json") == 0;
    const auto a = slurp(dir / "a.json"), b = slurp(dir / "b.json");
    ok = ok && !a.empty() && a == b;
    report(11, "determinism of compare reports", ok,
           fmt("two compare runs with seed 17: %zu and %zu bytes, %s", a.size(), b.size(),
               a == b ? "byte-identical" : "different"));
  });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
