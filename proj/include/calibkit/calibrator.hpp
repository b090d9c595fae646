#pragma once

// A tagged fitted calibrator: any of the scaling or binning models behind one
// fit/apply surface.

#include <string>
#include <variant>
#include <vector>

#include "calibkit/binning.hpp"
#include "calibkit/core.hpp"
#include "calibkit/scaling.hpp"

namespace calibkit {

enum class Method { ts, ets, pts, histbin, irova, irm, irova_ts, pbmc };

inline constexpr Method kAllMethods[] = {Method::ts,    Method::ets, Method::pts,      Method::histbin,
                                         Method::irova, Method::irm, Method::irova_ts, Method::pbmc};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ts: return "ts";
    case Method::ets: return "ets";
    case Method::pts: return "pts";
    case Method::histbin: return "histbin";
    case Method::irova: return "irova";
    case Method::irm: return "irm";
    case Method::irova_ts: return "irova_ts";
    case Method::pbmc: return "pbmc";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown calibrator kind '" + s + "'");
}

// Methods guaranteed never to change the predicted class.
inline bool preserves_accuracy(Method m) {
  return m == Method::ts || m == Method::ets || m == Method::pts || m == Method::irm || m == Method::pbmc;
}

using Model = std::variant<TsModel, EtsModel, PtsModel, HistBinModel, IrovaModel, IrmModel, IrovaTsModel, PbmcModel>;

struct Calibrator {
  Model model;
  std::size_t num_classes = 0;

  [[nodiscard]] Method kind() const { return static_cast<Method>(model.index()); }

  [[nodiscard]] ProbVector apply(std::span<const double> logits) const {
    if (logits.size() != num_classes) throw InvalidArgument("logit count does not match calibrator");
    return std::visit(
        [&](const auto& m) -> ProbVector {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, TsModel>) return apply_ts(logits, m);
          else if constexpr (std::is_same_v<T, EtsModel>) return apply_ets(logits, m);
          else if constexpr (std::is_same_v<T, PtsModel>) return apply_pts(logits, m);
          else if constexpr (std::is_same_v<T, HistBinModel>) return apply_hist_binning(logits, m);
          else if constexpr (std::is_same_v<T, IrovaModel>) return apply_irova(logits, m);
          else if constexpr (std::is_same_v<T, IrmModel>) return apply_irm(logits, m);
          else if constexpr (std::is_same_v<T, IrovaTsModel>) return apply_irova_ts(logits, m);
          else return apply_pbmc(logits, m);
        },
        model);
  }

  [[nodiscard]] std::vector<PredictionRecord> predict(const Dataset& ds) const {
    std::vector<PredictionRecord> out;
    out.reserve(ds.size());
    for (const auto& r : ds.records) out.push_back(make_prediction(apply(r.logits), r.label));
    return out;
  }

  [[nodiscard]] std::vector<ProbVector> probabilities(const Dataset& ds) const {
    std::vector<ProbVector> out;
    out.reserve(ds.size());
    for (const auto& r : ds.records) out.push_back(apply(r.logits));
    return out;
  }
};

// The variant alternatives are declared in Method order.
static_assert(std::variant_size_v<Model> == std::size(kAllMethods));

struct FitOptions {
  PtsTrainConfig pts;
  LossKind ets_loss = LossKind::mse;
  std::size_t ets_bins = 10;
  std::size_t histbin_bins = 10;
  PbmcOptions pbmc;
};

inline Calibrator fit(Method method, const Dataset& ds, const FitOptions& opt = {}) {
  if (ds.empty()) throw InvalidArgument("cannot fit a calibrator on an empty dataset");
  Calibrator c;
  c.num_classes = ds.num_classes;
  switch (method) {
    case Method::ts: c.model = fit_ts(ds); break;
    case Method::ets: c.model = fit_ets(ds, opt.ets_loss, opt.ets_bins); break;
    case Method::pts: c.model = fit_pts(ds, opt.pts); break;
    case Method::histbin: c.model = fit_hist_binning(uncalibrated_predictions(ds), opt.histbin_bins); break;
    case Method::irova: c.model = fit_irova(ds); break;
    case Method::irm: c.model = fit_irm(ds); break;
    case Method::irova_ts: c.model = fit_irova_ts(ds); break;
    case Method::pbmc: c.model = fit_pbmc(ds, opt.pbmc); break;
  }
  return c;
}

}  // namespace calibkit
