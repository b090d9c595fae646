#pragma once

// File formats: logits CSV, model JSON and report JSON.
//
// Logits CSV has the header `label,z0,...,z{C-1}` and one row per sample;
// reals are written with 17 significant digits. Model files are JSON objects
// with `kind`, `version`, `num_classes` and a kind-specific `params` object.
// JSON keys are emitted in sorted order, so dumps are canonical.

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibkit/calibrator.hpp"
#include "calibkit/core.hpp"

namespace calibkit::io {

using nlohmann::json;

inline constexpr int kModelVersion = 1;

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Logits CSV

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace detail

inline Dataset parse_logits(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  const auto header = detail::split_fields(detail::trim(line));
  if (header.size() < 3 || header[0] != "label")
    throw DataError(source + ":1: header must be label,z0,z1,... with at least two classes");
  for (std::size_t c = 1; c < header.size(); ++c)
    if (header[c] != "z" + std::to_string(c - 1)) throw DataError(source + ":1: unexpected column '" + header[c] + "'");
  const std::size_t num_classes = header.size() - 1;

  std::vector<LogitRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (fields.size() != header.size())
      throw DataError(where + "expected " + std::to_string(header.size()) + " columns, found " +
                      std::to_string(fields.size()));
    LogitRecord r;
    {
      const auto& f = fields[0];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), r.label);
      if (ec != std::errc() || p != f.data() + f.size()) throw DataError(where + "label '" + f + "' is not an integer");
      if (r.label >= num_classes) throw DataError(where + "label " + f + " out of range for " + std::to_string(num_classes) + " classes");
    }
    r.logits.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto& f = fields[c + 1];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), r.logits[c]);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(r.logits[c]))
        throw DataError(where + "logit '" + f + "' is not a finite real");
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError(source + ": no data rows");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.records = std::move(records);
  return ds;
}

inline Dataset read_logits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_logits(in, path.string());
}

inline std::string format_logits(const Dataset& ds) {
  std::string out = "label";
  for (std::size_t c = 0; c < ds.num_classes; ++c) out += ",z" + std::to_string(c);
  out += '\n';
  for (const auto& r : ds.records) {
    out += std::to_string(r.label);
    for (double z : r.logits) {
      out += ',';
      out += format_real(z);
    }
    out += '\n';
  }
  return out;
}

// Writes via a temporary file and rename so readers never see partial output.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_logits(const Dataset& ds, const std::filesystem::path& path) {
  write_text_atomic(path, format_logits(ds));
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models

namespace detail {

inline json step_to_json(const StepFunction& f) { return {{"knots", f.knots}, {"values", f.values}}; }

inline StepFunction step_from_json(const json& j) {
  StepFunction f{j.at("knots").get<std::vector<double>>(), j.at("values").get<std::vector<double>>()};
  if (f.knots.size() != f.values.size()) throw DataError("step function knots/values length mismatch");
  return f;
}

inline json pts_config_to_json(const PtsTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"steps", c.steps},
          {"num_bins", c.num_bins},           {"hidden", c.hidden},         {"loss", to_string(c.loss)},
          {"seed", c.seed},                   {"topk", c.topk}};
}

inline PtsTrainConfig pts_config_from_json(const json& j) {
  PtsTrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.num_bins = j.at("num_bins").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.topk = j.at("topk").get<std::size_t>();
  return c;
}

inline json params_to_json(const Model& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TsModel>) {
          return {{"temperature", m.temperature}};
        } else if constexpr (std::is_same_v<T, EtsModel>) {
          return {{"temperature", m.temperature}, {"weights", m.weights}};
        } else if constexpr (std::is_same_v<T, PtsModel>) {
          return {{"layer_widths", m.mlp.widths}, {"weights", m.mlp.values}, {"t_min", m.t_min},
                  {"topk", m.topk},               {"config", pts_config_to_json(m.config)}};
        } else if constexpr (std::is_same_v<T, HistBinModel>) {
          return {{"thresholds", m.thresholds}, {"scores", m.scores}};
        } else if constexpr (std::is_same_v<T, IrovaModel>) {
          json maps = json::array();
          for (const auto& f : m.maps) maps.push_back(step_to_json(f));
          return {{"maps", maps}};
        } else if constexpr (std::is_same_v<T, IrmModel>) {
          return {{"map", step_to_json(m.map)}, {"delta", m.delta}};
        } else if constexpr (std::is_same_v<T, IrovaTsModel>) {
          json maps = json::array();
          for (const auto& f : m.irova.maps) maps.push_back(step_to_json(f));
          return {{"temperature", m.ts.temperature}, {"maps", maps}};
        } else {
          return {{"temperature", m.ts.temperature}, {"thresholds", m.thresholds}, {"scores", m.scores}};
        }
      },
      model);
}

inline IrovaModel irova_from_json(const json& maps) {
  IrovaModel m;
  for (const auto& f : maps) m.maps.push_back(step_from_json(f));
  return m;
}

}  // namespace detail

inline json model_to_json(const Calibrator& c) {
  return {{"kind", to_string(c.kind())},
          {"version", kModelVersion},
          {"num_classes", c.num_classes},
          {"params", detail::params_to_json(c.model)}};
}

inline Calibrator model_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kModelVersion) throw DataError("unsupported model file version");
    Calibrator c;
    c.num_classes = j.at("num_classes").get<std::size_t>();
    const auto& p = j.at("params");
    switch (parse_method(j.at("kind").get<std::string>())) {
      case Method::ts: c.model = TsModel{p.at("temperature").get<double>()}; break;
      case Method::ets:
        c.model = EtsModel{p.at("temperature").get<double>(), p.at("weights").get<std::array<double, 3>>()};
        break;
      case Method::pts: {
        PtsModel m;
        m.mlp = nn::MlpParams(p.at("layer_widths").get<std::vector<std::size_t>>());
        auto w = p.at("weights").get<std::vector<double>>();
        if (w.size() != m.mlp.size()) throw DataError("PTS weight count does not match layer widths");
        m.mlp.values = std::move(w);
        m.t_min = p.at("t_min").get<double>();
        m.topk = p.at("topk").get<std::size_t>();
        m.num_classes = c.num_classes;
        m.config = detail::pts_config_from_json(p.at("config"));
        if (m.topk != m.mlp.input_width()) throw DataError("PTS topk does not match network input width");
        c.model = std::move(m);
        break;
      }
      case Method::histbin:
        c.model = HistBinModel{p.at("thresholds").get<std::vector<double>>(), p.at("scores").get<std::vector<double>>()};
        break;
      case Method::irova: c.model = detail::irova_from_json(p.at("maps")); break;
      case Method::irm: c.model = IrmModel{detail::step_from_json(p.at("map")), p.at("delta").get<double>()}; break;
      case Method::irova_ts:
        c.model = IrovaTsModel{TsModel{p.at("temperature").get<double>()}, detail::irova_from_json(p.at("maps"))};
        break;
      case Method::pbmc:
        c.model = PbmcModel{TsModel{p.at("temperature").get<double>()}, p.at("thresholds").get<std::vector<double>>(),
                            p.at("scores").get<std::vector<double>>()};
        break;
    }
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

inline void write_model(const Calibrator& c, const std::filesystem::path& path) {
  write_text_atomic(path, dump(model_to_json(c)));
}

inline Calibrator read_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

}  // namespace calibkit::io
