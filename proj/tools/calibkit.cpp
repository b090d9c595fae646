// calibkit: fit, apply and evaluate post-hoc calibrators on logit CSV files,
// and run the synthetic-oracle experiments.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calibkit/arglists.hpp"
#include "calibkit/calibrator.hpp"
#include "calibkit/evaluation.hpp"
#include "calibkit/experiments.hpp"
#include "calibkit/io.hpp"
#include "calibkit/synth.hpp"

namespace fs = std::filesystem;
using namespace calibkit;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kNumerical = 3;

// Flags shared by every subcommand that may train PTS.
struct TrainFlags {
  std::uint64_t seed = 17;
  std::size_t steps = PtsTrainConfig{}.steps;
  std::size_t batch_size = PtsTrainConfig{}.batch_size;
  double lr = PtsTrainConfig{}.learning_rate;
  std::size_t topk = PtsTrainConfig{}.topk;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--steps", steps, "PTS training steps")->capture_default_str();
    app->add_option("--batch-size", batch_size, "PTS minibatch size")->capture_default_str();
    app->add_option("--lr", lr, "PTS learning rate")->capture_default_str();
    app->add_option("--topk", topk, "Sorted logits fed to the PTS network")->capture_default_str();
  }

  [[nodiscard]] PtsTrainConfig pts() const {
    PtsTrainConfig c;
    c.seed = seed;
    c.steps = steps;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.topk = topk;
    return c;
  }
};

std::vector<Method> parse_methods(const std::string& text) {
  std::vector<Method> out;
  for (const auto& n : args::parse_names(text)) out.push_back(parse_method(n));
  return out;
}

void write_or_print(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") std::cout << text;
  else io::write_text_atomic(out, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc uncertainty calibration toolkit"};
  app.require_subcommand(1);

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Write a synthetic miscalibrated logits CSV");
  synth::SynthConfig gen_cfg;
  std::string gen_regime = "global_temp", gen_out, gen_val, gen_test, gen_fractions = "0.5,0.5";
  gen->add_option("--regime", gen_regime, "global_temp | heteroscedastic | overconfident_tail")->capture_default_str();
  gen->add_option("--classes", gen_cfg.num_classes)->capture_default_str();
  gen->add_option("--samples", gen_cfg.num_samples)->capture_default_str();
  gen->add_option("--scale", gen_cfg.scale, "s for global_temp")->capture_default_str();
  gen->add_option("--slope", gen_cfg.slope, "a for heteroscedastic / overconfident_tail")->capture_default_str();
  gen->add_option("--base", gen_cfg.base, "b for heteroscedastic / overconfident_tail")->capture_default_str();
  gen->add_option("--knee", gen_cfg.knee, "gap threshold for overconfident_tail")->capture_default_str();
  gen->add_option("--concentration", gen_cfg.concentration)->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed)->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV for the whole dataset");
  gen->add_option("--val", gen_val, "Output CSV for the validation split");
  gen->add_option("--test", gen_test, "Output CSV for the test split");
  gen->add_option("--fractions", gen_fractions, "Split fractions (val,test)")->capture_default_str();

  // fit --------------------------------------------------------------------
  auto* fit_cmd = app.add_subcommand("fit", "Fit one calibrator on a validation logits CSV");
  std::string fit_method, fit_val, fit_out, fit_widths = "5,5", fit_loss, fit_bins = "10";
  TrainFlags fit_flags;
  fit_cmd->add_option("--method", fit_method, "ts|ets|pts|histbin|irova|irm|irova_ts|pbmc")->required();
  fit_cmd->add_option("--val", fit_val, "Validation logits CSV")->required();
  fit_cmd->add_option("--out", fit_out, "Model JSON path")->required();
  fit_cmd->add_option("--widths", fit_widths, "PTS hidden layer widths")->capture_default_str();
  fit_cmd->add_option("--losses", fit_loss, "Training loss for ets/pts: mse or ece");
  fit_cmd->add_option("--bins", fit_bins, "Bins for the PTS loss, histbin and pbmc")->capture_default_str();
  fit_flags.add_to(fit_cmd);

  // apply ------------------------------------------------------------------
  auto* apply_cmd = app.add_subcommand("apply", "Write calibrated confidences for a logits CSV");
  std::string apply_model, apply_test, apply_out;
  apply_cmd->add_option("--model", apply_model, "Model JSON")->required();
  apply_cmd->add_option("--test", apply_test, "Logits CSV")->required();
  apply_cmd->add_option("--out", apply_out, "Output CSV (stdout when omitted)");

  // eval -------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a fitted calibrator on a test logits CSV");
  std::string eval_model, eval_test, eval_out, eval_bins = "10";
  eval_cmd->add_option("--model", eval_model, "Model JSON")->required();
  eval_cmd->add_option("--test", eval_test, "Test logits CSV")->required();
  eval_cmd->add_option("--bins", eval_bins, "Equal-width bin counts, e.g. 10 or 5,7,...,19")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report JSON (stdout when omitted)");

  // compare ----------------------------------------------------------------
  auto* cmp = app.add_subcommand("compare", "Fit several calibrators on --val and evaluate all on --test");
  std::string cmp_methods = "ts,ets,pts,irova,irm,irova_ts,pbmc,histbin", cmp_val, cmp_test, cmp_out, cmp_bins = "10";
  TrainFlags cmp_flags;
  cmp->add_option("--methods", cmp_methods)->capture_default_str();
  cmp->add_option("--val", cmp_val, "Validation logits CSV")->required();
  cmp->add_option("--test", cmp_test, "Test logits CSV")->required();
  cmp->add_option("--bins", cmp_bins)->capture_default_str();
  cmp->add_option("--out", cmp_out, "Report JSON (stdout when omitted); fit times go to <out>.timings.json");
  cmp_flags.add_to(cmp);

  // experiment -------------------------------------------------------------
  auto* exp = app.add_subcommand("experiment", "Run a synthetic-oracle experiment");
  std::string exp_name, exp_out = ".", exp_widths, exp_fractions, exp_losses, exp_methods, exp_bins, exp_val, exp_test;
  TrainFlags exp_flags;
  exp_flags.steps = experiments::Options{}.pts.steps;
  exp->add_option("name", exp_name, "capacity | bins | data_efficiency | loss_ablation")->required();
  exp->add_option("--widths", exp_widths, "Hidden widths for the capacity sweep");
  exp->add_option("--fractions", exp_fractions, "Validation fractions, e.g. 0.1:1.0:0.1");
  exp->add_option("--losses", exp_losses, "Losses for the ablation, e.g. mse,ece");
  exp->add_option("--methods", exp_methods, "Calibrators to include");
  exp->add_option("--bins", exp_bins, "Bin counts for the bin sweep");
  exp->add_option("--val", exp_val, "Validation CSV instead of the synthetic oracle");
  exp->add_option("--test", exp_test, "Test CSV instead of the synthetic oracle");
  exp->add_option("--out", exp_out, "Output directory")->capture_default_str();
  exp_flags.add_to(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (gen->parsed()) {
      gen_cfg.regime = synth::parse_regime(gen_regime);
      const auto data = synth::generate(gen_cfg);
      if (!gen_val.empty() || !gen_test.empty()) {
        if (gen_val.empty() || gen_test.empty()) throw InvalidArgument("--val and --test must be given together");
        const auto fr = args::parse_reals(gen_fractions);
        if (fr.size() != 2) throw InvalidArgument("--fractions needs two values");
        const auto parts = synth::split(data.dataset, fr, gen_cfg.seed);
        io::write_logits(parts[0], gen_val);
        io::write_logits(parts[1], gen_test);
      }
      if (!gen_out.empty()) io::write_logits(data.dataset, gen_out);
      if (gen_out.empty() && gen_val.empty()) std::cout << io::format_logits(data.dataset);
    } else if (fit_cmd->parsed()) {
      const Method method = parse_method(fit_method);
      const auto val = io::read_logits(fit_val);
      FitOptions opt;
      opt.pts = fit_flags.pts();
      opt.pts.hidden = args::parse_counts(fit_widths);
      const auto bins = args::parse_counts(fit_bins);
      opt.pts.num_bins = opt.histbin_bins = opt.pbmc.num_bins = opt.ets_bins = bins.front();
      opt.pbmc.seed = fit_flags.seed;
      if (!fit_loss.empty()) opt.pts.loss = opt.ets_loss = parse_loss_kind(fit_loss);
      io::write_model(fit(method, val, opt), fit_out);
    } else if (apply_cmd->parsed()) {
      const auto model = io::read_model(apply_model);
      const auto data = io::read_logits(apply_test);
      if (data.num_classes != model.num_classes) throw DataError("logits file class count does not match the model");
      std::string out = "label,predicted,confidence\n";
      for (const auto& r : data.records) {
        const auto [cls, conf] = top_label(model.apply(r.logits));
        out += std::to_string(r.label) + "," + std::to_string(cls) + "," + io::format_real(conf) + "\n";
      }
      write_or_print(apply_out, out);
    } else if (eval_cmd->parsed()) {
      const auto model = io::read_model(eval_model);
      const auto test = io::read_logits(eval_test);
      const auto bins = args::parse_counts(eval_bins);
      const std::vector<MethodReport> reports{evaluate_uncalibrated(test, bins), evaluate_calibrator(model, test, bins)};
      write_or_print(eval_out, io::dump(report_to_json(reports, test.size())));
    } else if (cmp->parsed()) {
      const auto methods = parse_methods(cmp_methods);
      const auto val = io::read_logits(cmp_val);
      const auto test = io::read_logits(cmp_test);
      const auto bins = args::parse_counts(cmp_bins);
      FitOptions opt;
      opt.pts = cmp_flags.pts();
      opt.pbmc.seed = cmp_flags.seed;
      const auto reports = compare(methods, val, test, opt, bins);
      write_or_print(cmp_out, io::dump(report_to_json(reports, test.size())));
      if (!cmp_out.empty() && cmp_out != "-")
        io::write_text_atomic(cmp_out + ".timings.json", io::dump(timings_to_json(reports)));
    } else if (exp->parsed()) {
      experiments::Options opt;
      opt.seed = exp_flags.seed;
      opt.pts = exp_flags.pts();
      if (!exp_widths.empty()) opt.widths = args::parse_counts(exp_widths);
      if (!exp_fractions.empty()) opt.fractions = args::parse_reals(exp_fractions);
      if (!exp_bins.empty()) opt.bins = args::parse_counts(exp_bins);
      if (!exp_methods.empty()) opt.methods = parse_methods(exp_methods);
      if (!exp_losses.empty()) {
        opt.losses.clear();
        for (const auto& l : args::parse_names(exp_losses)) opt.losses.push_back(parse_loss_kind(l));
      }
      if (!exp_val.empty() || !exp_test.empty()) {
        if (exp_val.empty() || exp_test.empty()) throw InvalidArgument("--val and --test must be given together");
        opt.val = io::read_logits(exp_val);
        opt.test = io::read_logits(exp_test);
      }
      const auto table = experiments::run(exp_name, opt);
      fs::create_directories(exp_out);
      io::write_text_atomic(fs::path(exp_out) / (exp_name + ".csv"), table.to_csv());
      io::write_text_atomic(fs::path(exp_out) / (exp_name + ".json"), io::dump(table.to_json()));
      std::cout << table.to_csv();
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "calibkit: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "calibkit: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericalError& e) {
    std::cerr << "calibkit: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "calibkit: " << e.what() << '\n';
    return kDataError;
  }
  return 0;
}
