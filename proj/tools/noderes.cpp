// noderes: generate data, train residual generators, evaluate and report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noderes/analysis.hpp"
#include "noderes/errors.hpp"
#include "noderes/experiment.hpp"
#include "noderes/io.hpp"

namespace fs = std::filesystem;
using namespace noderes;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data_dir;
  std::optional<std::string> model_dir;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> seeds;
  std::string hidden;
  std::vector<std::string> residuals;
  std::vector<std::string> solvers;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON); defaults are built in")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Global seed");
}

void add_selection(CLI::App* cmd, Common& c) {
  cmd->add_option("--residual", c.residuals, "Residual id (r1, r2, r3) or spec file; repeatable");
  cmd->add_option("--solver", c.solvers, "Training solver (ef, mp, rk4); repeatable")
      ->check(CLI::IsMember({"ef", "mp", "rk4"}, CLI::ignore_case));
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(part, &pos);
    if (pos != part.size() || v == 0) throw ParameterError("bad hidden layout '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ParameterError("bad hidden layout '" + text + "'");
  return out;
}

// Config file first, then flag overrides.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::defaults() : load_experiment(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.data_dir) cfg.data_dir = *c.data_dir;
  if (c.model_dir) cfg.model_dir = *c.model_dir;
  if (c.epochs) cfg.training.epochs = *c.epochs;
  if (c.seeds) cfg.seeds = *c.seeds;
  if (!c.hidden.empty()) cfg.hidden = parse_widths(c.hidden);
  if (!c.residuals.empty()) cfg.residuals = c.residuals;
  if (!c.solvers.empty()) {
    cfg.solvers.clear();
    for (const auto& s : c.solvers) cfg.solvers.push_back(method_from_string(s));
  }
  cfg.validate();
  return cfg;
}

int cmd_generate(const Common& c, std::optional<std::size_t> length) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::defaults() : load_experiment(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (length) {
    cfg.train_length = cfg.val_length = cfg.fault_length = *length;
    cfg.training.seq_len = std::min(cfg.training.seq_len, *length);
  }
  cfg.validate();
  const fs::path dir = c.out.value_or(cfg.data_dir);
  const auto set = generate_datasets(cfg);
  for (const auto& p : write_datasets(dir, cfg, set)) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path model_dir = c.out.value_or(cfg.model_dir);
  const DatasetSet data = load_datasets(cfg.data_dir, cfg);
  int status = 0;
  for (const auto& r : cfg.residuals) {
    for (Method m : cfg.solvers) {
      const BestOfSeeds result = train_combination(cfg, r, m, data);
      bool any_ok = false;
      for (const auto& run : result.runs) {
        if (run.failed) std::cerr << "seed " << run.seed << ": " << run.failure << "\n";
        else any_ok = true;
      }
      if (!any_ok) {
        status = 1;
        continue;
      }
      save_training(model_dir, r, m, result);
      std::cout << table_row(r, m, result.best) << "\n";
    }
  }
  return status;
}

int cmd_eval(const Common& c, const std::vector<std::string>& eval_solvers, double factor) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path model_dir = cfg.model_dir;
  const Dataset val = read_dataset(val_path(cfg.data_dir));
  std::vector<Method> evals;
  for (const auto& s : eval_solvers) evals.push_back(method_from_string(s));
  if (evals.empty()) evals.assign(kAllMethods.begin(), kAllMethods.end());
  const int substeps = substeps_for_factor(factor);

  std::string csv = "residual,train_solver,eval_solver,factor,mse,diverged,diverged_at\n";
  for (const auto& r : cfg.residuals) {
    for (Method t : cfg.solvers) {
      const fs::path p = model_path(model_dir, r, t);
      if (!fs::exists(p)) throw IoError("model archive not found: " + p.string());
      const ResidualModel model = load_model(p);
      for (Method e : evals) {
        const EvalOutcome o = evaluate(model, SolverKind::make(e, cfg.step), val, cfg.analysis.settle, substeps);
        const std::string at = o.diverged_at ? std::to_string(*o.diverged_at) : "";
        csv += model.spec.name + "," + to_string(t) + "," + to_string(e) + "," + format_double(factor) + "," +
               (o.diverged ? "" : format_double(o.mse)) + "," + (o.diverged ? "1" : "0") + "," + at + "\n";
        if (o.diverged)
          std::printf("%-4s %-4s -> %-4s  diverged at sample %s\n", model.spec.name.c_str(), to_string(t),
                      to_string(e), at.c_str());
        else
          std::printf("%-4s %-4s -> %-4s  mse %.3e\n", model.spec.name.c_str(), to_string(t), to_string(e), o.mse);
      }
    }
  }
  if (c.out) {
    write_file_atomic(fs::path(*c.out) / "eval.csv", csv);
    std::cout << "wrote " << (fs::path(*c.out) / "eval.csv").string() << "\n";
  }
  return 0;
}

int cmd_report(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path report_dir = c.out.value_or(cfg.report_dir);
  const ModelGrid models = load_models(cfg.model_dir, cfg);
  const DatasetSet data = load_datasets(cfg.data_dir, cfg);
  std::map<std::pair<std::string, Method>, std::pair<double, double>> histories;
  for (const auto& [key, model] : models) {
    const fs::path h = history_path(cfg.model_dir, key.first, key.second);
    if (fs::exists(h)) histories[key] = read_history_tail(h);
  }
  const Report report = build_report(cfg, models, data, histories);
  const auto manifest = write_report(report_dir, cfg, report, models);
  for (const auto& row : report.training)
    std::printf("%-4s %-4s train %.3e  val %.3e\n", row.residual.c_str(), to_string(row.solver), row.train_loss,
                row.val_loss);
  for (const auto& f : manifest.at("files"))
    std::cout << "wrote " << (report_dir / f.at("path").get<std::string>()).string() << "\n";
  return 0;
}

int cmd_stability(const std::optional<std::string>& out, std::size_t angles) {
  std::vector<StabilityRegion> regions;
  for (Method m : kAllMethods) {
    regions.push_back(stability_region(m, angles));
    std::printf("%-4s real-axis bound %.6f\n", to_string(m), regions.back().real_axis_bound);
  }
  if (out) {
    const fs::path dir(*out);
    write_file_atomic(dir / "stability.csv", stability_csv(regions));
    write_file_atomic(dir / "stability_boundary.csv", stability_boundary_csv(regions));
    std::cout << "wrote " << (dir / "stability.csv").string() << "\n"
              << "wrote " << (dir / "stability_boundary.csv").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-ODE residual generators: data, training and analysis"};
  app.require_subcommand(1);

  Common gen, tr, ev, rep;
  std::optional<std::size_t> length;
  auto* g = app.add_subcommand("generate", "Write nominal and fault datasets");
  add_common(g, gen);
  g->add_option("--out", gen.out, "Data directory (default: paths.data)");
  g->add_option("--length", length, "Samples per dataset, overriding every configured length")
      ->check(CLI::PositiveNumber);

  auto* t = app.add_subcommand("train", "Train residual models (best of N seeds)");
  add_common(t, tr);
  add_selection(t, tr);
  t->add_option("--out", tr.out, "Model directory (default: paths.models)");
  t->add_option("--data", tr.data_dir, "Data directory (default: paths.data)");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--seeds", tr.seeds, "Independent initializations per combination");
  t->add_option("--hidden", tr.hidden, "Hidden layer widths, e.g. 128,128");

  std::vector<std::string> eval_solvers;
  double factor = 1.0;
  auto* e = app.add_subcommand("eval", "Evaluate trained models under other solvers and step sizes");
  add_common(e, ev);
  add_selection(e, ev);
  e->add_option("--eval-solver", eval_solvers, "Evaluation solver; repeatable (default: all)")
      ->check(CLI::IsMember({"ef", "mp", "rk4"}, CLI::ignore_case));
  e->add_option("--step-factor", factor, "Evaluate at step T * factor (1/factor must be an integer)");
  e->add_option("--data", ev.data_dir, "Data directory (default: paths.data)");
  e->add_option("--models", ev.model_dir, "Model directory (default: paths.models)");
  e->add_option("--out", ev.out, "Also write eval.csv into this directory");

  auto* r = app.add_subcommand("report", "Cross-evaluation, step study, stability and fault scatter");
  add_common(r, rep);
  r->add_option("--out", rep.out, "Report directory (default: paths.reports)");
  r->add_option("--data", rep.data_dir, "Data directory (default: paths.data)");
  r->add_option("--models", rep.model_dir, "Model directory (default: paths.models)");

  std::optional<std::string> stab_out;
  std::size_t angles = 360;
  auto* s = app.add_subcommand("stability", "Stability regions of the explicit solvers");
  s->add_option("--out", stab_out, "Write stability CSVs into this directory");
  s->add_option("--angles", angles, "Boundary samples per root branch")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return cmd_generate(gen, length);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev, eval_solvers, factor);
    if (*r) return cmd_report(rep);
    if (*s) return cmd_stability(stab_out, angles);
  } catch (const TrainingFailure& ex) {
    std::cerr << "error: training failed in epoch " << ex.epoch() << ": " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
