// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. An optional argument names a directory
// that receives the smoke-scale report CSVs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "noderes/analysis.hpp"
#include "noderes/experiment.hpp"
#include "noderes/io.hpp"
#include "support.hpp"

using namespace noderes;
using namespace noderes::testing;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void note(const std::string& text) {
  std::printf("  %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void solver_correctness() {
  const auto t0 = Clock::now();
  const Vec x{1.0}, u{0.0};
  const auto f = linear_derivative(-1.0);
  const double ef = step_ef(f, x, u, 0.1)[0];
  const double mp = step_mp(f, x, u, u, 0.1)[0];
  const double rk = step_rk4(f, x, u, u, 0.1)[0];
  bool ok = std::abs(ef - 0.9) <= 1e-12 && std::abs(mp - 0.905) <= 1e-12 && std::abs(rk - 0.9048375) <= 1e-12;
  std::string slopes;
  for (Method m : kAllMethods) {
    const auto err = [&](double T) {
      const auto steps = static_cast<std::size_t>(std::llround(1.0 / T));
      return std::abs(linear_run(m, -1.0, T, steps).states.back()[0] - std::exp(-1.0));
    };
    const int p = SolverKind::make(m, 0.1).order();
    for (double T : {0.1, 0.05}) {
      const double slope = std::log2(err(T) / err(T / 2));
      ok = ok && std::abs(slope - p) <= 0.2;
      slopes += fmt(" %.2f", slope);
    }
  }
  const double dt = seconds_since(t0);
  verdict(1, ok && dt < 1.0,
          fmt("steps %.10f %.10f %.10f", ef, mp, rk) + "; orders" + slopes + fmt("; %.3fs", dt));
}

void gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto data = generate(PlantConfig{}, FaultScenario{}, 120, 0.2, 7);
  double worst = 0.0;
  for (const auto& spec : builtin_specs()) {
    auto model = build_model(spec, std::vector<std::size_t>{4}, 3);
    model.normalization = data.stats();
    const std::vector<double> x0(model.state_count(), 0.2);
    for (Method m : kAllMethods) worst = std::max(worst, check_unrolled_gradient(model, data, m, 30, 20, x0).worst_relative);
  }
  const double dt = seconds_since(t0);
  verdict(2, worst < 1e-4 && dt < 10.0, fmt("worst relative deviation %.2e over r1-r3 x EF/MP/RK4; %.2fs", worst, dt));
}

void stability_quantification() {
  const auto t0 = Clock::now();
  const double ef = real_axis_bound(Method::EF), mp = real_axis_bound(Method::MP), rk = real_axis_bound(Method::RK4);
  std::size_t mismatches = 0;
  for (Method m : kAllMethods)
    for (int i = -30; i <= 5; ++i) {
      const double z = i / 10.0;
      mismatches += linear_run(m, z, 1.0, 2000).diverged_at.has_value() == inside_stability_region(m, z);
    }
  const double dt = seconds_since(t0);
  const bool ok = std::abs(ef + 2.0) < 1e-9 && std::abs(mp + 2.0) < 1e-9 && std::abs(rk + 2.7853) < 1e-3 &&
                  mismatches == 0 && dt < 5.0;
  verdict(3, ok, fmt("bounds %.6f %.6f %.6f", ef, mp, rk) + "; grid mismatches " + std::to_string(mismatches) +
                     fmt("; %.3fs", dt));
}

struct Pipeline {
  ExperimentConfig cfg;
  DatasetSet data;
  ModelGrid models;
  std::map<std::pair<std::string, Method>, BestOfSeeds> runs;
  std::map<std::pair<std::string, Method>, std::pair<double, double>> histories;
  Report report;
  double seconds = 0.0;
};

ExperimentConfig smoke_config() {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.hidden = {16, 16};
  cfg.training.epochs = 100;
  cfg.seeds = 3;
  return cfg;
}

Pipeline run_pipeline() {
  Pipeline p;
  p.cfg = smoke_config();
  const auto t0 = Clock::now();
  p.data = generate_datasets(p.cfg);
  for (const auto& r : p.cfg.residuals)
    for (Method m : p.cfg.solvers) {
      auto best = train_combination(p.cfg, r, m, p.data);
      note(table_row(r, m, best.best) + fmt("  (initial val %.3e, %.0fs)", best.best.initial_val_loss, seconds_since(t0)));
      p.histories[{r, m}] = {best.best.history.back().train_loss, best.best.history.back().val_loss};
      p.models.emplace(std::make_pair(r, m), best.best.model);
      p.runs.emplace(std::make_pair(r, m), std::move(best));
    }
  p.report = build_report(p.cfg, p.models, p.data, p.histories);
  p.seconds = seconds_since(t0);
  return p;
}

void step_size_stabilization(const Pipeline& p) {
  const bool coarse = linear_run(Method::EF, -2.5, 1.0, 400).diverged_at.has_value();
  const bool fine = linear_run(Method::EF, -2.5, 1.0, 400, 2).diverged_at.has_value();
  const auto& rows = p.report.step_study;
  const auto score = [](const EvalOutcome& o) { return o.diverged ? INFINITY : o.mse; };
  double full = NAN, half = NAN;
  for (const auto& r : rows) {
    if (r.factor == 1.0) full = score(r.outcome);
    if (r.factor == 0.5) half = score(r.outcome);
  }
  verdict(4, coarse && !fine && half < full,
          std::string("linear lambda*T=-2.5: factor 1 ") + (coarse ? "diverges" : "stable") + ", factor 0.5 " +
              (fine ? "diverges" : "stable") + fmt("; trained-RK4 r1 under EF: mse %.3e at factor 1, %.3e at 0.5", full, half));
}

void cross_solver_pattern(const Pipeline& p) {
  bool a = true, b = false;
  std::string detail;
  for (const auto& mat : p.report.cross_eval) {
    const auto& diag = mat.at(Method::EF, Method::EF);
    double gain = 0.0;
    for (Method e : {Method::MP, Method::RK4}) {
      const auto& o = mat.at(Method::EF, e);
      gain = std::max(gain, (o.diverged || diag.diverged) ? INFINITY : diag.mse / o.mse);
    }
    a = a && gain < 2.0;
    double worst = 0.0;
    for (Method t : {Method::MP, Method::RK4}) {
      const auto& own = mat.at(t, t);
      const auto& ef = mat.at(t, Method::EF);
      const double ratio = ef.diverged ? INFINITY : ef.mse / own.mse;
      worst = std::max(worst, ratio);
      if (ratio >= 10.0) b = true;
    }
    detail += mat.residual + fmt(": EF-row gain %.2fx, worst MP/RK4->EF %.1fx; ", gain, worst);
    for (Method t : kAllMethods) {
      std::string row = mat.residual + " " + to_string(t) + ":";
      for (Method e : kAllMethods) {
        const auto& o = mat.at(t, e);
        row += o.diverged ? "        -" : fmt(" %.2e", o.mse);
      }
      note(row);
    }
  }
  verdict(5, a && b && p.seconds < 900.0,
          std::string("(a) ") + (a ? "yes" : "no") + " (b) " + (b ? "yes" : "no") + "; " + detail +
              fmt("pipeline %.0fs", p.seconds));
}

void training_sanity(const Pipeline& p) {
  bool ok = true;
  std::string detail = "theta";
  for (Method m : kAllMethods) {
    const auto fit = fit_scalar_decay(m);
    ok = ok && std::abs(fit.theta + 1.0) < 0.05;
    detail += fmt(" %.4f", fit.theta);
  }
  detail += "; r1 validation reduction";
  for (Method m : p.cfg.solvers) {
    const auto& best = p.runs.at({"r1", m}).best;
    const double ratio = best.initial_val_loss / best.history.back().val_loss;
    ok = ok && ratio >= 10.0;
    detail += fmt(" %.0fx", ratio);
  }
  verdict(6, ok, detail);
}

void fault_detectability(const Pipeline& p) {
  bool separated = true, same = true, decisive = true;
  std::string detail;
  const FaultScatter* reference = nullptr;
  double min_sep = INFINITY;
  for (const auto& [m, fs] : p.report.scatter) {
    std::string pattern = to_string(m) + std::string(":");
    for (std::size_t s = 1; s < fs.scenarios.size(); ++s) {
      const auto& sc = fs.scenarios[s];
      if (!sc.usable) {
        separated = false;
        pattern += " " + sc.label + "=unusable";
        continue;
      }
      min_sep = std::min(min_sep, sc.separation);
      separated = separated && sc.separation > 5.0;
      pattern += " " + sc.label + "[";
      for (std::size_t i = 0; i < sc.scores.size(); ++i) {
        const Reaction r = classify_reaction(sc.scores[i]);
        decisive = decisive && r != Reaction::Ambiguous;
        if (reference) {
          const auto& ref = reference->scenarios[s];
          same = same && ref.usable && classify_reaction(ref.scores[i]) == r;
        }
        pattern += fmt("%.1f", sc.scores[i]) + (r == Reaction::React ? "R" : r == Reaction::Quiet ? "q" : "?") +
                   (i + 1 < sc.scores.size() ? " " : "");
      }
      pattern += fmt("] sep %.1f", sc.separation);
    }
    note(pattern);
    if (!reference) reference = &fs;
    const auto& nom = fs.scenarios[0];
    std::string centre = std::string(to_string(m)) + " nominal centroid / (3 std/sqrt N):";
    for (std::size_t i = 0; i < nom.centroid.size(); ++i)
      centre += fmt(" %.2f", std::abs(nom.centroid[i]) / (3.0 * fs.nominal_std[i] / std::sqrt(static_cast<double>(nom.count))));
    note(centre);
  }
  detail = fmt("min separation %.2f", min_sep) + "; reaction pattern " + (same && decisive ? "identical" : "differs") +
           (decisive ? "" : " (ambiguous entries)");
  verdict(7, separated && same && decisive, detail);
}

std::string report_text(const Report& r, const ExperimentConfig& cfg) {
  std::string all = training_summary_csv(r.training) + cross_eval_csv(r.cross_eval) +
                    step_study_csv(cfg.analysis.step_study_residual, r.step_study) + stability_csv(r.stability) +
                    stability_boundary_csv(r.stability);
  for (const auto& [m, fs] : r.scatter) all += scatter_csv(fs) + scatter_summary_csv(fs);
  return all;
}

void determinism(const Pipeline& p) {
  bool ok = true;
  std::vector<std::string> broken;
  const auto again = generate_datasets(p.cfg);
  const auto same_data = [](const Dataset& a, const Dataset& b) { return dataset_to_csv(a) == dataset_to_csv(b); };
  if (!same_data(again.train, p.data.train) || !same_data(again.val, p.data.val)) broken.push_back("generate");
  for (std::size_t i = 0; i < again.faults.size(); ++i)
    if (!same_data(again.faults[i], p.data.faults[i])) broken.push_back("generate:" + p.cfg.faults[i].label());
  const auto retrained = train_combination(p.cfg, "r1", Method::EF, again);
  if (model_to_json(retrained.best.model).dump() != model_to_json(p.models.at({"r1", Method::EF})).dump() ||
      history_to_csv(retrained.best.history) != history_to_csv(p.runs.at({"r1", Method::EF}).best.history))
    broken.push_back("train");
  if (report_text(build_report(p.cfg, p.models, again, p.histories), p.cfg) != report_text(p.report, p.cfg))
    broken.push_back("report");
  ok = broken.empty();
  std::string detail = "regenerated datasets, retrained r1/EF and rebuilt the report";
  for (const auto& b : broken) detail += "; mismatch in " + b;
  verdict(8, ok, detail + (ok ? ": bit-identical" : ""));
}

}  // namespace

int main(int argc, char** argv) {
  solver_correctness();
  gradient_fidelity();
  stability_quantification();

  note("training the smoke-scale grid (3 residuals x 3 solvers x 3 seeds, hidden 16x16, 100 epochs)");
  const Pipeline p = run_pipeline();
  step_size_stabilization(p);
  cross_solver_pattern(p);
  training_sanity(p);
  fault_detectability(p);
  determinism(p);

  if (argc > 1) {
    write_report(argv[1], p.cfg, p.report, p.models);
    note(std::string("report written to ") + argv[1]);
  }
  std::printf("%d of 8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}
