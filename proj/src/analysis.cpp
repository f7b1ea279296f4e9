#include "noderes/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "noderes/errors.hpp"
#include "noderes/io.hpp"

namespace noderes {

EvalOutcome mse(std::span<const double> r, std::size_t begin, std::size_t end,
                std::optional<std::size_t> diverged_at) {
  if (begin >= end)
    throw ParameterError("mse window [" + std::to_string(begin) + ", " + std::to_string(end) + ") is empty");
  EvalOutcome out;
  if (diverged_at && *diverged_at < end) {
    out.diverged = true;
    out.diverged_at = diverged_at;
    out.mse = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  if (end > r.size())
    throw ParameterError("mse window end " + std::to_string(end) + " exceeds the sequence length " +
                         std::to_string(r.size()));
  double s = 0.0;
  for (std::size_t k = begin; k < end; ++k) s += r[k] * r[k];
  out.mse = s / static_cast<double>(end - begin);
  return out;
}

std::size_t evaluation_begin(const Dataset& data, std::size_t settle) {
  const std::size_t b = dosing_off_start(data) + settle;
  if (b >= data.size())
    throw ParameterError("no dosing-off samples left after a settling prefix of " +
                         std::to_string(settle));
  return b;
}

std::vector<double> normalized_residual(const ResidualModel& model, const ResidualRun& run) {
  const double sd = model.reference_stats().stddev;
  std::vector<double> r(run.r.size());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = run.r[k] / sd;
  return r;
}

EvalOutcome evaluate(const ResidualModel& model, const SolverKind& solver, const Dataset& data,
                     std::size_t settle, int substeps) {
  const std::size_t begin = evaluation_begin(data, settle);
  const ResidualRun run = residual_sequence(model, solver, data, std::nullopt, substeps);
  return mse(normalized_residual(model, run), begin, data.size(), run.diverged_at);
}

const EvalOutcome& CrossEvalMatrix::at(Method train, Method eval) const {
  for (const auto& c : cells)
    if (c.train == train && c.eval == eval) return c.outcome;
  throw AnalysisError(std::string("cross-eval has no cell ") + to_string(train) + " -> " +
                      to_string(eval));
}

CrossEvalMatrix cross_eval(const std::map<Method, ResidualModel>& models, const Dataset& data,
                           std::size_t settle) {
  CrossEvalMatrix m;
  for (const auto& [method, model] : models) {
    if (m.residual.empty()) m.residual = model.spec.name;
    for (Method e : kAllMethods) m.cells.push_back({method, e, {}});
  }
  const auto n = static_cast<std::ptrdiff_t>(m.cells.size());
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& cell = m.cells[static_cast<std::size_t>(i)];
    try {
      cell.outcome = evaluate(models.at(cell.train), SolverKind::make(cell.eval, data.step()), data, settle);
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw AnalysisError(error);
  return m;
}

std::vector<double> stability_polynomial(Method m) {
  switch (m) {
    case Method::EF: return {1.0, 1.0};
    case Method::MP: return {1.0, 1.0, 0.5};
    case Method::RK4: return {1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0};
  }
  return {};
}

std::complex<double> stability_function(Method m, std::complex<double> z) {
  const auto c = stability_polynomial(m);
  std::complex<double> r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * z + c[i];
  return r;
}

bool inside_stability_region(Method m, std::complex<double> z) {
  return std::abs(stability_function(m, z)) <= 1.0;
}

double real_axis_bound(Method m) {
  const auto bad = [m](double x) { return std::abs(stability_function(m, x)) > 1.0; };
  // Coarse scan for the first point left of zero that is outside.
  double inside = 0.0, outside = 0.0;
  bool found = false;
  for (int i = 1; i <= 100000; ++i) {
    const double x = -1e-3 * i;
    if (bad(x)) {
      outside = x;
      found = true;
      break;
    }
    inside = x;
  }
  if (!found) throw AnalysisError("no real-axis stability bound within [-100, 0]");
  while (inside - outside > 1e-10) {
    const double mid = 0.5 * (inside + outside);
    (bad(mid) ? outside : inside) = mid;
  }
  return inside;
}

StabilityRegion stability_region(Method m, std::size_t angles) {
  StabilityRegion region;
  region.method = m;
  region.coefficients = stability_polynomial(m);
  region.real_axis_bound = real_axis_bound(m);
  const auto& c = region.coefficients;
  const std::size_t deg = c.size() - 1;
  const double pi = std::acos(-1.0);
  for (std::size_t a = 0; a < angles; ++a) {
    const std::complex<double> w = std::polar(1.0, 2.0 * pi * static_cast<double>(a) / static_cast<double>(angles));
    // Roots of R(z) - w via the companion matrix of the monic polynomial.
    std::vector<std::complex<double>> p(c.begin(), c.end());
    p[0] -= w;
    Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(deg), static_cast<Eigen::Index>(deg));
    for (std::size_t i = 1; i < deg; ++i) comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = 1.0;
    for (std::size_t i = 0; i < deg; ++i)
      comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(deg - 1)) = -p[i] / p[deg];
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(comp);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      std::complex<double> z = es.eigenvalues()(i);
      // Newton polish on R(z) - w.
      for (int it = 0; it < 5; ++it) {
        std::complex<double> f = 0.0, df = 0.0;
        for (std::size_t k = deg + 1; k-- > 0;) {
          df = df * z + f;
          f = f * z + p[k];
        }
        if (std::abs(df) == 0.0) break;
        z -= f / df;
      }
      region.boundary.push_back(z);
    }
  }
  return region;
}

namespace {

std::vector<double> gather_inputs(const std::vector<InputSource>& srcs, std::span<const double> x,
                                  std::span<const double> u) {
  std::vector<double> in(srcs.size());
  for (std::size_t p = 0; p < srcs.size(); ++p) in[p] = srcs[p].from_state ? x[srcs[p].index] : u[srcs[p].index];
  return in;
}

void check_point(const ResidualModel& model, std::span<const double> x, std::span<const double> u) {
  if (x.size() != model.state_count()) throw StructuralError("state width does not match the model");
  if (u.size() != model.wiring.signals.size()) throw StructuralError("input width does not match the model");
}

}  // namespace

std::vector<double> model_jacobian(const ResidualModel& model, std::span<const double> x,
                                   std::span<const double> u) {
  check_point(model, x, u);
  const std::size_t n = model.state_count();
  std::vector<double> J(n * n, 0.0);
  const double one = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& srcs = model.wiring.g[i];
    const auto in = gather_inputs(srcs, x, u);
    auto [out, tape] = mlp_forward(model.g[i], in);
    const MlpGradients g = mlp_backward(model.g[i], tape, {&one, 1});
    for (std::size_t p = 0; p < srcs.size(); ++p)
      if (srcs[p].from_state) J[i * n + srcs[p].index] += g.input[p];
  }
  return J;
}

std::vector<double> model_jacobian_fd(const ResidualModel& model, std::span<const double> x,
                                      std::span<const double> u, double h) {
  check_point(model, x, u);
  const std::size_t n = model.state_count();
  std::vector<double> J(n * n);
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t j = 0; j < n; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Vec fp = model_derivative(model, xp, u), fm = model_derivative(model, xm, u);
    for (std::size_t i = 0; i < n; ++i) J[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
    xp[j] = xm[j] = x[j];
  }
  return J;
}

PoleReport model_poles(const ResidualModel& model, std::span<const double> x,
                       std::span<const double> u, double step, JacobianMode mode) {
  const auto J = mode == JacobianMode::Autodiff ? model_jacobian(model, x, u)
                                                : model_jacobian_fd(model, x, u);
  for (double v : J)
    if (!std::isfinite(v)) throw AnalysisError("model Jacobian is not finite at the operating point");
  const auto n = static_cast<Eigen::Index>(model.state_count());
  Eigen::MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) M(i, j) = J[static_cast<std::size_t>(i * n + j)];
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
  PoleReport rep;
  for (Eigen::Index i = 0; i < n; ++i) rep.scaled.push_back(es.eigenvalues()(i) * step);
  for (Method m : kAllMethods) {
    const auto idx = static_cast<std::size_t>(m);
    double worst = 0.0;
    for (const auto& z : rep.scaled) worst = std::max(worst, std::abs(stability_function(m, z)));
    rep.max_abs_r[idx] = worst;
    rep.inside[idx] = worst <= 1.0;
  }
  return rep;
}

PoleReport model_poles(const ResidualModel& model, double step) {
  const std::vector<double> x(model.state_count(), 0.0), u(model.wiring.signals.size(), 0.0);
  return model_poles(model, x, u, step);
}

TrajectoryPoles trajectory_poles(const ResidualModel& model, const SolverKind& solver,
                                 const Dataset& data) {
  const ResidualRun run = residual_sequence(model, solver, data);
  const PreparedData p = prepare(model, data);
  TrajectoryPoles tp;
  const std::size_t last = run.diverged_at ? *run.diverged_at : data.size();
  for (std::size_t k = 0; k < last && k < data.size(); ++k) {
    const PoleReport rep = model_poles(model, run.states[k], p.row(k), solver.step);
    for (Method m : kAllMethods) {
      const auto idx = static_cast<std::size_t>(m);
      if (tp.samples == 0 || rep.max_abs_r[idx] > tp.max_abs_r[idx]) {
        tp.max_abs_r[idx] = rep.max_abs_r[idx];
        tp.where[idx] = k;
        for (const auto& z : rep.scaled)
          if (std::abs(stability_function(m, z)) == rep.max_abs_r[idx]) tp.pole[idx] = z;
      }
    }
    ++tp.samples;
  }
  return tp;
}

std::vector<StepStudyRow> step_size_study(const ResidualModel& model, const Dataset& data,
                                          std::span<const double> factors, Method method,
                                          std::size_t settle) {
  const std::size_t begin = evaluation_begin(data, settle);
  std::vector<StepStudyRow> rows;
  for (double f : factors) {
    if (!(f > 0.0)) throw ParameterError("step factors must be positive");
    StepStudyRow row;
    row.factor = f;
    row.substeps = substeps_for_factor(f);
    const ResidualRun run =
        residual_sequence(model, SolverKind::make(method, data.step()), data, std::nullopt, row.substeps);
    row.residual = normalized_residual(model, run);
    row.outcome = mse(row.residual, begin, data.size(), run.diverged_at);
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* to_string(Reaction r) {
  switch (r) {
    case Reaction::Quiet: return "quiet";
    case Reaction::Ambiguous: return "ambiguous";
    case Reaction::React: return "react";
  }
  return "?";
}

Reaction classify_reaction(double score) {
  if (score > 5.0) return Reaction::React;
  if (score < 2.0) return Reaction::Quiet;
  return Reaction::Ambiguous;
}

FaultScatter fault_scatter(std::span<const ResidualModel> models, const SolverKind& solver,
                           std::span<const ScatterScenario> scenarios, std::size_t settle) {
  if (models.empty()) throw ParameterError("fault scatter needs at least one residual model");
  if (scenarios.empty()) throw ParameterError("fault scatter needs a nominal scenario");
  const std::size_t R = models.size();
  FaultScatter fs;
  for (const auto& m : models) fs.residuals.push_back(m.spec.name);

  std::vector<std::vector<std::vector<double>>> per(scenarios.size());  // scenario -> residual -> window
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const Dataset& d = *scenarios[s].data;
    fs.labels.push_back(scenarios[s].label);
    ScenarioSummary sum;
    sum.label = scenarios[s].label;
    const std::size_t begin = evaluation_begin(d, settle);
    for (const auto& m : models) {
      const ResidualRun run = residual_sequence(m, solver, d);
      if (run.diverged_at) {
        sum.usable = false;
        per[s].emplace_back();
        continue;
      }
      const auto r = normalized_residual(m, run);
      per[s].emplace_back(r.begin() + static_cast<std::ptrdiff_t>(begin), r.end());
    }
    if (sum.usable) {
      sum.count = per[s][0].size();
      sum.centroid.assign(R, 0.0);
      for (std::size_t i = 0; i < R; ++i) {
        for (double v : per[s][i]) sum.centroid[i] += v;
        sum.centroid[i] /= static_cast<double>(sum.count);
      }
      for (std::size_t k = 0; k < sum.count; ++k) {
        ScatterPoint p{s, std::vector<double>(R)};
        for (std::size_t i = 0; i < R; ++i) p.r[i] = per[s][i][k];
        fs.points.push_back(std::move(p));
      }
    }
    fs.scenarios.push_back(std::move(sum));
  }

  const ScenarioSummary& nom = fs.scenarios[0];
  if (!nom.usable) throw AnalysisError("nominal scenario diverged; separation scores undefined");
  fs.nominal_std.assign(R, 0.0);
  for (std::size_t i = 0; i < R; ++i) {
    double s2 = 0.0;
    for (double v : per[0][i]) s2 += (v - nom.centroid[i]) * (v - nom.centroid[i]);
    fs.nominal_std[i] = std::sqrt(s2 / static_cast<double>(nom.count));
    if (!(fs.nominal_std[i] > 0.0)) throw AnalysisError("nominal residual has zero spread");
  }
  for (auto& sum : fs.scenarios) {
    if (!sum.usable) continue;
    sum.scores.assign(R, 0.0);
    double d2 = 0.0;
    for (std::size_t i = 0; i < R; ++i) {
      sum.scores[i] = std::abs(sum.centroid[i] - nom.centroid[i]) / fs.nominal_std[i];
      d2 += sum.scores[i] * sum.scores[i];
    }
    sum.separation = std::sqrt(d2);
  }
  return fs;
}

namespace {

std::string outcome_fields(const EvalOutcome& o) {
  return (o.diverged ? std::string("") : format_double(o.mse)) + "," + (o.diverged ? "1" : "0") +
         "," + (o.diverged_at ? std::to_string(*o.diverged_at) : std::string(""));
}

}  // namespace

std::string cross_eval_csv(std::span<const CrossEvalMatrix> matrices) {
  std::string out = "residual,train_solver,eval_solver,mse,diverged,diverged_at\n";
  for (const auto& m : matrices)
    for (const auto& c : m.cells)
      out += m.residual + "," + to_string(c.train) + "," + to_string(c.eval) + "," +
             outcome_fields(c.outcome) + "\n";
  return out;
}

std::string stability_csv(std::span<const StabilityRegion> regions) {
  std::string out = "method,real_axis_bound,coefficients\n";
  for (const auto& r : regions) {
    std::string coeffs;
    for (std::size_t i = 0; i < r.coefficients.size(); ++i)
      coeffs += (i ? " " : "") + format_double(r.coefficients[i]);
    out += std::string(to_string(r.method)) + "," + format_double(r.real_axis_bound) + "," + coeffs + "\n";
  }
  return out;
}

std::string stability_boundary_csv(std::span<const StabilityRegion> regions) {
  std::string out = "method,re,im\n";
  for (const auto& r : regions)
    for (const auto& z : r.boundary)
      out += std::string(to_string(r.method)) + "," + format_double(z.real()) + "," + format_double(z.imag()) + "\n";
  return out;
}

std::string step_study_csv(const std::string& residual, std::span<const StepStudyRow> rows) {
  std::string out = "residual,factor,substeps,mse,diverged,diverged_at\n";
  for (const auto& r : rows)
    out += residual + "," + format_double(r.factor) + "," + std::to_string(r.substeps) + "," +
           outcome_fields(r.outcome) + "\n";
  return out;
}

std::string scatter_csv(const FaultScatter& fs) {
  std::string out;
  for (const auto& name : fs.residuals) out += name + ",";
  out += "label\n";
  for (const auto& p : fs.points) {
    for (double v : p.r) out += format_double(v) + ",";
    out += fs.labels[p.scenario] + "\n";
  }
  return out;
}

std::string scatter_summary_csv(const FaultScatter& fs) {
  std::string out = "label,usable,count";
  for (const auto& n : fs.residuals) out += ",centroid_" + n;
  for (const auto& n : fs.residuals) out += ",score_" + n;
  for (const auto& n : fs.residuals) out += ",reaction_" + n;
  out += ",separation\n";
  for (const auto& s : fs.scenarios) {
    out += s.label + "," + (s.usable ? "1" : "0") + "," + std::to_string(s.count);
    for (std::size_t i = 0; i < fs.residuals.size(); ++i)
      out += "," + (s.usable ? format_double(s.centroid[i]) : std::string());
    for (std::size_t i = 0; i < fs.residuals.size(); ++i)
      out += "," + (s.usable ? format_double(s.scores[i]) : std::string());
    for (std::size_t i = 0; i < fs.residuals.size(); ++i)
      out += "," + (s.usable ? std::string(to_string(classify_reaction(s.scores[i]))) : std::string());
    out += "," + (s.usable ? format_double(s.separation) : std::string()) + "\n";
  }
  return out;
}

}  // namespace noderes
