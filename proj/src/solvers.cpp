#include "noderes/solvers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "noderes/errors.hpp"

namespace noderes {

const char* to_string(Method m) {
  switch (m) {
    case Method::EF: return "ef";
    case Method::MP: return "mp";
    case Method::RK4: return "rk4";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "ef") return Method::EF;
  if (lower == "mp") return Method::MP;
  if (lower == "rk4") return Method::RK4;
  throw ParameterError("unknown solver '" + name + "' (expected ef, mp or rk4)");
}

const Tableau& tableau(Method m) {
  static const Tableau ef = [] {
    Tableau t;
    t.stages = 1;
    t.b = {1.0};
    return t;
  }();
  static const Tableau mp = [] {
    Tableau t;
    t.stages = 2;
    t.a[1][0] = 0.5;
    t.b = {0.0, 1.0};
    t.c = {0.0, 0.5};
    return t;
  }();
  static const Tableau rk4 = [] {
    Tableau t;
    t.stages = 4;
    t.a[1][0] = 0.5;
    t.a[2][1] = 0.5;
    t.a[3][2] = 1.0;
    t.b = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
    t.c = {0.0, 0.5, 0.5, 1.0};
    return t;
  }();
  switch (m) {
    case Method::EF: return ef;
    case Method::MP: return mp;
    case Method::RK4: return rk4;
  }
  return rk4;
}

SolverKind SolverKind::make(Method method, double step) {
  if (!(step > 0.0) || !std::isfinite(step))
    throw ParameterError("solver step size must be positive and finite");
  return SolverKind{method, step};
}

int SolverKind::order() const {
  switch (method) {
    case Method::EF: return 1;
    case Method::MP: return 2;
    case Method::RK4: return 4;
  }
  return 0;
}

bool state_diverged(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) return true;
  return false;
}

Vec interpolate_midpoint(std::span<const double> u_k, std::span<const double> u_next) {
  if (u_k.size() != u_next.size())
    throw StructuralError("interpolate_midpoint: input widths differ");
  Vec mid(u_k.size());
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (u_k[i] + u_next[i]);
  return mid;
}

Vec rk_step(const Derivative& f, const Tableau& tab, std::span<const double> x,
            std::span<const double> u_k, std::span<const double> u_next, double step,
            StageValues* stages) {
  const std::size_t n = x.size();
  std::vector<Vec> k(static_cast<std::size_t>(tab.stages));
  Vec mid;
  Vec xs(n);
  for (int j = 0; j < tab.stages; ++j) {
    std::copy(x.begin(), x.end(), xs.begin());
    for (int l = 0; l < j; ++l) {
      const double a = tab.a[j][l];
      if (a == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) xs[i] += step * a * k[l][i];
    }
    std::span<const double> u = u_k;
    if (tab.c[j] == 1.0) {
      u = u_next;
    } else if (tab.c[j] != 0.0) {
      if (mid.empty()) mid = interpolate_midpoint(u_k, u_next);
      u = mid;
    }
    k[j] = f(xs, u);
    if (k[j].size() != n) throw StructuralError("derivative width does not match state width");
  }
  Vec next(n);
  for (std::size_t i = 0; i < n; ++i) {
    double incr = 0.0;
    for (int j = 0; j < tab.stages; ++j)
      if (tab.b[j] != 0.0) incr += tab.b[j] * k[j][i];
    next[i] = x[i] + step * incr;
  }
  if (stages) stages->k = std::move(k);
  return next;
}

Vec step_ef(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
            double step) {
  return rk_step(f, tableau(Method::EF), x, u_k, u_k, step);
}

Vec step_mp(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
            std::span<const double> u_next, double step) {
  return rk_step(f, tableau(Method::MP), x, u_k, u_next, step);
}

Vec step_rk4(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
             std::span<const double> u_next, double step) {
  return rk_step(f, tableau(Method::RK4), x, u_k, u_next, step);
}

std::vector<Vec> refine_inputs(const std::vector<Vec>& inputs, int substeps) {
  if (substeps < 1) throw ParameterError("substeps must be >= 1");
  if (substeps == 1) return inputs;
  std::vector<Vec> fine;
  fine.reserve(inputs.size() * static_cast<std::size_t>(substeps));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Vec& a = inputs[k];
    const Vec& b = k + 1 < inputs.size() ? inputs[k + 1] : inputs[k];
    for (int s = 0; s < substeps; ++s) {
      const double frac = static_cast<double>(s) / substeps;
      Vec row(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) row[i] = (1.0 - frac) * a[i] + frac * b[i];
      fine.push_back(std::move(row));
    }
  }
  return fine;
}

int substeps_for_factor(double factor) {
  if (!(factor > 0.0) || factor > 1.0)
    throw ParameterError("step factor must lie in (0, 1]");
  const double inv = 1.0 / factor;
  const double m = std::round(inv);
  if (std::abs(inv - m) > 1e-9)
    throw ParameterError("step factor must be the reciprocal of a positive integer");
  return static_cast<int>(m);
}

Trajectory simulate(const Derivative& f, const OutputMap& h, const SolverKind& solver,
                    std::span<const double> x0, const std::vector<Vec>& inputs, int substeps) {
  Trajectory traj;
  if (inputs.empty()) {
    traj.states.emplace_back(x0.begin(), x0.end());
    return traj;
  }
  const Tableau& tab = tableau(solver.method);
  const std::vector<Vec> fine_storage =
      substeps == 1 ? std::vector<Vec>{} : refine_inputs(inputs, substeps);
  const std::vector<Vec>& fine = substeps == 1 ? inputs : fine_storage;
  const double dt = solver.step / substeps;

  Vec x(x0.begin(), x0.end());
  traj.states.push_back(x);
  if (state_diverged(x)) {
    traj.diverged_at = 0;
    traj.states.clear();
    return traj;
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    traj.outputs.push_back(h(x, inputs[k]));
    for (int s = 0; s < substeps; ++s) {
      const std::size_t j = k * static_cast<std::size_t>(substeps) + static_cast<std::size_t>(s);
      const Vec& u = fine[j];
      const Vec& u_next = j + 1 < fine.size() ? fine[j + 1] : fine[j];
      x = rk_step(f, tab, x, u, u_next, dt);
      if (state_diverged(x)) {
        traj.diverged_at = k + 1;
        return traj;
      }
    }
    traj.states.push_back(x);
  }
  return traj;
}

}  // namespace noderes
