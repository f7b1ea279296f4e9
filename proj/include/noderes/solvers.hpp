#pragma once

// Fixed-step explicit Runge-Kutta integration over sampled inputs.
//
// Every method is described by its Butcher tableau; the same tableau drives the
// plain steppers here and the differentiable unrolling used for training, so the
// two cannot drift apart. Stage inputs at c = 1/2 use the linear midpoint of the
// bracketing samples; c = 1 uses the next sample. At the final sample the next
// input is the last one held (zero-order hold at the boundary).

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace noderes {

enum class Method { EF, MP, RK4 };

const char* to_string(Method m);
// Accepts "ef", "mp", "rk4" (case-insensitive).
Method method_from_string(const std::string& name);
inline constexpr std::array<Method, 3> kAllMethods{Method::EF, Method::MP, Method::RK4};

struct Tableau {
  int stages = 0;
  std::array<std::array<double, 4>, 4> a{};
  std::array<double, 4> b{};
  std::array<double, 4> c{};
};

const Tableau& tableau(Method m);

struct SolverKind {
  Method method = Method::RK4;
  double step = 0.0;  // seconds

  // Throws ParameterError unless step > 0 and finite.
  static SolverKind make(Method method, double step);
  int order() const;
};

// A trajectory is declared diverged once any state exceeds this magnitude or is non-finite.
inline constexpr double kDivergenceBound = 1e9;
bool state_diverged(std::span<const double> x);

using Vec = std::vector<double>;
// State derivative f(x, u) and output map h(x, u).
using Derivative = std::function<Vec(std::span<const double>, std::span<const double>)>;
using OutputMap = Derivative;

// Stage derivatives k1..k_s of one step; lower-order methods carry fewer entries.
struct StageValues {
  std::vector<Vec> k;
};

Vec interpolate_midpoint(std::span<const double> u_k, std::span<const double> u_next);

// One step of any tableau. Inputs for intermediate stages are built from u_k and u_next.
Vec rk_step(const Derivative& f, const Tableau& tab, std::span<const double> x,
            std::span<const double> u_k, std::span<const double> u_next, double step,
            StageValues* stages = nullptr);

Vec step_ef(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
            double step);
Vec step_mp(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
            std::span<const double> u_next, double step);
Vec step_rk4(const Derivative& f, std::span<const double> x, std::span<const double> u_k,
             std::span<const double> u_next, double step);

struct Trajectory {
  std::vector<Vec> states;   // states[0] = x0; one more than steps taken
  std::vector<Vec> outputs;  // outputs[k] = h(states[k], inputs[k])
  std::optional<std::size_t> diverged_at;  // index of the first invalid state
};

// Integrates over `inputs` (one row per sample, spaced solver.step apart). With
// substeps = m > 1 the integrator runs at step/m on inputs linearly interpolated
// to the finer grid; states are still reported at the original sample instants.
// For N input rows the result has N + 1 states and N outputs unless it diverges.
Trajectory simulate(const Derivative& f, const OutputMap& h, const SolverKind& solver,
                    std::span<const double> x0, const std::vector<Vec>& inputs,
                    int substeps = 1);

// Resamples rows onto a grid `substeps` times finer; the last row is held beyond the end.
std::vector<Vec> refine_inputs(const std::vector<Vec>& inputs, int substeps);

// Converts a step-size factor (e.g. 0.5) into an integer substep count; throws
// ParameterError unless 1/factor is a positive integer.
int substeps_for_factor(double factor);

}  // namespace noderes
