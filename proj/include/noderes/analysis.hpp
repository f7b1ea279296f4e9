#pragma once

// Post-training analyses: solver cross-evaluation, stability regions, model
// poles, step-size study and residual-space fault scatter. Everything here is a
// pure function of immutable trained models and datasets.

#include <array>
#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noderes/dataset.hpp"
#include "noderes/residual.hpp"
#include "noderes/solvers.hpp"

namespace noderes {

// Samples skipped after dosing stops before residuals are scored.
inline constexpr std::size_t kDefaultSettle = 50;

struct EvalOutcome {
  double mse = 0.0;  // meaningless when diverged
  bool diverged = false;
  std::optional<std::size_t> diverged_at;

  friend bool operator==(const EvalOutcome&, const EvalOutcome&) = default;
};

// Mean of r[k]^2 over [begin, end). A divergence index inside or before the
// window marks the result diverged.
EvalOutcome mse(std::span<const double> r, std::size_t begin, std::size_t end,
                std::optional<std::size_t> diverged_at = std::nullopt);

// First scored sample: start of the trailing DC == 0 run plus `settle`.
std::size_t evaluation_begin(const Dataset& data, std::size_t settle = kDefaultSettle);

// Residual divided by the reference signal's training std.
std::vector<double> normalized_residual(const ResidualModel& model, const ResidualRun& run);

// Normalized-residual MSE of a free run under `solver` over the evaluation window.
EvalOutcome evaluate(const ResidualModel& model, const SolverKind& solver, const Dataset& data,
                     std::size_t settle = kDefaultSettle, int substeps = 1);

struct CrossEvalCell {
  Method train = Method::EF;
  Method eval = Method::EF;
  EvalOutcome outcome;
};

struct CrossEvalMatrix {
  std::string residual;
  std::vector<CrossEvalCell> cells;  // row-major: train solver, then eval solver

  const EvalOutcome& at(Method train, Method eval) const;
};

// `models` maps the training solver to its trained model; every pair of
// training and evaluation solver is scored on `data` at its own sample time.
CrossEvalMatrix cross_eval(const std::map<Method, ResidualModel>& models, const Dataset& data,
                           std::size_t settle = kDefaultSettle);

// --- stability --------------------------------------------------------------

// Ascending coefficients of R(z).
std::vector<double> stability_polynomial(Method m);
std::complex<double> stability_function(Method m, std::complex<double> z);
bool inside_stability_region(Method m, std::complex<double> z);

// Most negative real z with |R| <= 1 on [z, 0], located to 1e-9.
double real_axis_bound(Method m);

struct StabilityRegion {
  Method method = Method::EF;
  std::vector<double> coefficients;
  std::vector<std::complex<double>> boundary;  // |R| = 1 points, traced by angle
  double real_axis_bound = 0.0;
};

StabilityRegion stability_region(Method m, std::size_t angles = 360);

// --- poles ------------------------------------------------------------------

// d g / d x, row-major n x n, at a normalized state/input pair.
std::vector<double> model_jacobian(const ResidualModel& model, std::span<const double> x,
                                   std::span<const double> u);
std::vector<double> model_jacobian_fd(const ResidualModel& model, std::span<const double> x,
                                      std::span<const double> u, double h = 1e-6);

struct PoleReport {
  std::vector<std::complex<double>> scaled;  // eigenvalues times T
  std::array<double, 3> max_abs_r{};         // per method (EF, MP, RK4): max |R(lambda T)|
  std::array<bool, 3> inside{};              // all poles inside the method's region

  double worst(Method m) const { return max_abs_r[static_cast<std::size_t>(m)]; }
  bool stable_under(Method m) const { return inside[static_cast<std::size_t>(m)]; }
};

enum class JacobianMode { Autodiff, FiniteDifference };

// Throws AnalysisError for a non-finite Jacobian.
PoleReport model_poles(const ResidualModel& model, std::span<const double> x,
                       std::span<const double> u, double step,
                       JacobianMode mode = JacobianMode::Autodiff);
// Mean state and mean inputs: zero in normalized units.
PoleReport model_poles(const ResidualModel& model, double step);

struct TrajectoryPoles {
  std::array<double, 3> max_abs_r{};          // per method, over all visited samples
  std::array<std::size_t, 3> where{};         // sample achieving it
  std::array<std::complex<double>, 3> pole{};  // the responsible lambda T
  std::size_t samples = 0;
};

// Poles along the free run of `model` under `solver` on `data`.
TrajectoryPoles trajectory_poles(const ResidualModel& model, const SolverKind& solver,
                                 const Dataset& data);

// --- step-size study --------------------------------------------------------

struct StepStudyRow {
  double factor = 1.0;
  int substeps = 1;
  EvalOutcome outcome;
  std::vector<double> residual;  // normalized, at the original sample instants
};

// Re-runs the model with `method` at step T * factor (factor = 1/m) and scores
// at the original sample instants.
std::vector<StepStudyRow> step_size_study(const ResidualModel& model, const Dataset& data,
                                          std::span<const double> factors,
                                          Method method = Method::EF,
                                          std::size_t settle = kDefaultSettle);

// --- fault scatter ----------------------------------------------------------

struct ScatterScenario {
  std::string label;
  const Dataset* data = nullptr;
};

enum class Reaction { Quiet, Ambiguous, React };
const char* to_string(Reaction r);
// > 5 reacts, < 2 is quiet, anything between is ambiguous.
Reaction classify_reaction(double score);

struct ScenarioSummary {
  std::string label;
  bool usable = true;
  std::size_t count = 0;
  std::vector<double> centroid;   // normalized residual units
  std::vector<double> scores;     // |centroid - nominal centroid| / nominal std, per residual
  double separation = 0.0;        // Euclidean distance in nominal-std units
};

struct ScatterPoint {
  std::size_t scenario = 0;
  std::vector<double> r;
};

struct FaultScatter {
  std::vector<std::string> residuals;
  std::vector<std::string> labels;  // scenario labels in input order
  std::vector<ScatterPoint> points;
  std::vector<ScenarioSummary> scenarios;
  std::vector<double> nominal_std;
};

// The first scenario is the nominal reference. All models are run with `solver`.
FaultScatter fault_scatter(std::span<const ResidualModel> models, const SolverKind& solver,
                           std::span<const ScatterScenario> scenarios,
                           std::size_t settle = kDefaultSettle);

// --- CSV --------------------------------------------------------------------

std::string cross_eval_csv(std::span<const CrossEvalMatrix> matrices);
std::string stability_csv(std::span<const StabilityRegion> regions);
std::string stability_boundary_csv(std::span<const StabilityRegion> regions);
std::string step_study_csv(const std::string& residual, std::span<const StepStudyRow> rows);
std::string scatter_csv(const FaultScatter& scatter);
std::string scatter_summary_csv(const FaultScatter& scatter);

}  // namespace noderes
