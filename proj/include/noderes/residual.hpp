#pragma once

// Grey-box residual generators.
//
// A ResidualSpec says which signals and states feed each state-derivative network
// g_i and the output network h, and which measurement the prediction is compared
// against. Specs are plain data; three wirings ship built in and user wirings use
// the same text format:
//
//   # comment
//   name = r1
//   states = p_du
//   g_inputs.p_du = p_du, y_p_ap, DC
//   estimate.p_du = y_p_du        (optional when a signal named y_<state> exists)
//   h_inputs = p_du
//   reference = y_p_du
//
// Every state is carried in the normalized units of its estimate signal; the
// networks see standardized signals and the residual is reported in the
// reference signal's physical units.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "noderes/autodiff.hpp"
#include "noderes/dataset.hpp"
#include "noderes/solvers.hpp"

namespace noderes {

struct ResidualSpec {
  std::string name;
  std::vector<std::string> states;
  std::vector<std::vector<std::string>> g_inputs;  // one list per state
  std::vector<std::string> estimates;              // one signal per state
  std::vector<std::string> h_inputs;
  std::string reference;

  // Throws SpecError naming the offending entry.
  void validate() const;

  nlohmann::json to_json() const;
  static ResidualSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ResidualSpec&, const ResidualSpec&) = default;
};

std::vector<ResidualSpec> builtin_specs();
// "r1", "r2" or "r3".
ResidualSpec builtin_spec(std::string_view id);
ResidualSpec parse_spec(std::string_view text, const std::string& source = "<spec>");
std::string format_spec(const ResidualSpec& spec);
// Built-in id or path to a spec file.
ResidualSpec resolve_spec(const std::string& id_or_path);

struct InputSource {
  bool from_state = false;
  std::size_t index = 0;  // state index, or position in Wiring::signals
};

struct Wiring {
  std::vector<std::string> signals;  // dataset signals read by any network, first-use order
  std::vector<std::vector<InputSource>> g;
  std::vector<InputSource> h;
};

Wiring compile_wiring(const ResidualSpec& spec);

struct Provenance {
  std::string solver;
  double step = 0.0;
  std::uint64_t seed = 0;
  std::string normalization;
  nlohmann::json config;  // training hyperparameters
};

struct ResidualModel {
  ResidualSpec spec;
  Wiring wiring;
  std::vector<MlpParams> g;
  MlpParams h;
  std::map<std::string, SignalStats> normalization;
  std::optional<Provenance> provenance;

  std::size_t state_count() const { return spec.states.size(); }
  // g_0 ... g_{n-1}, h
  std::vector<const MlpParams*> networks() const;
  std::vector<MlpParams*> networks();
  std::size_t parameter_count() const;

  SignalStats stats_for(const std::string& signal) const;
  SignalStats reference_stats() const { return stats_for(spec.reference); }
};

inline constexpr double kDerivativeHeadScale = 0.1;

// Hidden layout must be non-empty. Normalization starts as the identity.
// Every layer is Glorot-initialized; derivative-network heads are then scaled
// by kDerivativeHeadScale.
ResidualModel build_model(const ResidualSpec& spec, std::span<const std::size_t> hidden,
                          std::uint64_t seed);

// Standardized model inputs for every sample, row-major (rows x wiring.signals.size()),
// plus the standardized and raw reference signal.
struct PreparedData {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> inputs;
  std::vector<double> reference;
  std::vector<double> reference_raw;

  std::span<const double> row(std::size_t k) const { return {inputs.data() + k * width, width}; }
};

PreparedData prepare(const ResidualModel& model, const Dataset& data);

// Normalized state derivative and normalized output prediction.
Vec model_derivative(const ResidualModel& model, std::span<const double> x,
                     std::span<const double> u);
double model_output(const ResidualModel& model, std::span<const double> x,
                    std::span<const double> u);

struct ResidualRun {
  std::vector<double> r;          // physical units of the reference
  std::vector<double> predicted;  // physical units
  std::vector<Vec> states;        // normalized
  std::optional<std::size_t> diverged_at;
};

// Simulates the model with `solver` from x0 (normalized; defaults to the
// estimate means, i.e. zero) and forms r[k] = h(x_k) - y_ref[k].
ResidualRun residual_sequence(const ResidualModel& model, const SolverKind& solver,
                              const Dataset& data,
                              std::optional<std::vector<double>> x0 = std::nullopt,
                              int substeps = 1);

nlohmann::json model_to_json(const ResidualModel& model);
ResidualModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const ResidualModel& model);
ResidualModel load_model(const std::filesystem::path& path);

}  // namespace noderes
