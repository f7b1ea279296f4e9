#pragma once

// Discretize-then-optimize training: the residual model is unrolled with the
// chosen explicit solver over short windows and the Huber prediction loss is
// backpropagated through every solver stage.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "noderes/dataset.hpp"
#include "noderes/residual.hpp"
#include "noderes/rng.hpp"
#include "noderes/solvers.hpp"

namespace noderes {

struct StateStats {
  double mean = 0.0;
  double variance = 1.0;
};

struct TrainConfig {
  SolverKind solver{Method::RK4, 0.2};
  std::size_t seq_len = 400;
  std::size_t batch_size = 8;
  std::size_t batches_per_epoch = 16;
  std::size_t epochs = 300;
  double learning_rate = 1e-3;
  double huber_delta = 1.0;
  std::uint64_t seed = 0;
  // Per-state initial-state distribution in normalized units; empty means N(0, 1).
  std::vector<StateStats> initial_state;
  double loss_cap = 1e3;
  // Validation loss skips this many samples after dosing stops.
  std::size_t settle = 50;
  bool parallel = true;

  // Throws ParameterError.
  void validate(std::size_t data_length) const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

// --- sampling ---------------------------------------------------------------

// Deterministic stream of batches of window offsets, uniform over [0, length - seq_len].
class BatchSampler {
 public:
  BatchSampler(std::size_t length, std::size_t seq_len, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::size_t max_offset() const { return max_offset_; }

 private:
  std::size_t max_offset_;
  std::size_t batch_size_;
  Rng rng_;
};

std::vector<std::vector<std::size_t>> make_batches(std::size_t length, std::size_t seq_len,
                                                   std::size_t batch_size, std::size_t count,
                                                   std::uint64_t seed);

std::vector<double> sample_initial_state(std::span<const StateStats> stats, Rng& rng);
std::vector<double> sample_initial_state(std::span<const StateStats> stats, std::uint64_t seed);
// The mean, exactly; no randomness involved.
std::vector<double> inference_initial_state(std::span<const StateStats> stats);

// --- optimizer --------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n);
};

// Bias-corrected Adam; throws StructuralError on any size mismatch.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);

// --- parameter packing ------------------------------------------------------

// All sub-network parameters back to back (g_0 ... g_{n-1}, h).
std::vector<double> flatten_parameters(const ResidualModel& model);
void assign_parameters(ResidualModel& model, std::span<const double> flat);

// --- unrolled loss ----------------------------------------------------------

// Reusable buffers for one window at a time. Not thread-safe; use one per thread.
class Unroller {
 public:
  // Mean Huber loss of h(x_k) - y_ref over samples [loss_begin, len) of the
  // window starting at `offset`, or nullopt if the state diverges. When `grad`
  // is non-empty it is overwritten with d loss / d parameters (flat layout).
  std::optional<double> run(const ResidualModel& model, const PreparedData& data,
                            std::size_t offset, std::size_t len, std::span<const double> x0,
                            Method method, double step, double delta, std::span<double> grad,
                            std::size_t loss_begin = 0);

 private:
  std::vector<double> states_;
  std::vector<std::vector<double>> g_records_;
  std::vector<double> h_records_;
  std::vector<double> out_grad_;
  std::vector<double> stage_k_, stage_x_, stage_u_, net_in_;
  std::vector<double> xbar_, xnew_, kbar_, stage_xbar_, in_grad_, scratch_;
};

struct BatchResult {
  double loss = 0.0;               // mean window loss, diverged windows at the cap
  std::vector<double> grad;        // mean gradient, diverged windows contribute zero
  std::size_t diverged = 0;
};

struct BatchWindow {
  std::size_t offset = 0;
  std::vector<double> x0;
};

BatchResult batch_gradient_serial(const ResidualModel& model, const PreparedData& data,
                                  std::span<const BatchWindow> windows, const TrainConfig& cfg);
// Same arithmetic, windows spread over OpenMP threads, reduced in window order:
// the result is bit-identical to the serial version.
BatchResult batch_gradient_parallel(const ResidualModel& model, const PreparedData& data,
                                    std::span<const BatchWindow> windows, const TrainConfig& cfg);

// Huber loss of a free run over the dataset from the mean initial state,
// scored after dosing stops plus `settle` samples. +inf if the run diverges.
double validation_loss(const ResidualModel& model, const Dataset& data, const TrainConfig& cfg);

// --- training loop ----------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t diverged_windows = 0;
};

struct TrainResult {
  ResidualModel model;
  std::vector<EpochStats> history;
  double initial_val_loss = 0.0;
};

// Normalization is taken from `train_data`; validation uses `val_data` (or the
// training data when null). Throws TrainingFailure when more than half of an
// epoch's windows diverge.
TrainResult train(ResidualModel model, const Dataset& train_data, const Dataset* val_data,
                  const TrainConfig& cfg);

struct SeedRun {
  std::uint64_t seed = 0;
  double val_loss = 0.0;
  bool failed = false;
  std::string failure;
};

struct BestOfSeeds {
  TrainResult best;
  std::size_t best_index = 0;
  std::vector<SeedRun> runs;
};

// Trains `seeds` independently initialized models and keeps the lowest validation loss.
BestOfSeeds train_best_of(const ResidualSpec& spec, std::span<const std::size_t> hidden,
                          const Dataset& train_data, const Dataset& val_data,
                          const TrainConfig& cfg, std::size_t seeds);

std::string history_to_csv(std::span<const EpochStats> history);

}  // namespace noderes
