#pragma once

// Reverse-mode differentiation for small feed-forward networks.
//
// A forward pass writes every intermediate it needs into a flat "record"
// (input, then per layer the pre-activation z and activation a). The backward
// pass replays that record in reverse. The span-based kernels are what the
// solver unrolling uses; Tape/mlp_forward/mlp_backward wrap them for callers
// that want value semantics.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "noderes/rng.hpp"

namespace noderes {

enum class Activation { Elu, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

// ELU with alpha = 1.
double elu(double x);
// Derivative of elu expressed through its output a = elu(z).
inline double elu_grad_from_output(double z, double a) { return z > 0.0 ? 1.0 : a + 1.0; }

// Huber loss; throws ParameterError if delta <= 0.
double huber(double error, double delta);
// d huber / d error.
double huber_grad(double error, double delta);

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::Identity;
  std::size_t weight_offset = 0;  // row-major out x in
  std::size_t bias_offset = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

class MlpParams {
 public:
  MlpParams() = default;

  // widths = {input, hidden..., output}. Hidden layers use ELU, the head is identity.
  static MlpParams zeros(std::span<const std::size_t> widths);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, zero biases.
  static MlpParams glorot(std::span<const std::size_t> widths, Rng& rng);

  void add_layer(std::size_t in, std::size_t out, Activation activation,
                 std::span<const double> weight, std::span<const double> bias);

  // Throws StructuralError on broken chaining, non-finite entries or a non-identity head.
  void validate() const;

  bool empty() const { return layers_.empty(); }
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t max_width() const;
  std::size_t parameter_count() const { return values_.size(); }
  const std::vector<LayerShape>& layers() const { return layers_; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> weight(std::size_t layer);
  std::span<const double> weight(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  // Same layout, all values zero. Used for gradient accumulators.
  MlpParams zeros_like() const;
  bool same_shape(const MlpParams& other) const;

  // Number of doubles a forward record for this network occupies.
  std::size_t record_size() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;

 private:
  std::vector<LayerShape> layers_;
  std::vector<double> values_;
};

// --- span kernels -----------------------------------------------------------

// record.size() must equal params.record_size().
void forward_record(const MlpParams& params, std::span<const double> input,
                    std::span<double> record);

std::span<const double> record_output(const MlpParams& params, std::span<const double> record);

// Accumulates d(upstream . output)/d(params) into param_grad (layout of params.values())
// and overwrites input_grad (may be empty when not needed). scratch needs 2 * max_width().
void backward_record(const MlpParams& params, std::span<const double> record,
                     std::span<const double> upstream, std::span<double> param_grad,
                     std::span<double> input_grad, std::span<double> scratch);

// --- value API --------------------------------------------------------------

class Tape {
 public:
  Tape() = default;
  const MlpParams* params() const { return params_; }
  std::span<const double> record() const { return record_; }
  std::span<const double> output() const;

 private:
  friend std::pair<std::vector<double>, Tape> mlp_forward(const MlpParams&,
                                                          std::span<const double>);
  const MlpParams* params_ = nullptr;
  std::size_t record_size_ = 0;
  std::vector<double> record_;
};

std::pair<std::vector<double>, Tape> mlp_forward(const MlpParams& params,
                                                 std::span<const double> input);

struct MlpGradients {
  MlpParams params;
  std::vector<double> input;
};

// Throws StructuralError for an empty tape or an upstream of the wrong width.
MlpGradients mlp_backward(const Tape& tape, std::span<const double> upstream);
// As above, additionally checking that the tape was recorded against `params`.
MlpGradients mlp_backward(const MlpParams& params, const Tape& tape,
                          std::span<const double> upstream);

// --- serialization ----------------------------------------------------------

nlohmann::json mlp_to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace noderes
