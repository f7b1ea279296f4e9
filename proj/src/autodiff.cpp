#include "noderes/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "noderes/errors.hpp"

namespace noderes {

const char* to_string(Activation a) { return a == Activation::Elu ? "elu" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "elu") return Activation::Elu;
  if (name == "identity") return Activation::Identity;
  throw StructuralError("unknown activation '" + name + "'");
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

double huber(double error, double delta) {
  if (!(delta > 0.0)) throw ParameterError("huber: delta must be positive");
  const double a = std::abs(error);
  return a <= delta ? 0.5 * error * error : delta * (a - 0.5 * delta);
}

double huber_grad(double error, double delta) {
  if (!(delta > 0.0)) throw ParameterError("huber: delta must be positive");
  return std::clamp(error, -delta, delta);
}

MlpParams MlpParams::zeros(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw StructuralError("an MLP needs at least input and output widths");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    if (in == 0 || out == 0) throw StructuralError("layer widths must be positive");
    std::vector<double> w(in * out, 0.0), b(out, 0.0);
    const bool head = l + 2 == widths.size();
    p.add_layer(in, out, head ? Activation::Identity : Activation::Elu, w, b);
  }
  return p;
}

MlpParams MlpParams::glorot(std::span<const std::size_t> widths, Rng& rng) {
  MlpParams p = zeros(widths);
  for (std::size_t l = 0; l < p.layers_.size(); ++l) {
    const auto& s = p.layers_[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (double& w : p.weight(l)) w = rng.uniform(-limit, limit);
  }
  return p;
}

void MlpParams::add_layer(std::size_t in, std::size_t out, Activation activation,
                          std::span<const double> weight, std::span<const double> bias) {
  if (weight.size() != in * out || bias.size() != out)
    throw StructuralError("layer arrays do not match " + std::to_string(out) + "x" +
                          std::to_string(in));
  if (!layers_.empty() && layers_.back().out != in)
    throw StructuralError("layer input width " + std::to_string(in) +
                          " does not chain with previous output width " +
                          std::to_string(layers_.back().out));
  LayerShape s{in, out, activation, values_.size(), values_.size() + in * out};
  values_.insert(values_.end(), weight.begin(), weight.end());
  values_.insert(values_.end(), bias.begin(), bias.end());
  layers_.push_back(s);
}

void MlpParams::validate() const {
  if (layers_.empty()) throw StructuralError("MLP has no layers");
  for (std::size_t l = 1; l < layers_.size(); ++l)
    if (layers_[l - 1].out != layers_[l].in) throw StructuralError("layer widths do not chain");
  if (layers_.back().activation != Activation::Identity)
    throw StructuralError("final layer must use the identity activation");
  for (double v : values_)
    if (!std::isfinite(v)) throw StructuralError("MLP contains a non-finite parameter");
}

std::size_t MlpParams::input_width() const { return layers_.empty() ? 0 : layers_.front().in; }
std::size_t MlpParams::output_width() const { return layers_.empty() ? 0 : layers_.back().out; }

std::size_t MlpParams::max_width() const {
  std::size_t w = input_width();
  for (const auto& s : layers_) w = std::max(w, s.out);
  return w;
}

std::span<double> MlpParams::weight(std::size_t l) {
  return std::span<double>(values_).subspan(layers_.at(l).weight_offset,
                                            layers_[l].in * layers_[l].out);
}
std::span<const double> MlpParams::weight(std::size_t l) const {
  return std::span<const double>(values_).subspan(layers_.at(l).weight_offset,
                                                  layers_[l].in * layers_[l].out);
}
std::span<double> MlpParams::bias(std::size_t l) {
  return std::span<double>(values_).subspan(layers_.at(l).bias_offset, layers_[l].out);
}
std::span<const double> MlpParams::bias(std::size_t l) const {
  return std::span<const double>(values_).subspan(layers_.at(l).bias_offset, layers_[l].out);
}

MlpParams MlpParams::zeros_like() const {
  MlpParams p = *this;
  std::fill(p.values_.begin(), p.values_.end(), 0.0);
  return p;
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto &a = layers_[l], &b = other.layers_[l];
    if (a.in != b.in || a.out != b.out || a.activation != b.activation) return false;
  }
  return true;
}

std::size_t MlpParams::record_size() const {
  std::size_t n = input_width();
  for (const auto& s : layers_) n += 2 * s.out;
  return n;
}

void forward_record(const MlpParams& params, std::span<const double> input,
                    std::span<double> record) {
  const auto& layers = params.layers();
  std::copy(input.begin(), input.end(), record.begin());
  std::size_t in_off = 0;
  std::size_t off = input.size();
  const double* values = params.values().data();
  for (const auto& s : layers) {
    const double* x = record.data() + in_off;
    double* z = record.data() + off;
    double* a = z + s.out;
    const double* w = values + s.weight_offset;
    const double* b = values + s.bias_offset;
    for (std::size_t j = 0; j < s.out; ++j) {
      const double* row = w + j * s.in;
      double acc = b[j];
      for (std::size_t i = 0; i < s.in; ++i) acc += row[i] * x[i];
      z[j] = acc;
    }
    if (s.activation == Activation::Elu) {
      for (std::size_t j = 0; j < s.out; ++j) a[j] = elu(z[j]);
    } else {
      std::copy(z, z + s.out, a);
    }
    in_off = off + s.out;
    off += 2 * s.out;
  }
}

std::span<const double> record_output(const MlpParams& params, std::span<const double> record) {
  const std::size_t out = params.output_width();
  return record.subspan(record.size() - out, out);
}

void backward_record(const MlpParams& params, std::span<const double> record,
                     std::span<const double> upstream, std::span<double> param_grad,
                     std::span<double> input_grad, std::span<double> scratch) {
  const auto& layers = params.layers();
  const double* values = params.values().data();
  const std::size_t width = params.max_width();
  double* cur = scratch.data();          // gradient w.r.t. current layer's output
  double* next = scratch.data() + width;  // gradient w.r.t. its input
  std::copy(upstream.begin(), upstream.end(), cur);

  std::size_t off = record.size();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& s = layers[l];
    off -= 2 * s.out;
    const double* z = record.data() + off;
    const double* a = z + s.out;
    const std::size_t in_off = l == 0 ? 0 : off - s.in;
    const double* x = record.data() + in_off;
    if (s.activation == Activation::Elu)
      for (std::size_t j = 0; j < s.out; ++j) cur[j] *= elu_grad_from_output(z[j], a[j]);

    double* gw = param_grad.data() + s.weight_offset;
    double* gb = param_grad.data() + s.bias_offset;
    const double* w = values + s.weight_offset;
    const bool need_input = l > 0 || !input_grad.empty();
    if (need_input) std::fill(next, next + s.in, 0.0);
    for (std::size_t j = 0; j < s.out; ++j) {
      const double dz = cur[j];
      gb[j] += dz;
      double* grow = gw + j * s.in;
      for (std::size_t i = 0; i < s.in; ++i) grow[i] += dz * x[i];
      if (need_input) {
        const double* row = w + j * s.in;
        for (std::size_t i = 0; i < s.in; ++i) next[i] += dz * row[i];
      }
    }
    std::swap(cur, next);
  }
  if (!input_grad.empty()) std::copy(cur, cur + params.input_width(), input_grad.begin());
}

std::span<const double> Tape::output() const {
  if (params_ == nullptr) return {};
  return record_output(*params_, record_);
}

std::pair<std::vector<double>, Tape> mlp_forward(const MlpParams& params,
                                                 std::span<const double> input) {
  if (params.empty()) throw StructuralError("mlp_forward: network has no layers");
  if (input.size() != params.input_width())
    throw StructuralError("mlp_forward: input width " + std::to_string(input.size()) +
                          " does not match network input width " +
                          std::to_string(params.input_width()));
  Tape tape;
  tape.params_ = &params;
  tape.record_size_ = params.record_size();
  tape.record_.resize(tape.record_size_);
  forward_record(params, input, tape.record_);
  auto out = record_output(params, tape.record_);
  return {std::vector<double>(out.begin(), out.end()), std::move(tape)};
}

MlpGradients mlp_backward(const Tape& tape, std::span<const double> upstream) {
  const MlpParams* params = tape.params();
  if (params == nullptr) throw StructuralError("mlp_backward: tape holds no forward pass");
  if (tape.record().size() != params->record_size())
    throw StructuralError("mlp_backward: tape does not match the network it references");
  if (upstream.size() != params->output_width())
    throw StructuralError("mlp_backward: upstream width " + std::to_string(upstream.size()) +
                          " does not match output width " +
                          std::to_string(params->output_width()));
  MlpGradients g{params->zeros_like(), std::vector<double>(params->input_width(), 0.0)};
  std::vector<double> scratch(2 * params->max_width());
  backward_record(*params, tape.record(), upstream, g.params.values(), g.input, scratch);
  return g;
}

MlpGradients mlp_backward(const MlpParams& params, const Tape& tape,
                          std::span<const double> upstream) {
  if (tape.params() != &params)
    throw StructuralError("mlp_backward: tape was recorded against a different network");
  return mlp_backward(tape, upstream);
}

nlohmann::json mlp_to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < params.layers().size(); ++l) {
    const auto& s = params.layers()[l];
    auto w = params.weight(l);
    auto b = params.bias(l);
    layers.push_back({{"in", s.in},
                      {"out", s.out},
                      {"activation", to_string(s.activation)},
                      {"weight", std::vector<double>(w.begin(), w.end())},
                      {"bias", std::vector<double>(b.begin(), b.end())}});
  }
  return {{"layers", layers}};
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  MlpParams p;
  try {
    for (const auto& layer : j.at("layers")) {
      const auto w = layer.at("weight").get<std::vector<double>>();
      const auto b = layer.at("bias").get<std::vector<double>>();
      p.add_layer(layer.at("in").get<std::size_t>(), layer.at("out").get<std::size_t>(),
                  activation_from_string(layer.at("activation").get<std::string>()), w, b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed network parameters: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace noderes
