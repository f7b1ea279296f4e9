#pragma once

// Shared oracles for the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "noderes/dataset.hpp"
#include "noderes/residual.hpp"
#include "noderes/solvers.hpp"
#include "noderes/training.hpp"

namespace noderes::testing {

// y_p_du = exp(-t) sampled every `step`; all other signals are zero.
inline Dataset decay_dataset(std::size_t n, double step) {
  std::array<std::vector<double>, 6> cols;
  for (auto& c : cols) c.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    cols[0][k] = static_cast<double>(k) * step;
    cols[3][k] = std::exp(-cols[0][k]);
  }
  return Dataset(step, cols, {}, 0);
}

// r1 wiring with a purely linear derivative network g = theta * p_du + ... and a
// linear output map, so the learned theta can be read off directly.
inline ResidualModel linear_scalar_model(double theta0) {
  ResidualModel m = build_model(builtin_spec("r1"), std::vector<std::size_t>{1}, 0);
  MlpParams g;
  g.add_layer(3, 1, Activation::Identity, std::vector<double>{theta0, 0.0, 0.0}, std::vector<double>{0.0});
  MlpParams h;
  h.add_layer(1, 1, Activation::Identity, std::vector<double>{1.0}, std::vector<double>{0.0});
  m.g = {g};
  m.h = h;
  return m;
}

inline double learned_theta(const ResidualModel& m) { return m.g[0].weight(0)[0]; }

struct ScalarFit {
  double theta = 0.0;
  double initial_val = 0.0;
  double final_val = 0.0;
};

// Fits x' = theta x to exp(-t) sampled at T = 0.1 with the given solver.
inline ScalarFit fit_scalar_decay(Method method, std::uint64_t seed = 1) {
  const Dataset data = decay_dataset(60, 0.1);
  const SignalStats s = data.stats().at("y_p_du");
  TrainConfig cfg;
  cfg.solver = SolverKind::make(method, 0.1);
  cfg.seq_len = data.size();
  cfg.batch_size = 1;
  cfg.batches_per_epoch = 1;
  cfg.epochs = 600;
  cfg.learning_rate = 1e-2;
  cfg.seed = seed;
  cfg.settle = 0;
  cfg.parallel = false;
  cfg.initial_state = {StateStats{(1.0 - s.mean) / s.stddev, 0.0}};
  const TrainResult r = train(linear_scalar_model(-0.5), data, nullptr, cfg);
  return {learned_theta(r.model), r.initial_val_loss, r.history.back().val_loss};
}

struct GradientCheck {
  double worst_relative = 0.0;
  std::size_t parameters = 0;
  double loss = 0.0;
};

// Compares the unrolled adjoint gradient with central differences of the same loss.
inline GradientCheck check_unrolled_gradient(const ResidualModel& base, const Dataset& data,
                                             Method method, std::size_t offset, std::size_t len,
                                             std::span<const double> x0, double h = 1e-6) {
  ResidualModel model = base;
  const PreparedData prepared = prepare(model, data);
  Unroller unroller;
  std::vector<double> grad(model.parameter_count());
  GradientCheck out;
  out.loss = unroller.run(model, prepared, offset, len, x0, method, data.step(), 1.0, grad).value();
  const std::vector<double> theta = flatten_parameters(model);
  out.parameters = theta.size();
  for (std::size_t p = 0; p < theta.size(); ++p) {
    std::vector<double> t = theta;
    t[p] += h;
    assign_parameters(model, t);
    const double up = unroller.run(model, prepared, offset, len, x0, method, data.step(), 1.0, {}).value();
    t[p] -= 2 * h;
    assign_parameters(model, t);
    const double down = unroller.run(model, prepared, offset, len, x0, method, data.step(), 1.0, {}).value();
    const double fd = (up - down) / (2 * h);
    // Floor keeps parameters with (near) zero sensitivity from dominating.
    const double rel = std::abs(fd - grad[p]) / std::max({std::abs(fd), std::abs(grad[p]), 1e-3});
    out.worst_relative = std::max(out.worst_relative, rel);
  }
  return out;
}

inline Derivative linear_derivative(double lambda) {
  return [lambda](std::span<const double> x, std::span<const double>) { return Vec{lambda * x[0]}; };
}

inline const OutputMap& identity_output() {
  static const OutputMap h = [](std::span<const double> x, std::span<const double>) {
    return Vec(x.begin(), x.end());
  };
  return h;
}

// x' = lambda x from x0 = 1 over `steps` samples.
inline Trajectory linear_run(Method m, double lambda, double step, std::size_t steps, int substeps = 1) {
  const std::vector<Vec> u(steps, Vec{0.0});
  return simulate(linear_derivative(lambda), identity_output(), SolverKind::make(m, step),
                  std::vector<double>{1.0}, u, substeps);
}

}  // namespace noderes::testing
