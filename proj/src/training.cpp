#include "noderes/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "noderes/errors.hpp"
#include "noderes/io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace noderes {

void TrainConfig::validate(std::size_t data_length) const {
  if (!(solver.step > 0.0) || !std::isfinite(solver.step))
    throw ParameterError("solver step must be positive");
  if (seq_len < 2) throw ParameterError("sequence length must be at least 2");
  if (seq_len > data_length)
    throw ParameterError("sequence length " + std::to_string(seq_len) + " exceeds dataset length " +
                         std::to_string(data_length));
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  if (batches_per_epoch == 0) throw ParameterError("batches per epoch must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ParameterError("learning rate must be positive");
  if (!(huber_delta > 0.0)) throw ParameterError("Huber delta must be positive");
  if (!(loss_cap > 0.0)) throw ParameterError("loss cap must be positive");
  for (const auto& s : initial_state)
    if (!(s.variance >= 0.0) || !std::isfinite(s.mean))
      throw ParameterError("initial-state variance must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json init = nlohmann::json::array();
  for (const auto& s : initial_state) init.push_back({{"mean", s.mean}, {"variance", s.variance}});
  return {{"solver", to_string(solver.method)},
          {"step", solver.step},
          {"seq_len", seq_len},
          {"batch_size", batch_size},
          {"batches_per_epoch", batches_per_epoch},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"huber_delta", huber_delta},
          {"seed", seed},
          {"initial_state", init},
          {"loss_cap", loss_cap},
          {"settle", settle},
          {"parallel", parallel}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "solver") c.solver.method = method_from_string(v.get<std::string>());
      else if (key == "step") c.solver.step = v.get<double>();
      else if (key == "seq_len") c.seq_len = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "batches_per_epoch") c.batches_per_epoch = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "huber_delta") c.huber_delta = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "loss_cap") c.loss_cap = v.get<double>();
      else if (key == "settle") c.settle = v.get<std::size_t>();
      else if (key == "parallel") c.parallel = v.get<bool>();
      else if (key == "initial_state") {
        c.initial_state.clear();
        for (const auto& s : v)
          c.initial_state.push_back({s.at("mean").get<double>(), s.at("variance").get<double>()});
      } else {
        throw ParameterError("unknown training key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

BatchSampler::BatchSampler(std::size_t length, std::size_t seq_len, std::size_t batch_size,
                           std::uint64_t seed)
    : max_offset_(0), batch_size_(batch_size), rng_(seed) {
  if (seq_len == 0 || seq_len > length)
    throw ParameterError("sequence length " + std::to_string(seq_len) +
                         " does not fit a dataset of " + std::to_string(length) + " samples");
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  max_offset_ = length - seq_len;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out(batch_size_);
  for (auto& o : out) o = static_cast<std::size_t>(rng_.index(max_offset_ + 1));
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t length, std::size_t seq_len,
                                                   std::size_t batch_size, std::size_t count,
                                                   std::uint64_t seed) {
  BatchSampler s(length, seq_len, batch_size, seed);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(s.next());
  return out;
}

std::vector<double> sample_initial_state(std::span<const StateStats> stats, Rng& rng) {
  std::vector<double> x(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (!(stats[i].variance >= 0.0)) throw ParameterError("initial-state variance must be non-negative");
    const double z = rng.normal();
    x[i] = stats[i].variance == 0.0 ? stats[i].mean : stats[i].mean + std::sqrt(stats[i].variance) * z;
  }
  return x;
}

std::vector<double> sample_initial_state(std::span<const StateStats> stats, std::uint64_t seed) {
  Rng rng(seed);
  return sample_initial_state(stats, rng);
}

std::vector<double> inference_initial_state(std::span<const StateStats> stats) {
  std::vector<double> x(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (!(stats[i].variance >= 0.0)) throw ParameterError("initial-state variance must be non-negative");
    x[i] = stats[i].mean;
  }
  return x;
}

AdamState AdamState::for_size(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw StructuralError("adam_step: parameter, gradient and moment sizes differ");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

std::vector<double> flatten_parameters(const ResidualModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const auto* net : model.networks()) flat.insert(flat.end(), net->values().begin(), net->values().end());
  return flat;
}

void assign_parameters(ResidualModel& model, std::span<const double> flat) {
  if (flat.size() != model.parameter_count())
    throw StructuralError("assign_parameters: expected " + std::to_string(model.parameter_count()) +
                          " values, got " + std::to_string(flat.size()));
  std::size_t off = 0;
  for (auto* net : model.networks()) {
    auto v = net->values();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  }
}

namespace {

void gather(const std::vector<InputSource>& srcs, const double* x, const double* u, double* out) {
  for (std::size_t p = 0; p < srcs.size(); ++p) out[p] = srcs[p].from_state ? x[srcs[p].index] : u[srcs[p].index];
}

}  // namespace

std::optional<double> Unroller::run(const ResidualModel& model, const PreparedData& data,
                                    std::size_t offset, std::size_t len,
                                    std::span<const double> x0, Method method, double step,
                                    double delta, std::span<double> grad,
                                    std::size_t loss_begin) {
  const Tableau& tab = tableau(method);
  const std::size_t n = model.state_count();
  const std::size_t S = static_cast<std::size_t>(tab.stages);
  const std::size_t W = data.width;
  const bool want_grad = !grad.empty();
  if (len == 0 || offset + len > data.rows) throw ParameterError("window exceeds the dataset");
  if (loss_begin >= len) throw ParameterError("loss window is empty");
  if (x0.size() != n) throw StructuralError("initial state width does not match the model");
  if (want_grad && grad.size() != model.parameter_count())
    throw StructuralError("gradient buffer does not match the parameter count");

  const std::size_t steps = len - 1;
  const std::size_t slots = want_grad ? steps * S : 1;
  std::size_t max_in = model.h.input_width(), max_w = model.h.max_width();
  g_records_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g_records_[i].resize(slots * model.g[i].record_size());
    max_in = std::max(max_in, model.g[i].input_width());
    max_w = std::max(max_w, model.g[i].max_width());
  }
  const std::size_t Rh = model.h.record_size();
  h_records_.resize((want_grad ? len : 1) * Rh);
  states_.resize(len * n);
  out_grad_.assign(len, 0.0);
  stage_k_.resize(S * n);
  stage_x_.resize(n);
  stage_u_.resize(W);
  net_in_.resize(max_in);
  std::copy(x0.begin(), x0.end(), states_.begin());

  const double* rows = data.inputs.data();
  const double inv = 1.0 / static_cast<double>(len - loss_begin);
  double loss = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    const double* x = states_.data() + k * n;
    const double* uk = rows + (offset + k) * W;
    if (k >= loss_begin) {
      std::span<double> rec(h_records_.data() + (want_grad ? k : 0) * Rh, Rh);
      gather(model.wiring.h, x, uk, net_in_.data());
      forward_record(model.h, {net_in_.data(), model.wiring.h.size()}, rec);
      const double e = record_output(model.h, rec)[0] - data.reference[offset + k];
      loss += huber(e, delta);
      out_grad_[k] = huber_grad(e, delta) * inv;
    }
    if (k + 1 == len) break;

    const double* unext = uk + W;
    bool have_mid = false;
    for (std::size_t j = 0; j < S; ++j) {
      std::copy(x, x + n, stage_x_.begin());
      for (std::size_t l = 0; l < j; ++l) {
        const double a = tab.a[j][l];
        if (a == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) stage_x_[i] += step * a * stage_k_[l * n + i];
      }
      const double* u = uk;
      if (tab.c[j] == 1.0) {
        u = unext;
      } else if (tab.c[j] != 0.0) {
        if (!have_mid) {
          for (std::size_t c = 0; c < W; ++c) stage_u_[c] = 0.5 * (uk[c] + unext[c]);
          have_mid = true;
        }
        u = stage_u_.data();
      }
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t R = model.g[i].record_size();
        std::span<double> rec(g_records_[i].data() + (want_grad ? k * S + j : 0) * R, R);
        gather(model.wiring.g[i], stage_x_.data(), u, net_in_.data());
        forward_record(model.g[i], {net_in_.data(), model.wiring.g[i].size()}, rec);
        stage_k_[j * n + i] = record_output(model.g[i], rec)[0];
      }
    }
    double* next = states_.data() + (k + 1) * n;
    for (std::size_t i = 0; i < n; ++i) {
      double incr = 0.0;
      for (std::size_t j = 0; j < S; ++j)
        if (tab.b[j] != 0.0) incr += tab.b[j] * stage_k_[j * n + i];
      next[i] = x[i] + step * incr;
    }
    if (state_diverged({next, n})) return std::nullopt;
  }
  loss *= inv;
  if (!std::isfinite(loss)) return std::nullopt;
  if (!want_grad) return loss;

  // Reverse sweep. xbar_ holds d loss / d x_k while walking k downwards.
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<std::span<double>> net_grad;
  {
    std::size_t off = 0;
    for (const auto* net : model.networks()) {
      net_grad.emplace_back(grad.data() + off, net->parameter_count());
      off += net->parameter_count();
    }
  }
  in_grad_.resize(max_in);
  scratch_.resize(2 * max_w);
  xbar_.assign(n, 0.0);
  xnew_.resize(n);
  kbar_.resize(S * n);
  stage_xbar_.resize(n);
  for (std::size_t k = len; k-- > 0;) {
    if (k + 1 < len) {
      for (std::size_t j = 0; j < S; ++j)
        for (std::size_t i = 0; i < n; ++i) kbar_[j * n + i] = step * tab.b[j] * xbar_[i];
      xnew_ = xbar_;
      for (std::size_t j = S; j-- > 0;) {
        std::fill(stage_xbar_.begin(), stage_xbar_.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double up = kbar_[j * n + i];
          if (up == 0.0) continue;
          const std::size_t R = model.g[i].record_size();
          const auto& srcs = model.wiring.g[i];
          backward_record(model.g[i], {g_records_[i].data() + (k * S + j) * R, R}, {&up, 1},
                          net_grad[i], {in_grad_.data(), srcs.size()}, scratch_);
          for (std::size_t p = 0; p < srcs.size(); ++p)
            if (srcs[p].from_state) stage_xbar_[srcs[p].index] += in_grad_[p];
        }
        for (std::size_t i = 0; i < n; ++i) xnew_[i] += stage_xbar_[i];
        for (std::size_t l = 0; l < j; ++l) {
          const double a = tab.a[j][l];
          if (a == 0.0) continue;
          for (std::size_t i = 0; i < n; ++i) kbar_[l * n + i] += step * a * stage_xbar_[i];
        }
      }
      xbar_.swap(xnew_);
    }
    if (k >= loss_begin && out_grad_[k] != 0.0) {
      const auto& srcs = model.wiring.h;
      backward_record(model.h, {h_records_.data() + k * Rh, Rh}, {&out_grad_[k], 1}, net_grad[n],
                      {in_grad_.data(), srcs.size()}, scratch_);
      for (std::size_t p = 0; p < srcs.size(); ++p)
        if (srcs[p].from_state) xbar_[srcs[p].index] += in_grad_[p];
    }
  }
  return loss;
}

namespace {

Unroller& thread_unroller() {
  thread_local Unroller u;
  return u;
}

void run_window(const ResidualModel& model, const PreparedData& data, const BatchWindow& w,
                const TrainConfig& cfg, std::span<double> grad, double& loss, char& diverged) {
  auto l = thread_unroller().run(model, data, w.offset, cfg.seq_len, w.x0, cfg.solver.method,
                                 cfg.solver.step, cfg.huber_delta, grad);
  if (!l) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = cfg.loss_cap;
    diverged = 1;
  } else {
    loss = std::min(*l, cfg.loss_cap);
    diverged = 0;
  }
}

BatchResult reduce(std::size_t B, std::size_t P, const std::vector<double>& grads,
                   const std::vector<double>& losses, const std::vector<char>& diverged) {
  BatchResult r;
  r.grad.assign(P, 0.0);
  for (std::size_t w = 0; w < B; ++w) {
    const double* g = grads.data() + w * P;
    for (std::size_t p = 0; p < P; ++p) r.grad[p] += g[p];
    r.loss += losses[w];
    r.diverged += static_cast<std::size_t>(diverged[w]);
  }
  const double inv = 1.0 / static_cast<double>(B);
  for (auto& g : r.grad) g *= inv;
  r.loss *= inv;
  return r;
}

}  // namespace

BatchResult batch_gradient_serial(const ResidualModel& model, const PreparedData& data,
                                  std::span<const BatchWindow> windows, const TrainConfig& cfg) {
  const std::size_t B = windows.size(), P = model.parameter_count();
  if (B == 0) throw ParameterError("empty batch");
  std::vector<double> grads(B * P), losses(B);
  std::vector<char> diverged(B);
  for (std::size_t w = 0; w < B; ++w)
    run_window(model, data, windows[w], cfg, {grads.data() + w * P, P}, losses[w], diverged[w]);
  return reduce(B, P, grads, losses, diverged);
}

BatchResult batch_gradient_parallel(const ResidualModel& model, const PreparedData& data,
                                    std::span<const BatchWindow> windows, const TrainConfig& cfg) {
  const std::size_t B = windows.size(), P = model.parameter_count();
  if (B == 0) throw ParameterError("empty batch");
  std::vector<double> grads(B * P), losses(B);
  std::vector<char> diverged(B);
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t w = 0; w < static_cast<std::ptrdiff_t>(B); ++w) {
    const auto i = static_cast<std::size_t>(w);
    try {
      run_window(model, data, windows[i], cfg, {grads.data() + i * P, P}, losses[i], diverged[i]);
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw StructuralError(error);
  return reduce(B, P, grads, losses, diverged);
}

namespace {

std::vector<StateStats> initial_stats(const ResidualModel& model, const TrainConfig& cfg) {
  if (cfg.initial_state.empty()) return std::vector<StateStats>(model.state_count());
  if (cfg.initial_state.size() != model.state_count())
    throw ParameterError("initial-state statistics given for " +
                         std::to_string(cfg.initial_state.size()) + " states, model has " +
                         std::to_string(model.state_count()));
  return cfg.initial_state;
}

}  // namespace

double validation_loss(const ResidualModel& model, const Dataset& data, const TrainConfig& cfg) {
  const std::size_t begin = dosing_off_start(data) + cfg.settle;
  if (begin >= data.size())
    throw ParameterError("validation data has no dosing-off samples after the settling prefix");
  const PreparedData prepared = prepare(model, data);
  const auto x0 = inference_initial_state(initial_stats(model, cfg));
  auto l = thread_unroller().run(model, prepared, 0, data.size(), x0, cfg.solver.method,
                                 cfg.solver.step, cfg.huber_delta, {}, begin);
  return l ? *l : std::numeric_limits<double>::infinity();
}

TrainResult train(ResidualModel model, const Dataset& train_data, const Dataset* val_data,
                  const TrainConfig& cfg) {
  cfg.validate(train_data.size());
  if (std::abs(cfg.solver.step - train_data.step()) > 1e-9 * train_data.step())
    throw ParameterError("solver step " + format_double(cfg.solver.step) +
                         " differs from the dataset sample time " + format_double(train_data.step()));
  const Dataset& val = val_data ? *val_data : train_data;
  model.normalization = train_data.stats();
  const auto stats = initial_stats(model, cfg);
  const PreparedData prepared = prepare(model, train_data);

  BatchSampler sampler(train_data.size(), cfg.seq_len, cfg.batch_size, derive_seed(cfg.seed, "batches"));
  Rng x0_rng(derive_seed(cfg.seed, "x0"));
  std::vector<double> theta = flatten_parameters(model);
  AdamState adam = AdamState::for_size(theta.size());

  TrainResult result;
  result.initial_val_loss = validation_loss(model, val, cfg);
  std::vector<BatchWindow> windows(cfg.batch_size);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t diverged = 0;
    for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
      const auto offsets = sampler.next();
      for (std::size_t w = 0; w < windows.size(); ++w) {
        windows[w].offset = offsets[w];
        windows[w].x0 = sample_initial_state(stats, x0_rng);
      }
      BatchResult r = cfg.parallel ? batch_gradient_parallel(model, prepared, windows, cfg)
                                   : batch_gradient_serial(model, prepared, windows, cfg);
      sum += r.loss;
      diverged += r.diverged;
      adam_step(theta, r.grad, adam, cfg.learning_rate);
      assign_parameters(model, theta);
    }
    const std::size_t total = cfg.batches_per_epoch * cfg.batch_size;
    if (2 * diverged > total)
      throw TrainingFailure(static_cast<int>(epoch),
                            "training diverged in epoch " + std::to_string(epoch) + ": " +
                                std::to_string(diverged) + " of " + std::to_string(total) +
                                " windows left the bounded region");
    result.history.push_back({epoch, sum / static_cast<double>(cfg.batches_per_epoch),
                              validation_loss(model, val, cfg), diverged});
  }
  model.provenance = Provenance{to_string(cfg.solver.method), cfg.solver.step, cfg.seed,
                                "standardized with training-set mean and std", cfg.to_json()};
  result.model = std::move(model);
  return result;
}

BestOfSeeds train_best_of(const ResidualSpec& spec, std::span<const std::size_t> hidden,
                          const Dataset& train_data, const Dataset& val_data,
                          const TrainConfig& cfg, std::size_t seeds) {
  if (seeds == 0) throw ParameterError("at least one seed is required");
  BestOfSeeds out;
  bool have = false;
  int last_epoch = 0;
  for (std::size_t i = 0; i < seeds; ++i) {
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, "run" + std::to_string(i));
    SeedRun run{c.seed, 0.0, false, {}};
    try {
      TrainResult r = train(build_model(spec, hidden, derive_seed(c.seed, "init")), train_data,
                            &val_data, c);
      run.val_loss = r.history.empty() ? r.initial_val_loss : r.history.back().val_loss;
      if (!have || run.val_loss < out.runs[out.best_index].val_loss) {
        out.best = std::move(r);
        out.best_index = i;
        have = true;
      }
    } catch (const TrainingFailure& e) {
      run.failed = true;
      run.failure = e.what();
      run.val_loss = std::numeric_limits<double>::infinity();
      last_epoch = e.epoch();
    }
    out.runs.push_back(run);
  }
  if (!have)
    throw TrainingFailure(last_epoch, "all " + std::to_string(seeds) + " training runs of " +
                                          spec.name + " diverged; last: " + out.runs.back().failure);
  return out;
}

std::string history_to_csv(std::span<const EpochStats> history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.val_loss) + "\n";
  return out;
}

}  // namespace noderes
