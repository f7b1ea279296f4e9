#include "noderes/plant.hpp"

#include <cmath>
#include <numbers>

#include "noderes/errors.hpp"
#include "noderes/rng.hpp"

namespace noderes {

namespace {

struct Vec3 {
  double a, b, c;
};

Vec3 to_vec(const PlantState& s) { return {s.p_bp, s.p_ap, s.p_du}; }
PlantState to_state(const Vec3& v) { return {v.a, v.b, v.c}; }

PlantState axpy(const PlantState& x, double h, const PlantState& d) {
  return {x.p_bp + h * d.p_bp, x.p_ap + h * d.p_ap, x.p_du + h * d.p_du};
}

// One classical RK4 step; the valve opening is held over the step, p_tp follows time.
template <class TankFn>
PlantState rk4_substep(const PlantConfig& cfg, const PlantState& x, double t, double h, double n_p,
                       double valve, const TankFn& tank, const FaultEffects& faults) {
  const PlantInputs u0{n_p, valve, tank(t)};
  const PlantInputs um{n_p, valve, tank(t + 0.5 * h)};
  const PlantInputs u1{n_p, valve, tank(t + h)};
  const PlantState k1 = plant_derivative(cfg, x, u0, faults);
  const PlantState k2 = plant_derivative(cfg, axpy(x, 0.5 * h, k1), um, faults);
  const PlantState k3 = plant_derivative(cfg, axpy(x, 0.5 * h, k2), um, faults);
  const PlantState k4 = plant_derivative(cfg, axpy(x, h, k3), u1, faults);
  return {x.p_bp + h / 6.0 * (k1.p_bp + 2.0 * k2.p_bp + 2.0 * k3.p_bp + k4.p_bp),
          x.p_ap + h / 6.0 * (k1.p_ap + 2.0 * k2.p_ap + 2.0 * k3.p_ap + k4.p_ap),
          x.p_du + h / 6.0 * (k1.p_du + 2.0 * k2.p_du + 2.0 * k3.p_du + k4.p_du)};
}

}  // namespace

nlohmann::json PlantConfig::to_json() const {
  return {{"p_amb", p_amb},
          {"k_n", k_n},
          {"k_c", k_c},
          {"area_in", area_in},
          {"area_du", area_du},
          {"area_ori", area_ori},
          {"area_dose", area_dose},
          {"cap_bp", cap_bp},
          {"cap_ap", cap_ap},
          {"cap_du", cap_du},
          {"ssqrt_eps", ssqrt_eps},
          {"tank_head", tank_head},
          {"tank_swing", tank_swing},
          {"tank_period", tank_period},
          {"pwm_period", pwm_period},
          {"pwm_tick", pwm_tick},
          {"n_min", n_min},
          {"n_max", n_max},
          {"hold_min", hold_min},
          {"hold_max", hold_max},
          {"dc_min", dc_min},
          {"dc_max", dc_max},
          {"warmup", warmup},
          {"reference_substeps", reference_substeps},
          {"noise_fraction", noise_fraction},
          {"range_tp", range_tp},
          {"range_ap", range_ap},
          {"range_du", range_du},
          {"range_np", range_np}};
}

PlantConfig PlantConfig::from_json(const nlohmann::json& j) {
  PlantConfig cfg;
  nlohmann::json merged = cfg.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!merged.contains(key)) throw ParameterError("plant config: unknown key '" + key + "'");
    merged[key] = value;
  }
  try {
    cfg.p_amb = merged["p_amb"].get<double>();
    cfg.k_n = merged["k_n"].get<double>();
    cfg.k_c = merged["k_c"].get<double>();
    cfg.area_in = merged["area_in"].get<double>();
    cfg.area_du = merged["area_du"].get<double>();
    cfg.area_ori = merged["area_ori"].get<double>();
    cfg.area_dose = merged["area_dose"].get<double>();
    cfg.cap_bp = merged["cap_bp"].get<double>();
    cfg.cap_ap = merged["cap_ap"].get<double>();
    cfg.cap_du = merged["cap_du"].get<double>();
    cfg.ssqrt_eps = merged["ssqrt_eps"].get<double>();
    cfg.tank_head = merged["tank_head"].get<double>();
    cfg.tank_swing = merged["tank_swing"].get<double>();
    cfg.tank_period = merged["tank_period"].get<double>();
    cfg.pwm_period = merged["pwm_period"].get<double>();
    cfg.pwm_tick = merged["pwm_tick"].get<double>();
    cfg.n_min = merged["n_min"].get<double>();
    cfg.n_max = merged["n_max"].get<double>();
    cfg.hold_min = merged["hold_min"].get<std::size_t>();
    cfg.hold_max = merged["hold_max"].get<std::size_t>();
    cfg.dc_min = merged["dc_min"].get<double>();
    cfg.dc_max = merged["dc_max"].get<double>();
    cfg.warmup = merged["warmup"].get<double>();
    cfg.reference_substeps = merged["reference_substeps"].get<int>();
    cfg.noise_fraction = merged["noise_fraction"].get<double>();
    cfg.range_tp = merged["range_tp"].get<double>();
    cfg.range_ap = merged["range_ap"].get<double>();
    cfg.range_du = merged["range_du"].get<double>();
    cfg.range_np = merged["range_np"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("plant config: ") + e.what());
  }
  if (cfg.hold_min == 0 || cfg.hold_max < cfg.hold_min)
    throw ParameterError("plant config: need 0 < hold_min <= hold_max");
  if (cfg.reference_substeps < 1) throw ParameterError("plant config: reference_substeps must be >= 1");
  return cfg;
}

FaultEffects fault_effects(const FaultScenario& scenario) {
  FaultEffects e;
  const double keep = 1.0 - scenario.magnitude;
  switch (scenario.kind) {
    case FaultKind::ClogBeforeDosing: e.a_du = keep; break;
    case FaultKind::ClogOrifice: e.a_ori = keep; break;
    case FaultKind::ClogPump: e.a_p = keep; break;
    case FaultKind::ClogDosing: e.a_dose = keep; break;
    default: break;
  }
  return e;
}

double ssqrt(double d, double eps) { return d / std::sqrt(std::sqrt(d * d + eps * eps)); }

PlantState plant_derivative(const PlantConfig& cfg, const PlantState& x, const PlantInputs& u,
                            const FaultEffects& f) {
  const double eps = cfg.ssqrt_eps;
  const double q_in = cfg.area_in * ssqrt(u.p_tp - x.p_bp, eps);
  const double q_pump = f.a_p * (cfg.k_n * u.n_p - cfg.k_c * (x.p_ap - x.p_bp));
  const double q_du = f.a_du * cfg.area_du * ssqrt(x.p_ap - x.p_du, eps);
  const double q_ori = f.a_ori * cfg.area_ori * ssqrt(x.p_du - cfg.p_amb, eps);
  const double q_dose = f.a_dose * cfg.area_dose * u.valve * ssqrt(x.p_du - cfg.p_amb, eps);
  return {(q_in - q_pump) / cfg.cap_bp, (q_pump - q_du) / cfg.cap_ap,
          (q_du - q_ori - q_dose) / cfg.cap_du};
}

PwmCarrier::PwmCarrier(double period, double tick, std::int64_t phase_ticks)
    : tick_(tick), period_ticks_(static_cast<std::int64_t>(std::llround(period / tick))),
      phase_ticks_(phase_ticks) {
  if (!(tick > 0.0) || period_ticks_ < 1) throw ParameterError("PWM period must span at least one tick");
}

double PwmCarrier::open(double duty, double t) const {
  if (!(duty >= 0.0 && duty <= 1.0)) throw ParameterError("duty cycle outside [0, 1]");
  const auto on_ticks =
      static_cast<std::int64_t>(std::llround(duty * static_cast<double>(period_ticks_)));
  const auto tick = static_cast<std::int64_t>(std::floor(t / tick_));
  std::int64_t pos = (tick - phase_ticks_) % period_ticks_;
  if (pos < 0) pos += period_ticks_;
  return pos < on_ticks ? 1.0 : 0.0;
}

double pwm_dosing(const PwmCarrier& carrier, double duty, double t) { return carrier.open(duty, t); }

double tank_pressure(const PlantConfig& cfg, double t, double phase1, double phase2) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return cfg.p_amb + cfg.tank_head + cfg.tank_swing * std::sin(two_pi * t / cfg.tank_period + phase1) +
         0.5 * cfg.tank_swing * std::sin(two_pi * t / (0.37 * cfg.tank_period) + phase2);
}

PlantState steady_state(const PlantConfig& cfg, const PlantInputs& u, const FaultEffects& faults) {
  PlantState x{u.p_tp, cfg.p_amb + 300.0, cfg.p_amb + 280.0};
  const double h = 0.002;
  const auto tank = [&](double) { return u.p_tp; };
  for (int i = 0; i < 400000; ++i) {
    x = rk4_substep(cfg, x, 0.0, h, u.n_p, u.valve, tank, faults);
    if (i % 1000 == 999) {
      const PlantState d = plant_derivative(cfg, x, u, faults);
      if (std::abs(d.p_bp) + std::abs(d.p_ap) + std::abs(d.p_du) < 1e-10) break;
    }
  }
  return x;
}

std::array<double, 9> plant_jacobian(const PlantConfig& cfg, const PlantState& x,
                                     const PlantInputs& u, const FaultEffects& faults) {
  std::array<double, 9> jac{};
  const double h = 1e-4;
  for (int col = 0; col < 3; ++col) {
    Vec3 plus = to_vec(x), minus = to_vec(x);
    double* pp = col == 0 ? &plus.a : col == 1 ? &plus.b : &plus.c;
    double* pm = col == 0 ? &minus.a : col == 1 ? &minus.b : &minus.c;
    *pp += h;
    *pm -= h;
    const PlantState dp = plant_derivative(cfg, to_state(plus), u, faults);
    const PlantState dm = plant_derivative(cfg, to_state(minus), u, faults);
    jac[0 * 3 + col] = (dp.p_bp - dm.p_bp) / (2 * h);
    jac[1 * 3 + col] = (dp.p_ap - dm.p_ap) / (2 * h);
    jac[2 * 3 + col] = (dp.p_du - dm.p_du) / (2 * h);
  }
  return jac;
}

Dataset generate(const PlantConfig& cfg, const FaultScenario& scenario, std::size_t length,
                 double step, std::uint64_t seed) {
  if (length == 0) throw ParameterError("dataset length must be positive");
  if (!(step > 0.0)) throw ParameterError("sample time must be positive");
  if (scenario.onset > length) throw ParameterError("fault onset beyond dataset length");

  Rng excitation(derive_seed(seed, "excitation"));
  Rng noise(derive_seed(seed, "noise"));
  Rng phases(derive_seed(seed, "phase"));

  std::vector<double> n_cmd(length), dc(length);
  std::size_t n_hold = 0, dc_hold = 0;
  double n_level = 0.0, dc_level = 0.0;
  const auto draw_hold = [&] {
    return cfg.hold_min + static_cast<std::size_t>(excitation.index(cfg.hold_max - cfg.hold_min + 1));
  };
  for (std::size_t k = 0; k < length; ++k) {
    if (n_hold == 0) {
      n_level = excitation.uniform(cfg.n_min, cfg.n_max);
      n_hold = draw_hold();
    }
    if (dc_hold == 0) {
      dc_level = excitation.uniform(cfg.dc_min, cfg.dc_max);
      dc_hold = draw_hold();
    }
    --n_hold;
    --dc_hold;
    n_cmd[k] = n_level;
    dc[k] = k < length / 2 ? dc_level : 0.0;
  }

  const PwmCarrier carrier(cfg.pwm_period, cfg.pwm_tick, 0);
  const PwmCarrier phased(cfg.pwm_period, cfg.pwm_tick,
                          static_cast<std::int64_t>(phases.index(
                              static_cast<std::uint64_t>(carrier.period_ticks()))));
  const double phase1 = 2.0 * std::numbers::pi * phases.uniform();
  const double phase2 = 2.0 * std::numbers::pi * phases.uniform();
  const auto tank = [&](double t) { return tank_pressure(cfg, t, phase1, phase2); };

  const FaultEffects active = fault_effects(scenario);
  const FaultEffects healthy{};
  const int m = cfg.reference_substeps;
  const double h = step / m;

  PlantState x = steady_state(cfg, {n_cmd[0], dc[0], tank(0.0)},
                              scenario.onset == 0 ? active : healthy);
  const auto warm_steps = static_cast<std::int64_t>(std::llround(cfg.warmup / step)) * m;
  for (std::int64_t i = -warm_steps; i < 0; ++i) {
    const double t = static_cast<double>(i) * h;
    const double valve = phased.open(dc[0], t + 0.5 * h);
    x = rk4_substep(cfg, x, t, h, n_cmd[0], valve, tank, scenario.onset == 0 ? active : healthy);
  }

  const double sd_tp = cfg.noise_fraction * cfg.range_tp;
  const double sd_ap = cfg.noise_fraction * cfg.range_ap;
  const double sd_du = cfg.noise_fraction * cfg.range_du;
  const double sd_np = cfg.noise_fraction * cfg.range_np;
  const double ap_offset = scenario.kind == FaultKind::SensorAp ? scenario.magnitude : 0.0;
  const double du_offset = scenario.kind == FaultKind::SensorDu ? scenario.magnitude : 0.0;

  std::array<std::vector<double>, 6> cols;
  for (auto& c : cols) c.resize(length);
  for (std::size_t k = 0; k < length; ++k) {
    const double t = static_cast<double>(k) * step;
    const bool faulty = k >= scenario.onset;
    const double e_tp = noise.normal() * sd_tp;
    const double e_ap = noise.normal() * sd_ap;
    const double e_du = noise.normal() * sd_du;
    const double e_np = noise.normal() * sd_np;
    cols[0][k] = t;
    cols[1][k] = tank(t) + e_tp;
    cols[2][k] = x.p_ap + e_ap + (faulty ? ap_offset : 0.0);
    cols[3][k] = x.p_du + e_du + (faulty ? du_offset : 0.0);
    cols[4][k] = n_cmd[k] + e_np;
    cols[5][k] = dc[k];

    const FaultEffects& eff = faulty ? active : healthy;
    for (int s = 0; s < m; ++s) {
      const auto idx = static_cast<std::int64_t>(k) * m + s;
      const double ts = static_cast<double>(idx) * h;
      const double valve = phased.open(dc[k], ts + 0.5 * h);
      x = rk4_substep(cfg, x, ts, h, n_cmd[k], valve, tank, eff);
    }
  }
  return Dataset(step, std::move(cols), scenario, seed);
}

}  // namespace noderes
