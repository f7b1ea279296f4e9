#pragma once

// Synthetic urea-dosing hydraulics used as ground truth.
//
// Three lumped pressures (kPa, absolute):
//   p_bp  between the tank-side filter and the pump
//   p_ap  after the pump
//   p_du  inside the dosing unit
// Flows (ml/s):
//   q_in   = A_in  * ssqrt(p_tp - p_bp)                    tank -> pump inlet
//   q_pump = a_p * (k_n * n_p - k_c * (p_ap - p_bp))       pump delivery
//   q_du   = a_du * A_du * ssqrt(p_ap - p_du)               hose into dosing unit
//   q_ori  = a_ori * A_ori * ssqrt(p_du - p_amb)            return orifice
//   q_dose = a_dose * A_dose * v * ssqrt(p_du - p_amb)      PWM dosing valve
// with ssqrt(d) = d / (d^2 + eps^2)^(1/4) and a_* = 1 - clogging magnitude.
//   C_bp dp_bp = q_in - q_pump
//   C_ap dp_ap = q_pump - q_du
//   C_du dp_du = q_du - q_ori - q_dose

#include <array>
#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "noderes/dataset.hpp"

namespace noderes {

struct PlantConfig {
  double p_amb = 100.0;     // kPa
  double k_n = 0.01;        // ml/s per rpm
  double k_c = 0.02;        // ml/s per kPa of pump head
  double area_in = 2.5;     // ml/s per sqrt(kPa)
  double area_du = 1.46;
  double area_ori = 0.335;
  double area_dose = 0.42;
  double cap_bp = 0.14;     // ml per kPa
  double cap_ap = 0.06;
  double cap_du = 0.0062;  // fast dosing-unit pole: lambda*T between about -3 and -8.3 at T = 0.2
  double ssqrt_eps = 1.0;   // kPa, smoothing of the square-root flow law

  // Tank-side pressure p_tp(t) = p_amb + tank_head + swing terms (exogenous, slow).
  double tank_head = 10.0;
  double tank_swing = 4.0;
  double tank_period = 180.0;  // s

  // PWM carrier; on-time is quantized to pwm_tick.
  double pwm_period = 0.3;  // s
  double pwm_tick = 0.01;   // s

  // Excitation. Pump speed and duty cycle are piecewise constant with random holds.
  double n_min = 900.0;     // rpm
  double n_max = 3000.0;
  std::size_t hold_min = 10;  // samples
  std::size_t hold_max = 60;
  double dc_min = 0.1;
  double dc_max = 0.6;
  double warmup = 30.0;     // s of constant input before the first frame

  // Internal RK4 steps per sample. T / 80 keeps every substep aligned with the PWM
  // tick at T = 0.2 and resolves the fast dosing-unit transients.
  int reference_substeps = 80;
  double noise_fraction = 0.005;
  // Nominal signal ranges that scale the measurement noise.
  double range_tp = 20.0;
  double range_ap = 800.0;
  double range_du = 800.0;
  double range_np = 2100.0;

  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static PlantConfig from_json(const nlohmann::json& j);
};

struct PlantState {
  double p_bp = 0.0;
  double p_ap = 0.0;
  double p_du = 0.0;
};

struct PlantInputs {
  double n_p = 0.0;    // rpm
  double valve = 0.0;  // instantaneous dosing-valve opening in [0, 1]
  double p_tp = 0.0;   // kPa, tank-side pressure
};

// Area multipliers (1 = healthy) derived from a fault scenario.
struct FaultEffects {
  double a_du = 1.0;
  double a_ori = 1.0;
  double a_p = 1.0;
  double a_dose = 1.0;
};

FaultEffects fault_effects(const FaultScenario& scenario);

// Signed, smoothed square root used by every orifice law.
double ssqrt(double d, double eps);

PlantState plant_derivative(const PlantConfig& cfg, const PlantState& x, const PlantInputs& u,
                            const FaultEffects& faults = {});

// Square-wave dosing valve with a fixed carrier and a (seeded) unknown phase.
class PwmCarrier {
 public:
  PwmCarrier(double period, double tick, std::int64_t phase_ticks);
  // Valve opening (0 or 1) for duty cycle `duty` at time t.
  double open(double duty, double t) const;
  std::int64_t period_ticks() const { return period_ticks_; }

 private:
  double tick_;
  std::int64_t period_ticks_;
  std::int64_t phase_ticks_;
};

double pwm_dosing(const PwmCarrier& carrier, double duty, double t);

double tank_pressure(const PlantConfig& cfg, double t, double phase1, double phase2);

// Integrates to rest under constant inputs (valve held at its average opening).
PlantState steady_state(const PlantConfig& cfg, const PlantInputs& u, const FaultEffects& faults = {});

// Linearized state Jacobian (central differences) at a state/input pair, row-major 3x3.
std::array<double, 9> plant_jacobian(const PlantConfig& cfg, const PlantState& x,
                                     const PlantInputs& u, const FaultEffects& faults = {});

Dataset generate(const PlantConfig& cfg, const FaultScenario& scenario, std::size_t length,
                 double step, std::uint64_t seed);

}  // namespace noderes
