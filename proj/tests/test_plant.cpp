#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "noderes/dataset.hpp"
#include "noderes/errors.hpp"
#include "noderes/plant.hpp"

using namespace noderes;

namespace {

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin),
                         v.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

FaultScenario clog(FaultKind kind, double magnitude, std::size_t onset = 0) {
  return FaultScenario{kind, magnitude, onset};
}

}  // namespace

TEST_CASE("ambient rest is an equilibrium") {
  PlantConfig cfg;
  const PlantState x{cfg.p_amb, cfg.p_amb, cfg.p_amb};
  const auto d = plant_derivative(cfg, x, PlantInputs{0.0, 0.0, cfg.p_amb});
  CHECK(d.p_bp == 0.0);
  CHECK(d.p_ap == 0.0);
  CHECK(d.p_du == 0.0);
}

TEST_CASE("full orifice clog removes the orifice flow") {
  PlantConfig cfg;
  const PlantState x{110.0, 500.0, 450.0};
  const PlantInputs closed{2000.0, 0.0, 110.0};
  const auto healthy = plant_derivative(cfg, x, closed);
  const auto clogged = plant_derivative(cfg, x, closed, fault_effects(clog(FaultKind::ClogOrifice, 1.0)));
  // With the dosing valve closed the only outflow of the dosing unit is the orifice.
  const double q_du = cfg.area_du * ssqrt(x.p_ap - x.p_du, cfg.ssqrt_eps);
  CHECK(clogged.p_du * cfg.cap_du == doctest::Approx(q_du).epsilon(1e-12));
  CHECK(healthy.p_du < clogged.p_du);
  CHECK(clogged.p_ap == healthy.p_ap);
  CHECK(fault_effects(clog(FaultKind::ClogOrifice, 1.0)).a_ori == 0.0);
}

TEST_CASE("steady state has the pump building pressure") {
  PlantConfig cfg;
  for (double n : {900.0, 1800.0, 3000.0}) {
    const PlantInputs u{n, 0.3, cfg.p_amb + cfg.tank_head};
    const auto x = steady_state(cfg, u);
    CHECK(x.p_ap > x.p_bp);
    CHECK(x.p_ap > x.p_du);
    CHECK(x.p_du > cfg.p_amb);
    const auto d = plant_derivative(cfg, x, u);
    CHECK(std::abs(d.p_bp) < 1e-6);
    CHECK(std::abs(d.p_ap) < 1e-6);
    CHECK(std::abs(d.p_du) < 1e-6);
  }
}

TEST_CASE("ssqrt is odd, monotone and close to sqrt far from zero") {
  CHECK(ssqrt(0.0, 1.0) == 0.0);
  CHECK(ssqrt(-4.0, 1.0) == -ssqrt(4.0, 1.0));
  CHECK(ssqrt(400.0, 1.0) == doctest::Approx(20.0).epsilon(1e-5));
  double prev = -1e9;
  for (int i = -50; i <= 50; ++i) {
    const double v = ssqrt(i * 0.1, 1.0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("pwm duty cycle") {
  const PwmCarrier c(0.3, 0.01, 7);
  int open_half = 0, open_full = 0, open_none = 0;
  const int n = 30;  // ticks in one period
  for (int i = 0; i < n; ++i) {
    const double t = 12.0 + (i + 0.5) * 0.01;
    open_half += c.open(0.5, t) > 0.0;
    open_full += c.open(1.0, t) > 0.0;
    open_none += c.open(0.0, t) > 0.0;
  }
  CHECK(open_half == n / 2);
  CHECK(open_full == n);
  CHECK(open_none == 0);
  for (double t = 0.0; t < 3.0; t += 0.0137) {
    CHECK(pwm_dosing(c, 0.0, t) == 0.0);
    CHECK(pwm_dosing(c, 1.0, t) == 1.0);
  }
}

TEST_CASE("zero-magnitude faults reproduce the nominal dataset") {
  PlantConfig cfg;
  const auto nominal = generate(cfg, FaultScenario{}, 300, 0.2, 11);
  for (auto kind : {FaultKind::ClogBeforeDosing, FaultKind::ClogOrifice, FaultKind::ClogPump,
                    FaultKind::ClogDosing, FaultKind::SensorAp, FaultKind::SensorDu}) {
    const auto d = generate(cfg, clog(kind, 0.0), 300, 0.2, 11);
    for (const auto& name : kSignalNames) CHECK(d.column(name) == nominal.column(name));
  }
}

TEST_CASE("sensor offset shifts only the measurement") {
  PlantConfig cfg;
  const std::size_t onset = 100;
  const auto nominal = generate(cfg, FaultScenario{}, 300, 0.2, 5);
  const auto faulty = generate(cfg, FaultScenario{FaultKind::SensorAp, 10.0, onset}, 300, 0.2, 5);
  const auto& a = nominal.column("y_p_ap");
  const auto& b = faulty.column("y_p_ap");
  for (std::size_t k = 0; k < onset; ++k) CHECK(b[k] == a[k]);
  for (std::size_t k = onset; k < 300; ++k) CHECK(b[k] - a[k] == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(faulty.column("y_p_du") == nominal.column("y_p_du"));
}

TEST_CASE("clogging before the dosing unit raises the pump-side pressure") {
  PlantConfig cfg;
  const std::size_t onset = 200, n = 1000;
  const auto nominal = generate(cfg, FaultScenario{}, n, 0.2, 21);
  const auto faulty = generate(cfg, clog(FaultKind::ClogBeforeDosing, 0.5, onset), n, 0.2, 21);
  CHECK(mean_of(faulty.column("y_p_ap"), onset, n) > mean_of(nominal.column("y_p_ap"), onset, n));
}

TEST_CASE("clogging is monotone in the steady upstream pressure") {
  PlantConfig cfg;
  const PlantInputs u{2000.0, 0.4, cfg.p_amb + cfg.tank_head};
  struct Case {
    FaultKind kind;
    double PlantState::*upstream;
  };
  for (const auto& c : {Case{FaultKind::ClogBeforeDosing, &PlantState::p_ap},
                        Case{FaultKind::ClogOrifice, &PlantState::p_du},
                        Case{FaultKind::ClogDosing, &PlantState::p_du}}) {
    double prev = -1.0;
    for (double m : {0.0, 0.25, 0.5}) {
      const double p = steady_state(cfg, u, fault_effects(clog(c.kind, m))).*c.upstream;
      CHECK(p >= prev);
      prev = p;
    }
  }
}

TEST_CASE("reference integration is converged at the data scale") {
  PlantConfig cfg;
  cfg.noise_fraction = 0.0;
  PlantConfig fine = cfg;
  fine.reference_substeps = 2 * cfg.reference_substeps;
  const auto a = generate(cfg, FaultScenario{}, 2300, 0.2, 3);
  const auto b = generate(fine, FaultScenario{}, 2300, 0.2, 3);
  for (const char* name : {"y_p_tp", "y_p_ap", "y_p_du", "n_p"}) {
    const auto& x = a.column(name);
    const auto& y = b.column(name);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double range = std::max(*hi - *lo, 1e-12);
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
    CHECK_MESSAGE(worst <= 1e-6 * range, name);
  }
}

TEST_CASE("generation is deterministic and shaped as documented") {
  PlantConfig cfg;
  const auto a = generate(cfg, FaultScenario{}, 400, 0.2, 99);
  const auto b = generate(cfg, FaultScenario{}, 400, 0.2, 99);
  const auto c = generate(cfg, FaultScenario{}, 400, 0.2, 100);
  CHECK(a == b);
  CHECK(a.column("y_p_ap") != c.column("y_p_ap"));
  CHECK(a.size() == 400);
  const auto& t = a.column("t");
  for (std::size_t k = 0; k < t.size(); ++k) CHECK(t[k] == doctest::Approx(0.2 * k));
  const auto& dc = a.column("DC");
  for (std::size_t k = 0; k < 200; ++k) CHECK(dc[k] > 0.0);
  for (std::size_t k = 200; k < 400; ++k) CHECK(dc[k] == 0.0);
  CHECK(dosing_off_start(a) == 200);
  for (double v : dc) CHECK((v >= 0.0 && v <= 1.0));
  const auto& s = a.stats().at("y_p_ap");
  CHECK(s.mean == doctest::Approx(mean_of(a.column("y_p_ap"), 0, 400)));
  CHECK(s.stddev > 0.0);
}

TEST_CASE("generation rejects bad arguments") {
  PlantConfig cfg;
  CHECK_THROWS_AS(generate(cfg, FaultScenario{}, 0, 0.2, 1), ParameterError);
  CHECK_THROWS_AS(generate(cfg, FaultScenario{}, 10, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(generate(cfg, FaultScenario{FaultKind::ClogPump, 0.5, 11}, 10, 0.2, 1), ParameterError);
}

TEST_CASE("plant config json round trip") {
  PlantConfig cfg;
  cfg.cap_du = 0.01;
  cfg.noise_fraction = 0.0;
  const auto back = PlantConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  auto j = cfg.to_json();
  j["bogus"] = 1;
  CHECK_THROWS(PlantConfig::from_json(j));
}
