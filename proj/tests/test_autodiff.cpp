#include <doctest.h>

#include <cmath>
#include <vector>

#include "noderes/autodiff.hpp"
#include "noderes/errors.hpp"

using namespace noderes;

namespace {

MlpParams single_layer(std::size_t in, std::size_t out, Activation act, std::vector<double> w,
                       std::vector<double> b) {
  MlpParams p;
  p.add_layer(in, out, act, w, b);
  return p;
}

double weighted_output(const MlpParams& p, const std::vector<double>& x, const std::vector<double>& up) {
  auto [y, tape] = mlp_forward(p, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
  return s;
}

}  // namespace

TEST_CASE("elu values") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.0) == 1.0);
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(elu(-1.0) == doctest::Approx(-0.63212).epsilon(1e-5));
  // derivative 1 on both sides of the origin
  CHECK(elu_grad_from_output(0.0, elu(0.0)) == 1.0);
  CHECK(elu_grad_from_output(1e-12, elu(1e-12)) == 1.0);
}

TEST_CASE("huber values and errors") {
  CHECK(huber(0.0, 1.0) == 0.0);
  CHECK(huber(0.5, 1.0) == 0.125);
  CHECK(huber(2.0, 1.0) == 1.5);
  CHECK(huber(-2.0, 1.0) == 1.5);
  CHECK(huber_grad(0.5, 1.0) == 0.5);
  CHECK(huber_grad(3.0, 1.0) == 1.0);
  CHECK(huber_grad(-3.0, 1.0) == -1.0);
  CHECK_THROWS_AS(huber(1.0, 0.0), ParameterError);
  CHECK_THROWS_AS(huber(1.0, -1.0), ParameterError);
}

TEST_CASE("forward: zero weight affine layer returns the bias") {
  auto p = single_layer(2, 1, Activation::Identity, {0.0, 0.0}, {0.5});
  auto [y, tape] = mlp_forward(p, std::vector<double>{3.0, -7.0});
  REQUIRE(y.size() == 1);
  CHECK(y[0] == 0.5);
}

TEST_CASE("forward: identity weights with ELU") {
  MlpParams p;
  p.add_layer(2, 2, Activation::Elu, std::vector<double>{1, 0, 0, 1}, std::vector<double>{0, 0});
  p.add_layer(2, 2, Activation::Identity, std::vector<double>{1, 0, 0, 1}, std::vector<double>{0, 0});
  auto [y, tape] = mlp_forward(p, std::vector<double>{1.0, -1.0});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("forward: two layers against a hand computation") {
  MlpParams p;
  p.add_layer(2, 2, Activation::Elu, std::vector<double>{1.0, 2.0, -1.0, 0.5}, std::vector<double>{0.1, -0.2});
  p.add_layer(2, 1, Activation::Identity, std::vector<double>{0.3, -0.7}, std::vector<double>{0.05});
  // z1 = (1*0.5 + 2*(-1) + 0.1, -1*0.5 + 0.5*(-1) - 0.2) = (-1.4, -1.2)
  const double a1 = std::exp(-1.4) - 1.0, a2 = std::exp(-1.2) - 1.0;
  auto [y, tape] = mlp_forward(p, std::vector<double>{0.5, -1.0});
  CHECK(y[0] == doctest::Approx(0.3 * a1 - 0.7 * a2 + 0.05).epsilon(1e-14));
}

TEST_CASE("forward: width mismatch is structural") {
  auto p = single_layer(2, 1, Activation::Identity, {1, 1}, {0});
  CHECK_THROWS_AS(mlp_forward(p, std::vector<double>{1.0}), StructuralError);
}

TEST_CASE("layer chaining and head invariants") {
  MlpParams p;
  p.add_layer(2, 3, Activation::Elu, std::vector<double>(6, 0.1), std::vector<double>(3, 0.0));
  CHECK_THROWS_AS(p.add_layer(2, 1, Activation::Identity, std::vector<double>(2, 0.1), std::vector<double>(1, 0.0)),
                  StructuralError);
  CHECK_THROWS_AS(p.validate(), StructuralError);  // ELU head
  p.add_layer(3, 1, Activation::Identity, std::vector<double>(3, 0.1), std::vector<double>(1, 0.0));
  CHECK_NOTHROW(p.validate());
  p.values()[0] = NAN;
  CHECK_THROWS_AS(p.validate(), StructuralError);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  Rng rng(3);
  std::vector<std::size_t> w{3, 5, 2};
  auto p = MlpParams::glorot(w, rng);
  auto [y, tape] = mlp_forward(p, std::vector<double>{0.2, -0.4, 1.1});
  auto g = mlp_backward(p, tape, std::vector<double>{0.0, 0.0});
  for (double v : g.params.values()) CHECK(v == 0.0);
  for (double v : g.input) CHECK(v == 0.0);
}

TEST_CASE("backward: single affine layer") {
  auto p = single_layer(2, 2, Activation::Identity, {1.0, 2.0, 3.0, 4.0}, {0.5, -0.5});
  const std::vector<double> x{0.7, -0.3}, up{2.0, -1.0};
  auto [y, tape] = mlp_forward(p, x);
  auto g = mlp_backward(p, tape, up);
  // input grad = W^T up
  CHECK(g.input[0] == doctest::Approx(1.0 * 2.0 + 3.0 * -1.0));
  CHECK(g.input[1] == doctest::Approx(2.0 * 2.0 + 4.0 * -1.0));
  // weight grad = up x^T
  auto gw = g.params.weight(0);
  CHECK(gw[0] == doctest::Approx(2.0 * 0.7));
  CHECK(gw[1] == doctest::Approx(2.0 * -0.3));
  CHECK(gw[2] == doctest::Approx(-1.0 * 0.7));
  CHECK(gw[3] == doctest::Approx(-1.0 * -0.3));
  CHECK(g.params.bias(0)[0] == 2.0);
  CHECK(g.params.bias(0)[1] == -1.0);
}

TEST_CASE("backward: mismatched tape or upstream is structural") {
  Rng rng(1);
  std::vector<std::size_t> w{2, 3, 1};
  auto p = MlpParams::glorot(w, rng);
  auto q = MlpParams::glorot(w, rng);
  auto [y, tape] = mlp_forward(p, std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(mlp_backward(q, tape, std::vector<double>{1.0}), StructuralError);
  CHECK_THROWS_AS(mlp_backward(p, tape, std::vector<double>{1.0, 1.0}), StructuralError);
  CHECK_THROWS_AS(mlp_backward(Tape{}, std::vector<double>{1.0}), StructuralError);
}

TEST_CASE("backward matches central differences on random networks") {
  const std::vector<std::vector<std::size_t>> layouts{{3, 4, 2}, {2, 8, 8, 1}, {5, 16, 3}, {4, 6, 6, 6, 2}};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (const auto& widths : layouts) {
      Rng rng(seed * 31 + widths.size());
      auto p = MlpParams::glorot(widths, rng);
      for (auto& v : p.values()) v += 0.05 * rng.normal();  // non-zero biases
      std::vector<double> x(widths.front()), up(widths.back());
      for (auto& v : x) v = rng.uniform(-1.5, 1.5);
      for (auto& v : up) v = rng.uniform(-1.0, 1.0);
      auto [y, tape] = mlp_forward(p, x);
      auto g = mlp_backward(p, tape, up);
      const double h = 1e-5;
      for (std::size_t i = 0; i < p.parameter_count(); ++i) {
        MlpParams a = p, b = p;
        a.values()[i] += h;
        b.values()[i] -= h;
        const double fd = (weighted_output(a, x, up) - weighted_output(b, x, up)) / (2 * h);
        const double an = g.params.values()[i];
        CHECK(std::abs(fd - an) <= 1e-5 * std::max(std::abs(fd), std::abs(an)) + 1e-8);
      }
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto xa = x, xb = x;
        xa[i] += h;
        xb[i] -= h;
        const double fd = (weighted_output(p, xa, up) - weighted_output(p, xb, up)) / (2 * h);
        CHECK(std::abs(fd - g.input[i]) <= 1e-5 * std::max(std::abs(fd), std::abs(g.input[i])) + 1e-8);
      }
    }
  }
}

TEST_CASE("backward is linear in upstream and deterministic") {
  Rng rng(9);
  std::vector<std::size_t> w{3, 7, 2};
  auto p = MlpParams::glorot(w, rng);
  const std::vector<double> x{0.1, -0.9, 0.4};
  auto [y1, t1] = mlp_forward(p, x);
  auto [y2, t2] = mlp_forward(p, x);
  CHECK(y1 == y2);
  auto ga = mlp_backward(p, t1, std::vector<double>{1.0, 0.0});
  auto gb = mlp_backward(p, t1, std::vector<double>{0.0, 1.0});
  auto gc = mlp_backward(p, t2, std::vector<double>{2.0, -3.0});
  for (std::size_t i = 0; i < p.parameter_count(); ++i)
    CHECK(gc.params.values()[i] ==
          doctest::Approx(2.0 * ga.params.values()[i] - 3.0 * gb.params.values()[i]).epsilon(1e-12));
  auto gd = mlp_backward(p, t2, std::vector<double>{2.0, -3.0});
  CHECK(gc.params == gd.params);
}

TEST_CASE("glorot bounds and zero biases") {
  Rng rng(5);
  std::vector<std::size_t> w{10, 30, 1};
  auto p = MlpParams::glorot(w, rng);
  const double lim0 = std::sqrt(6.0 / 40.0), lim1 = std::sqrt(6.0 / 31.0);
  for (double v : p.weight(0)) CHECK(std::abs(v) <= lim0);
  for (double v : p.weight(1)) CHECK(std::abs(v) <= lim1);
  for (double v : p.bias(0)) CHECK(v == 0.0);
  Rng again(5);
  CHECK(MlpParams::glorot(w, again) == p);
}

TEST_CASE("json round trip is bit exact") {
  Rng rng(17);
  std::vector<std::size_t> w{3, 5, 1};
  auto p = MlpParams::glorot(w, rng);
  for (auto& v : p.values()) v = v * 1e-7 + 1.0 / 3.0;
  auto q = mlp_from_json(nlohmann::json::parse(mlp_to_json(p).dump()));
  CHECK(q == p);
}
