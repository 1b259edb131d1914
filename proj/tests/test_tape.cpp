#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "mcpinn/special.hpp"
#include "mcpinn/tape.hpp"

using namespace mcpinn;

namespace {

// Central finite difference of a scalar function of a parameter vector.
double fd(const std::function<double(const std::vector<double>&)>& f,
          std::vector<double> p, std::size_t i, double h = 1e-6) {
  p[i] += h;
  const double up = f(p);
  p[i] -= 2 * h;
  const double dn = f(p);
  return (up - dn) / (2 * h);
}

// Records f on a fresh tape bound to p, runs backward, returns (value, grad).
std::pair<double, std::vector<double>> record(
    const std::function<Sc(Tape&, const std::vector<double>&)>& build,
    const std::vector<double>& p) {
  Tape tape;
  tape.reset(p.data(), p.size());
  Sc out = build(tape, p);
  std::vector<double> grad(p.size(), 0.0);
  tape.backward(out, 1.0, grad.data());
  return {out.val(), grad};
}

}  // namespace

TEST_CASE("scalar operations match analytic values and finite differences") {
  const std::vector<double> p = {0.7, 1.3};
  auto build = [](Tape& t, const std::vector<double>&) {
    Sc a = t.param(0);
    Sc b = t.param(1);
    Sc y = exp(sin(a) * b) + a / b - 3.0 / b + pow(a, 1.3) + log(b) * 2.0;
    y = y + (1.5 - a) * (a - 0.25) - (-b) + abs(a - b);
    return y;
  };
  auto [val, grad] = record(build, p);

  const double a = p[0], b = p[1];
  const double expect = std::exp(std::sin(a) * b) + a / b - 3.0 / b + std::pow(a, 1.3) +
                        2.0 * std::log(b) + (1.5 - a) * (a - 0.25) + b + std::abs(a - b);
  CHECK(val == Catch::Approx(expect).epsilon(1e-14));

  auto eval = [&build](const std::vector<double>& q) {
    Tape t;
    t.reset(q.data(), q.size());
    return build(t, q).val();
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    INFO("param " << i);
    CHECK(grad[i] == Catch::Approx(fd(eval, p, i)).epsilon(1e-7));
  }
}

TEST_CASE("gradient of a linear form is exact") {
  const std::vector<double> p = {0.123456789, -4.2, 17.0};
  auto build = [](Tape& t, const std::vector<double>&) {
    return 2.5 * t.param(0) + t.param(1) * (-0.125) + t.param(2) * 4.0;
  };
  auto [val, grad] = record(build, p);
  CHECK(val == 2.5 * p[0] - 0.125 * p[1] + 4.0 * p[2]);
  CHECK(grad[0] == 2.5);
  CHECK(grad[1] == -0.125);
  CHECK(grad[2] == 4.0);
}

TEST_CASE("backward accumulates into the caller's gradient") {
  const std::vector<double> p = {2.0};
  Tape t;
  t.reset(p.data(), 1);
  Sc y = t.param(0) * t.param(0);
  std::vector<double> grad(1, 0.0);
  t.backward(y, 1.0, grad.data());
  t.backward(y, 0.5, grad.data());
  CHECK(grad[0] == Catch::Approx(4.0 + 2.0).epsilon(1e-15));
}

TEST_CASE("max and abs use one-sided derivatives at kinks") {
  const std::vector<double> p = {1.0, 1.0};
  Tape t;
  t.reset(p.data(), 2);
  Sc a = t.param(0);
  Sc b = t.param(1);

  std::vector<double> g(2, 0.0);
  t.backward(max(a, 1.0), 1.0, g.data());  // tie against constant: stay flat
  CHECK(g[0] == 0.0);

  g.assign(2, 0.0);
  t.backward(max(a, 0.5), 1.0, g.data());
  CHECK(g[0] == 1.0);

  g.assign(2, 0.0);
  t.backward(max(a, b), 1.0, g.data());  // tie: first argument wins
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);

  g.assign(2, 0.0);
  t.backward(abs(a - b), 1.0, g.data());  // abs at 0: right derivative
  CHECK(g[0] == 1.0);
  CHECK(g[1] == -1.0);

  g.assign(2, 0.0);
  t.backward(relu(0.0 - a), 1.0, g.data());
  CHECK(g[0] == 0.0);
}

TEST_CASE("the gamma function differentiates on the tape") {
  for (double x0 : {0.3, 0.75, 1.6, 4.2}) {
    const std::vector<double> p = {x0};
    auto build = [](Tape& t, const std::vector<double>&) { return mcpinn::gamma(t.param(0)); };
    auto [val, grad] = record(build, p);
    CHECK(val == Catch::Approx(mcpinn::gamma(x0)).epsilon(1e-13));
    auto eval = [](const std::vector<double>& q) { return mcpinn::gamma(q[0]); };
    INFO("x0 = " << x0);
    CHECK(grad[0] == Catch::Approx(fd(eval, p, 0)).epsilon(1e-6));
  }
}

TEST_CASE("sum node adds its arguments and routes gradients") {
  const std::vector<double> p = {1.0, 2.0, 3.0};
  Tape t;
  t.reset(p.data(), 3);
  std::vector<Sc> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(t.param(i) * t.param(i));
  Sc s = t.sum(xs);
  CHECK(s.val() == 14.0);
  std::vector<double> g(3, 0.0);
  t.backward(s, 1.0, g.data());
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
  CHECK(t.sum({}).val() == 0.0);
}

TEST_CASE("assemble, affine, activation and pick form a differentiable pipeline") {
  // One affine layer [2 -> 2], tanh, then the sum of both rows' outputs.
  // Inputs: row 0 fixed, row 1 = base + s * dir with s a parameter.
  // Parameters: w (4), b (2), s (1).
  const std::vector<double> p = {0.3, -0.8, 1.1, 0.4, 0.05, -0.2, 0.7};
  const double x0[2] = {0.2, -0.5};
  const double x1[2] = {-0.1, 0.3};
  const double dir[2] = {0.6, -0.4};

  auto value = [&](const std::vector<double>& q) {
    double out = 0.0;
    const double rows[2][2] = {{x0[0], x0[1]},
                               {x1[0] + q[6] * dir[0], x1[1] + q[6] * dir[1]}};
    for (const auto& x : rows) {
      for (int i = 0; i < 2; ++i) {
        const double z = q[4 + i] + q[2 * i] * x[0] + q[2 * i + 1] * x[1];
        out += 1.0 - 2.0 / (std::exp(2.0 * z) + 1.0);
      }
    }
    return out;
  };

  Tape t;
  t.reset(p.data(), p.size());
  Sc s = t.param(6);
  Tape::Assembler as(t, 2, 2);
  as.set_base(0, x0);
  as.set_base(1, x1);
  as.add_term(1, s, dir);
  std::int32_t x = as.finish();
  x = t.affine(x, 0, 4, 2);
  x = t.tanh_mat(x);
  Sc out = t.pick(x, 0, 0) + t.pick(x, 0, 1) + t.pick(x, 1, 0) + t.pick(x, 1, 1);

  CHECK(out.val() == Catch::Approx(value(p)).epsilon(1e-14));

  std::vector<double> grad(p.size(), 0.0);
  t.backward(out, 1.0, grad.data());
  for (std::size_t i = 0; i < p.size(); ++i) {
    INFO("param " << i);
    CHECK(grad[i] == Catch::Approx(fd(value, p, i)).epsilon(1e-6).margin(1e-9));
  }
}

TEST_CASE("tangent nodes propagate directional derivatives") {
  // y(x) = tanh(w x + b); tangent chain must equal (1 - y^2) w v.
  const std::vector<double> p = {1.7, -0.3};
  Tape t;
  t.reset(p.data(), p.size());
  const double x0 = 0.4, v = 1.0;

  Tape::Assembler pas(t, 1, 1);
  pas.set_base(0, std::span<const double>(&x0, 1));
  std::int32_t x = pas.finish();
  Tape::Assembler tas(t, 1, 1);
  tas.set_base(0, std::span<const double>(&v, 1));
  std::int32_t xt = tas.finish();

  x = t.affine(x, 0, 1, 1);
  xt = t.tangent_affine(xt, 0, 1);
  x = t.tanh_mat(x);
  xt = t.tanh_tangent(x, 0, xt);
  Sc dd = t.pick(xt, 0, 0);

  const double y = std::tanh(p[0] * x0 + p[1]);
  CHECK(dd.val() == Catch::Approx((1.0 - y * y) * p[0]).epsilon(1e-12));

  // d(dd)/dw and d(dd)/db against finite differences of the analytic tangent.
  auto tangent = [x0](const std::vector<double>& q) {
    const double yy = std::tanh(q[0] * x0 + q[1]);
    return (1.0 - yy * yy) * q[0];
  };
  std::vector<double> grad(2, 0.0);
  t.backward(dd, 1.0, grad.data());
  CHECK(grad[0] == Catch::Approx(fd(tangent, p, 0)).epsilon(1e-6));
  CHECK(grad[1] == Catch::Approx(fd(tangent, p, 1)).epsilon(1e-6));
}

TEST_CASE("replay reproduces every recorded value bit for bit") {
  const std::vector<double> p = {0.3, -0.8, 1.1, 0.4, 0.05, -0.2, 0.7};
  const double x0[2] = {0.2, -0.5};
  const double dir[2] = {0.6, -0.4};
  Tape t;
  t.reset(p.data(), p.size());
  Sc s = exp(t.param(6)) * 0.3;
  Tape::Assembler as(t, 1, 2);
  as.set_base(0, x0);
  as.add_term(0, s, dir);
  std::int32_t x = as.finish();
  x = t.affine(x, 0, 4, 2);
  x = t.tanh_mat(x);
  Sc out = t.pick(x, 0, 0) / t.pick(x, 0, 1);
  (void)out;

  const std::size_t n = t.arena_size();
  std::vector<double> snap(t.data(0), t.data(0) + n);
  t.replay();
  REQUIRE(std::memcmp(snap.data(), t.data(0), n * sizeof(double)) == 0);
}

TEST_CASE("invalid records are rejected") {
  const std::vector<double> p = {1.0};
  Tape t;
  t.reset(p.data(), 1);
  CHECK_THROWS_AS(t.param(1), std::invalid_argument);
  CHECK_THROWS_AS(t.param(-1), std::invalid_argument);
  CHECK_THROWS_AS(log(t.constant(-2.0)), std::domain_error);
  CHECK_THROWS_AS(pow(t.constant(0.0), 0.5), std::domain_error);

  Tape other;
  other.reset(p.data(), 1);
  Sc a = t.param(0);
  Sc b = other.param(0);
  CHECK_THROWS_AS(a + b, std::logic_error);
}

TEST_CASE("reset rebinds parameters and clears the record") {
  std::vector<double> p = {3.0};
  Tape t;
  t.reset(p.data(), 1);
  Sc y = t.param(0) * 2.0;
  CHECK(y.val() == 6.0);
  const std::vector<double> q = {5.0};
  t.reset(q.data(), 1);
  CHECK(t.size() == 0);
  Sc z = t.param(0) * 2.0;
  CHECK(z.val() == 10.0);
}
