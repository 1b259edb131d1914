#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "quad.hpp"
#include "special.hpp"

// Deterministic reference implementations: manufactured solutions with their
// closed-form forcings, and quadrature evaluations of the nonlocal operators.
// These are the yardsticks the stochastic estimators are tested against; they
// share no code with the estimators beyond the gamma function.

namespace mcpinn {

inline double squared_norm(std::span<const double> x) {
  double s = 0.0;
  for (double c : x) s += c * c;
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// Manufactured solutions on the unit ball.
// ---------------------------------------------------------------------------

// u(x) = (1 - |x|^2)_+^{1 + alpha/2}; C^1 across the boundary, zero outside.
inline double exact_solution_laplacian(std::span<const double> x, double alpha) {
  const double s = 1.0 - squared_norm(x);
  return s > 0.0 ? std::pow(s, 1.0 + 0.5 * alpha) : 0.0;
}

inline std::vector<double> grad_exact_solution_laplacian(std::span<const double> x,
                                                         double alpha) {
  const double s = 1.0 - squared_norm(x);
  std::vector<double> g(x.size(), 0.0);
  if (s > 0.0) {
    const double f = -2.0 * (1.0 + 0.5 * alpha) * std::pow(s, 0.5 * alpha);
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = f * x[i];
  }
  return g;
}

// Amplitude of the fractional Laplacian of the manufactured profile:
// (-L)^{alpha/2} (1-|x|^2)_+^{1+alpha/2} = A1 (1 - (1 + alpha/d) |x|^2)
// inside the ball, with A1 = 2^alpha G(2+alpha/2) G((alpha+d)/2) / G(d/2).
inline double forcing_amplitude(int d, double alpha) {
  return std::pow(2.0, alpha) * gamma(2.0 + 0.5 * alpha) *
         gamma(0.5 * (alpha + d)) / gamma(0.5 * d);
}

inline double forcing_laplacian(std::span<const double> x, int d, double alpha) {
  return forcing_amplitude(d, alpha) *
         (1.0 - (1.0 + alpha / d) * squared_norm(x));
}

// (-L)^{alpha/2} (1-|x|^2)_+^{alpha/2} is constant inside the ball:
// A0 = 2^alpha G(1+alpha/2) G((alpha+d)/2) / G(d/2).
inline double constant_profile_value(int d, double alpha) {
  return std::pow(2.0, alpha) * gamma(1.0 + 0.5 * alpha) *
         gamma(0.5 * (alpha + d)) / gamma(0.5 * d);
}

// Space-time manufactured solution u(x,t) = e^{-t} (1-|x|^2)_+^{1+alpha/2}.
inline double exact_solution_ade(std::span<const double> x, double t, double alpha) {
  return std::exp(-t) * exact_solution_laplacian(x, alpha);
}

// Forcing that makes the manufactured solution solve
//   D_t^gamma u + c (-L)^{alpha/2} u + v . grad u = f
// on the unit ball. The temporal factor uses the Caputo derivative of e^{-t},
// D_t^gamma e^{-t} = -t^{1-gamma} E_{1, 2-gamma}(-t).
inline double forcing_ade(std::span<const double> x, double t, int d, double alpha,
                          double gamma_ord, double c, std::span<const double> v) {
  const double profile = exact_solution_laplacian(x, alpha);
  const double caputo_exp = -std::pow(t, 1.0 - gamma_ord) *
                            mittag_leffler(1.0, 2.0 - gamma_ord, -t);
  const std::vector<double> g = grad_exact_solution_laplacian(x, alpha);
  return caputo_exp * profile + c * std::exp(-t) * forcing_laplacian(x, d, alpha) +
         std::exp(-t) * dot(v, g);
}

// Synthetic sensor-response family for testing posterior inference without a
// trained surrogate: exact at (alpha0, 0), smoothly sensitive to both the
// order alpha and the reaction coefficient mu.
inline double abc_standin_solution(std::span<const double> x, int d, double alpha,
                                   double mu, double alpha0) {
  const double s = 1.0 - squared_norm(x);
  if (s <= 0.0) return 0.0;
  const double profile = std::pow(s, 1.0 + 0.5 * alpha);
  const double scale = forcing_amplitude(d, alpha0) / forcing_amplitude(d, alpha);
  const double reaction = 1.0 - mu * std::pow(s, 0.5 * alpha) / constant_profile_value(d, alpha);
  return profile * scale * reaction;
}

// ---------------------------------------------------------------------------
// Quadrature evaluation of the nonlocal operators.
// ---------------------------------------------------------------------------

namespace detail {

// Integral over r in (0, inf) of (2u(x) - u(x-r xi) - u(x+r xi)) r^{-1-alpha}
// for a field supported in the closed unit ball and |x| < 1. The head
// [0, r_a] is regularised by r = r_a v^{1/(2-alpha)}, which absorbs the
// r^{1-alpha} weight exactly; the middle is split at the two radii where the
// rays exit the ball; past both exits the integrand is exactly 2u(x)r^{-1-a}
// and the tail is analytic.
template <class F>
double radial_second_difference_integral(F&& u, std::span<const double> x,
                                         std::span<const double> xi, double alpha,
                                         double u0, const QuadSpec& spec) {
  const std::size_t d = x.size();
  const double b = dot(x, xi);
  const double disc = b * b + 1.0 - squared_norm(x);
  if (!(disc > 0.0)) throw std::domain_error("quad_frac_laplacian: |x| < 1 required");
  const double r_plus = -b + std::sqrt(disc);   // exit of x + r xi
  const double r_minus = b + std::sqrt(disc);   // exit of x - r xi
  const double r_near = std::min(r_plus, r_minus);
  const double r_far = std::max(r_plus, r_minus);

  std::vector<double> y(d);
  auto second_diff = [&](double r) {
    double acc = 2.0 * u0;
    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + r * xi[i];
    acc -= u(std::span<const double>(y));
    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] - r * xi[i];
    acc -= u(std::span<const double>(y));
    return acc;
  };

  QuadSpec part = spec;
  part.abs_tol = spec.abs_tol / 3.0;

  // Head: integrand in v is r_a^{2-alpha}/(2-alpha) * phi(r(v)) with
  // phi = second_diff / r^2 bounded; below r_floor the second difference is
  // pure cancellation, and phi is frozen at the floor.
  const double r_a = 0.5 * r_near;
  const double r_floor = 1e-5;
  const double head_scale = std::pow(r_a, 2.0 - alpha) / (2.0 - alpha);
  auto head = [&](double v) {
    const double r = std::max(r_a * std::pow(v, 1.0 / (2.0 - alpha)), r_floor);
    return second_diff(r) / (r * r);
  };
  const double head_value = head_scale * integrate(head, 0.0, 1.0, part);

  // Middle: direct integrand, kinked where each ray crosses the boundary.
  auto mid = [&](double r) { return second_diff(r) * std::pow(r, -1.0 - alpha); };
  const double mid_value =
      integrate_pieces(mid, {r_a, r_near, r_far}, part);

  const double tail_value = 2.0 * u0 * std::pow(r_far, -alpha) / alpha;
  return head_value + mid_value + tail_value;
}

}  // namespace detail

// Quadrature evaluation of the integral fractional Laplacian
//   (-L)^{alpha/2} u(x) = c_{d,alpha} P.V. int (u(x)-u(y)) |x-y|^{-d-alpha} dy
// for a field u supported in the closed unit ball, at an interior point x.
// d = 1 integrates the paired radial integrand, d = 2 adds a spectrally
// convergent periodic trapezoid over directions, d = 3 a Gauss-Legendre by
// trapezoid product rule over the sphere.
template <class F>
double quad_frac_laplacian(F&& u, std::span<const double> x, double alpha,
                           const QuadSpec& spec = {}) {
  const int d = static_cast<int>(x.size());
  if (d < 1 || d > 3) {
    throw std::invalid_argument("quad_frac_laplacian: d in {1,2,3} supported");
  }
  if (!(alpha > 0.0 && alpha < 2.0)) {
    throw std::domain_error("quad_frac_laplacian: alpha in (0,2) required");
  }
  if (!(squared_norm(x) < 1.0)) {
    throw std::domain_error("quad_frac_laplacian: |x| < 1 required");
  }
  const double cd = c_d_alpha(d, alpha);
  const double u0 = u(x);

  if (d == 1) {
    const std::array<double, 1> xi = {1.0};
    return cd * detail::radial_second_difference_integral(u, x, xi, alpha, u0, spec);
  }

  if (d == 2) {
    // value = c * int_0^pi I(theta) dtheta; I is pi-periodic and smooth, so
    // the trapezoid sum converges spectrally under doubling.
    const double pi = 3.14159265358979323846264338328;
    auto ray = [&](double theta) {
      const std::array<double, 2> xi = {std::cos(theta), std::sin(theta)};
      return detail::radial_second_difference_integral(u, x, xi, alpha, u0, spec);
    };
    int n = 8;
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += ray(pi * k / n);
    double t_prev = sum * pi / n;
    for (; n <= 4096; ) {
      for (int k = 0; k < n; ++k) sum += ray(pi * (k + 0.5) / n);
      n *= 2;
      const double t_next = sum * pi / n;
      if (std::abs(t_next - t_prev) < 0.5 * spec.abs_tol + 1e-12 * std::abs(t_next)) {
        return cd * t_next;
      }
      t_prev = t_next;
    }
    throw AccuracyError("quad_frac_laplacian: direction sum did not settle", cd * t_prev);
  }

  // d == 3: directions (sqrt(1-c^2) cos t, sqrt(1-c^2) sin t, c) over the
  // full sphere; the pairing of xi with -xi is what the 1/2 factor absorbs.
  const double pi = 3.14159265358979323846264338328;
  std::vector<double> gl_x, gl_w;
  gauss_legendre(48, gl_x, gl_w);
  const int n_t = 96;
  double acc = 0.0;
  for (int i = 0; i < 48; ++i) {
    const double c = gl_x[i];
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    double ring = 0.0;
    for (int k = 0; k < n_t; ++k) {
      const double t = 2.0 * pi * k / n_t;
      const std::array<double, 3> xi = {s * std::cos(t), s * std::sin(t), c};
      ring += detail::radial_second_difference_integral(u, x, xi, alpha, u0, spec);
    }
    acc += gl_w[i] * ring * (2.0 * pi / n_t);
  }
  return cd * 0.5 * acc;
}

// Quadrature evaluation of the Caputo derivative of order gamma in (0,1),
//   D_t^gamma u(t) = (1/G(1-gamma)) int_0^t u'(s) (t-s)^{-gamma} ds,
// given the time derivative u'. The substitution s = t - w^{1/(1-gamma)}
// removes the endpoint singularity exactly.
template <class F>
double quad_caputo(F&& uprime, double t, double gamma_ord, const QuadSpec& spec = {}) {
  if (!(t > 0.0)) throw std::domain_error("quad_caputo: t > 0 required");
  if (!(gamma_ord > 0.0 && gamma_ord < 1.0)) {
    throw std::domain_error("quad_caputo: gamma in (0,1) required");
  }
  const double one_mg = 1.0 - gamma_ord;
  auto f = [&](double w) { return uprime(t - std::pow(w, 1.0 / one_mg)); };
  return integrate(f, 0.0, std::pow(t, one_mg), spec) / (one_mg * gamma(one_mg));
}

}  // namespace mcpinn
