#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace mcpinn {

// scalar_value(x) extracts a plain double from whatever scalar type the
// templated math below is instantiated with. The autodiff tape overloads it
// for recorded scalars.
inline double scalar_value(double x) { return x; }

namespace detail {
// Lanczos approximation, g = 7, 9 coefficients. Relative error is a few 1e-14
// over the tested range |x| <= 30 (away from poles).
inline constexpr double kLanczosG = 7.0;
inline constexpr double kLanczos[9] = {
    0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
    771.32342877765313,      -176.61502916214059,    12.507343278686905,
    -0.13857109526572012,     9.9843695780195716e-6, 1.5056327351493116e-7};
}  // namespace detail

// Gamma function for real non-pole arguments, usable with double or with
// tape-recorded scalars (branching happens on the primal value, so a recorded
// gamma is smooth in a neighbourhood of the evaluation point).
template <class T>
T gamma(const T& x) {
  using std::exp;
  using std::log;
  using std::sin;
  const double xv = scalar_value(x);
  if (xv <= 0.0 && xv == std::floor(xv)) {
    throw std::domain_error("gamma: pole at non-positive integer " + std::to_string(xv));
  }
  if (xv < 0.5) {
    // Reflection: gamma(x) = pi / (sin(pi x) * gamma(1 - x)).
    const double pi = 3.14159265358979323846264338328;
    return pi / (sin(pi * x) * gamma(1.0 - x));
  }
  T z = x - 1.0;
  T a = detail::kLanczos[0] + detail::kLanczos[1] / (z + 1.0);
  for (int i = 2; i < 9; ++i) a = a + detail::kLanczos[i] / (z + static_cast<double>(i));
  T t = z + (detail::kLanczosG + 0.5);
  // sqrt(2 pi) * t^(z + 1/2) * e^(-t) * a, with the power via exp/log (t > 0).
  return 2.50662827463100050242 * exp((z + 0.5) * log(t) - t) * a;
}

// Reciprocal gamma, entire in x; evaluates to exactly 0 at the poles of
// gamma (sin(pi x) alone would leave roundoff there).
inline double rgamma(double x) {
  if (x > 0.5) return 1.0 / gamma(x);
  if (x == std::floor(x)) return 0.0;
  const double pi = 3.14159265358979323846264338328;
  // 1/gamma(x) = sin(pi x) * gamma(1 - x) / pi.
  return std::sin(pi * x) * gamma(1.0 - x) / pi;
}

// Two-parameter Mittag-Leffler function E_{a,b}(t) by direct series
// summation. Intended for the moderate-argument regime |t| <= 50 where the
// series is the reference method; truncation when the absolute term stays
// below 1e-15 for 20 consecutive terms.
inline double mittag_leffler(double a, double b, double t) {
  if (!(a > 0.0)) throw std::domain_error("mittag_leffler: requires a > 0");
  if (!(std::abs(t) <= 50.0)) {
    throw std::domain_error("mittag_leffler: series regime restricted to |t| <= 50");
  }
  double sum = 0.0;
  double tk = 1.0;  // t^k
  int quiet = 0;
  for (int k = 0; k < 100000; ++k) {
    const double term = tk * rgamma(a * k + b);
    sum += term;
    tk *= t;
    if (std::abs(term) < 1e-15) {
      if (++quiet >= 20) return sum;
    } else {
      quiet = 0;
    }
  }
  throw std::runtime_error("mittag_leffler: series failed to settle");
}

// Constants of the integral fractional Laplacian in dimension d at order
// alpha: the kernel normalisation c_{d,alpha} and the unit-sphere area.
struct FracConstants {
  double c_d_alpha = 0.0;
  double sphere_area = 0.0;
};

inline double sphere_area(int d) {
  if (d < 1) throw std::invalid_argument("sphere_area: d >= 1 required");
  const double pi = 3.14159265358979323846264338328;
  return 2.0 * std::pow(pi, 0.5 * d) / gamma(0.5 * d);
}

// c_{d,alpha} = 2^alpha Gamma((alpha+d)/2) / (pi^{d/2} |Gamma(-alpha/2)|),
// computed through the reflection identity
// |Gamma(-alpha/2)| = pi / (sin(pi alpha/2) Gamma(1 + alpha/2)) for
// alpha in (0, 2), which keeps every gamma argument positive. The same
// expression is used with tape scalars when alpha is trainable.
template <class T>
T c_d_alpha(int d, const T& alpha) {
  using std::exp;
  using std::log;
  using std::sin;
  const double av = scalar_value(alpha);
  if (d < 1) throw std::invalid_argument("c_d_alpha: d >= 1 required");
  if (!(av > 0.0 && av < 2.0)) throw std::domain_error("c_d_alpha: alpha in (0,2) required");
  const double pi = 3.14159265358979323846264338328;
  const double log2 = 0.69314718055994530941723212146;
  return exp(alpha * log2) * gamma((alpha + static_cast<double>(d)) * 0.5) *
         sin((pi * 0.5) * alpha) * gamma(1.0 + 0.5 * alpha) /
         std::pow(pi, 0.5 * d + 1.0);
}

inline FracConstants frac_constants(int d, double alpha) {
  FracConstants fc;
  fc.c_d_alpha = c_d_alpha(d, alpha);
  fc.sphere_area = sphere_area(d);
  return fc;
}

}  // namespace mcpinn
