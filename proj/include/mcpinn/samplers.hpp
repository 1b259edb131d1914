#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace mcpinn {

// One draw of X = U^{1/k} (CDF x^k on (0,1], i.e. Beta(k,1)). The underlying
// uniform is retained so the draw can be re-expressed at a different exponent
// without consuming fresh randomness.
struct BetaPowerDraw {
  double value;
  double u;
};

inline BetaPowerDraw sample_beta_power(double k, RngStream& s) {
  if (!(k > 0.0)) throw std::domain_error("sample_beta_power: k > 0 required");
  const double u = s.next_uniform();
  return {std::pow(u, 1.0 / k), u};
}

// Uniform direction on S^{d-1}: normalised Gaussian vector. Consumes exactly
// ceil(d/2) Box-Muller pairs; a zero vector (probability 0) is redrawn.
inline std::vector<double> sample_unit_sphere(int d, RngStream& s) {
  if (d < 1) throw std::invalid_argument("sample_unit_sphere: d >= 1 required");
  std::vector<double> xi(d);
  if (d == 1) {  // exactly +-1, so shifted points are exactly x +- r
    double z0, z1;
    do {
      s.next_normal_pair(z0, z1);
    } while (z0 == 0.0);
    xi[0] = z0 > 0.0 ? 1.0 : -1.0;
    return xi;
  }
  for (;;) {
    double norm2 = 0.0;
    for (int i = 0; i < d; i += 2) {
      double z0, z1;
      s.next_normal_pair(z0, z1);
      xi[i] = z0;
      if (i + 1 < d) xi[i + 1] = z1;
    }
    for (double z : xi) norm2 += z * z;
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (double& z : xi) z *= inv;
      return xi;
    }
  }
}

// Uniform point in the unit ball: direction times U^{1/d}.
inline std::vector<double> sample_unit_ball(int d, RngStream& s) {
  std::vector<double> x = sample_unit_sphere(d, s);
  const double r = sample_beta_power(static_cast<double>(d), s).value;
  for (double& c : x) c *= r;
  return x;
}

// Collocation point in the unit ball: an even mixture of the volume-uniform
// law and a uniform-radius law. Volume sampling alone piles everything onto
// the outer shell once d is large (P(r < 1/2) = 2^-d), leaving the center
// untrained even though the solution peaks there; a uniform radius alone
// starves the shell, where most of the domain's volume lives. Half and half
// keeps every depth and the bulk represented in any dimension.
inline std::vector<double> sample_ball_mixture(int d, RngStream& s) {
  std::vector<double> x = sample_unit_sphere(d, s);
  const bool radial = s.next_uniform() < 0.5;
  const double r = radial ? s.next_uniform() : sample_beta_power(static_cast<double>(d), s).value;
  for (double& c : x) c *= r;
  return x;
}

// The per-estimate bundle of instrumental randomness: m unit directions plus
// the three uniforms behind the inner radius, outer radius and temporal
// fraction of each sample. Only uniforms are stored; the radii are derived
// from them at the current (alpha, gamma), which is what makes the estimators
// differentiable in the fractional orders with frozen randomness.
struct SampleGroup {
  int m = 0;
  int d = 0;
  std::vector<double> xi;     // m*d unit directions, row j at xi[j*d]
  std::vector<double> u_in;   // m
  std::vector<double> u_out;  // m
  std::vector<double> u_tau;  // m

  const double* dir(int j) const { return xi.data() + static_cast<std::size_t>(j) * d; }
};

// Draw order per sample j: direction, then u_in, u_out, u_tau. Fixed so a
// group is a pure function of its stream address.
inline SampleGroup make_sample_group(int m, int d, RngStream& s) {
  if (m < 1) throw std::invalid_argument("make_sample_group: m >= 1 required");
  SampleGroup g;
  g.m = m;
  g.d = d;
  g.xi.resize(static_cast<std::size_t>(m) * d);
  g.u_in.resize(m);
  g.u_out.resize(m);
  g.u_tau.resize(m);
  for (int j = 0; j < m; ++j) {
    std::vector<double> xi = sample_unit_sphere(d, s);
    for (int k = 0; k < d; ++k) g.xi[static_cast<std::size_t>(j) * d + k] = xi[k];
    g.u_in[j] = s.next_uniform();
    g.u_out[j] = s.next_uniform();
    g.u_tau[j] = s.next_uniform();
  }
  return g;
}

// Derived values. Written as exp(log(u)/k) rather than pow so the identical
// expression records onto the autodiff tape when the exponent is trainable.
//   inner:  r_in/r0 ~ Beta(2-alpha, 1)   => r_in = r0 * u^{1/(2-alpha)} <= r0
//   outer:  r0/r_out ~ Beta(alpha, 1)    => r_out = r0 * u^{-1/alpha}  >= r0
//   tau:    tau ~ Beta(1-gamma, 1)       => tau = u^{1/(1-gamma)} in (0,1]
template <class T>
T inner_radius(double u, const T& alpha, double r0) {
  using std::exp;
  return r0 * exp(std::log(u) / (2.0 - alpha));
}

template <class T>
T outer_radius(double u, const T& alpha, double r0) {
  using std::exp;
  return r0 * exp(-std::log(u) / alpha);
}

template <class T>
T time_fraction(double u, const T& gamma_ord) {
  using std::exp;
  return exp(std::log(u) / (1.0 - gamma_ord));
}

}  // namespace mcpinn
