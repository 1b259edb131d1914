#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "net.hpp"
#include "samplers.hpp"
#include "special.hpp"

// Monte Carlo estimators of the nonlocal operators applied to a field.
//
// A field is anything with
//   using scalar_type = T;                           // double or Sc
//   void eval_batch(span<const EvalPoint<T>>, T*);   // one value per point
//   pair<T,T> eval_with_tangent(base, dir_const, dir_scaled);
// NetTapeField records onto a tape (T = Sc); CallableField below wraps a
// plain function for oracle-side checks (T = double).
//
// The estimators keep the instrumental randomness (a SampleGroup) separate
// from the operator order: radii are re-derived from the group's uniforms at
// the current alpha/gamma, so with T = Sc the same draws give estimates that
// are differentiable in the fractional orders.

namespace mcpinn {

struct EstimatorConfig {
  int m = 20;         // samples per group
  double r0 = 0.2;    // split radius between the singular and tail regions
  double eps = 1e-3;  // inner radii are floored at eps
  double eps_t = 1e-6;  // temporal lookback is floored at eps_t

  void validate() const {
    if (m < 1) throw std::invalid_argument("EstimatorConfig: m >= 1 required");
    if (!(r0 > 0.0)) throw std::invalid_argument("EstimatorConfig: r0 > 0 required");
    if (!(eps > 0.0 && eps < r0)) {
      throw std::invalid_argument("EstimatorConfig: 0 < eps < r0 required");
    }
    if (!(eps_t > 0.0)) throw std::invalid_argument("EstimatorConfig: eps_t > 0 required");
  }
};

// Coefficients of the residual operator
//   [gamma] D_t^gamma u + c (-L)^{alpha/2} u + v . grad u + [mu] u.
template <class T>
struct ResidualCoeffs {
  T alpha{};
  T c{};
  std::optional<T> gamma_ord;
  std::vector<T> v;
  std::optional<T> mu;
};

// Values shared by every estimator group at one residual point. Filling it
// once and passing it to both groups of a pair is what keeps the evaluation
// count at 8m+1 per point for the stationary operator.
template <class T>
struct CenterCache {
  T u_center{};
  bool has_center = false;
  T u_origin{};  // value at time 0, same spatial point
  bool has_origin = false;
  T advection{};  // v . grad u at the center
  bool has_advection = false;
};

// Wraps a plain callable (span<const double> -> double) as a field. The
// tangent is a central finite difference; every underlying call counts as one
// evaluation.
template <class F>
class CallableField {
 public:
  using scalar_type = double;

  explicit CallableField(F f, double fd_step = 1e-6) : f_(std::move(f)), h_(fd_step) {}

  std::uint64_t evals() const { return evals_; }

  void eval_batch(std::span<const EvalPoint<double>> pts, double* out) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      y_.assign(pts[i].base.begin(), pts[i].base.end());
      if (pts[i].has_shift) {
        for (std::size_t k = 0; k < pts[i].dir.size(); ++k) y_[k] += pts[i].s * pts[i].dir[k];
      }
      out[i] = f_(std::span<const double>(y_));
      ++evals_;
    }
  }

  std::pair<double, double> eval_with_tangent(
      std::span<const double> base, std::span<const double> dir_const,
      std::span<const std::pair<int, double>> dir_scaled = {}) {
    y_.assign(base.begin(), base.end());
    const double value = f_(std::span<const double>(y_));
    ++evals_;
    std::vector<double> dir(base.size(), 0.0);
    for (std::size_t k = 0; k < dir_const.size(); ++k) dir[k] = dir_const[k];
    for (const auto& [slot, s] : dir_scaled) dir[slot] += s;
    for (std::size_t k = 0; k < base.size(); ++k) y_[k] = base[k] + h_ * dir[k];
    const double up = f_(std::span<const double>(y_));
    for (std::size_t k = 0; k < base.size(); ++k) y_[k] = base[k] - h_ * dir[k];
    const double dn = f_(std::span<const double>(y_));
    evals_ += 2;
    return {value, (up - dn) / (2.0 * h_)};
  }

 private:
  F f_;
  double h_;
  std::vector<double> y_;
  std::uint64_t evals_ = 0;
};

template <class F>
CallableField(F, double) -> CallableField<F>;

namespace detail {

template <class T>
void require_order(const T& alpha) {
  const double a = scalar_value(alpha);
  if (!(a > 0.0 && a < 2.0)) {
    throw std::domain_error("mc_frac_laplacian: alpha in (0,2) required");
  }
}

template <class T>
void require_temporal_order(const T& g) {
  const double gv = scalar_value(g);
  if (!(gv > 0.0 && gv < 1.0)) {
    throw std::domain_error("mc_caputo: gamma in (0,1) required");
  }
}

}  // namespace detail

// Per-sample estimates of (-L)^{alpha/2} u at coords (spatial slots first).
// Sample j contributes
//   pre_in  * (2u(x) - u(x - r_e xi) - u(x + r_e xi)) / r_e^2
// + pre_out * (2u(x) - u(x - r_o xi) - u(x + r_o xi)),
// with r_e = max(eps, r0 U^{1/(2-alpha)}) and r_o = r0 U^{-1/alpha} derived
// from the group's frozen uniforms. The mean over j is unbiased for the
// eps = 0 operator; the floor's bias is O(eps^2) and deliberate.
// Evaluations: 4m, plus 1 for the center unless the cache already holds it.
template <class Field, class T = typename Field::scalar_type>
void mc_frac_laplacian_samples(Field& field, std::span<const double> coords, int d_spatial,
                               const SampleGroup& g, const T& alpha,
                               const EstimatorConfig& cfg, CenterCache<T>& cache,
                               std::vector<T>& out) {
  using std::exp;
  using std::log;
  using std::max;
  cfg.validate();
  detail::require_order(alpha);
  if (g.d != d_spatial || d_spatial < 1) {
    throw std::invalid_argument("mc_frac_laplacian_samples: group dimension mismatch");
  }
  if (static_cast<int>(coords.size()) < d_spatial) {
    throw std::invalid_argument("mc_frac_laplacian_samples: coords shorter than d");
  }
  if (g.m != cfg.m) {
    throw std::invalid_argument("mc_frac_laplacian_samples: group size != cfg.m");
  }

  const int m = g.m;
  std::vector<T> r_eps(m), r_out(m);
  for (int j = 0; j < m; ++j) {
    r_eps[j] = max(inner_radius(g.u_in[j], alpha, cfg.r0), cfg.eps);
    r_out[j] = outer_radius(g.u_out[j], alpha, cfg.r0);
  }

  std::vector<EvalPoint<T>> pts;
  pts.reserve(4 * static_cast<std::size_t>(m) + 1);
  const bool need_center = !cache.has_center;
  if (need_center) pts.push_back({coords});
  for (int j = 0; j < m; ++j) {
    const std::span<const double> xi(g.dir(j), static_cast<std::size_t>(d_spatial));
    pts.push_back({coords, xi, -r_eps[j], true});
    pts.push_back({coords, xi, r_eps[j], true});
    pts.push_back({coords, xi, -r_out[j], true});
    pts.push_back({coords, xi, r_out[j], true});
  }
  std::vector<T> vals(pts.size());
  field.eval_batch(pts, vals.data());
  if (need_center) {
    cache.u_center = vals[0];
    cache.has_center = true;
  }

  const T cs = c_d_alpha(d_spatial, alpha) * sphere_area(d_spatial);
  const T pre_in = cs * exp((2.0 - alpha) * std::log(cfg.r0)) / (2.0 * (2.0 - alpha));
  const T pre_out = cs * exp(-(alpha * std::log(cfg.r0))) / (2.0 * alpha);

  out.resize(m);
  const std::size_t base = need_center ? 1 : 0;
  for (int j = 0; j < m; ++j) {
    const T& in_m = vals[base + 4 * j + 0];
    const T& in_p = vals[base + 4 * j + 1];
    const T& out_m = vals[base + 4 * j + 2];
    const T& out_p = vals[base + 4 * j + 3];
    const T diff_in = 2.0 * cache.u_center - in_m - in_p;
    const T diff_out = 2.0 * cache.u_center - out_m - out_p;
    out[j] = pre_in * diff_in / (r_eps[j] * r_eps[j]) + pre_out * diff_out;
  }
}

// Per-sample estimates of the Caputo derivative D_t^gamma u at coords, whose
// slot time_slot holds t > 0. Sample j contributes
//   (1/G(1-g)) [ g/(1-g) t^{1-g} (u(t) - u(t - q t)) / (q t) + (u(t) - u(0)) / t^g ],
// q = max(U^{1/(1-g)}, eps_t / t): the lookback never shrinks below eps_t.
// Evaluations: m, plus center and time-origin values unless cached.
template <class Field, class T = typename Field::scalar_type>
void mc_caputo_samples(Field& field, std::span<const double> coords, int time_slot,
                       const SampleGroup& g, const T& gamma_ord,
                       const EstimatorConfig& cfg, CenterCache<T>& cache,
                       std::vector<T>& out) {
  using std::exp;
  using std::log;
  using std::max;
  cfg.validate();
  detail::require_temporal_order(gamma_ord);
  if (time_slot < 0 || time_slot >= static_cast<int>(coords.size())) {
    throw std::invalid_argument("mc_caputo_samples: time_slot out of range");
  }
  if (g.m != cfg.m) {
    throw std::invalid_argument("mc_caputo_samples: group size != cfg.m");
  }
  const double t = coords[time_slot];
  if (!(t > 0.0)) throw std::domain_error("mc_caputo_samples: t > 0 required");
  if (!(cfg.eps_t < t)) {
    throw std::domain_error("mc_caputo_samples: eps_t < t required");
  }

  const int m = g.m;
  std::vector<T> shift(m);  // -q t, the recorded time offset
  for (int j = 0; j < m; ++j) {
    const T q = max(time_fraction(g.u_tau[j], gamma_ord), cfg.eps_t / t);
    shift[j] = -(q * t);
  }

  std::vector<double> e_t(static_cast<std::size_t>(time_slot) + 1, 0.0);
  e_t[time_slot] = 1.0;
  std::vector<double> origin(coords.begin(), coords.end());
  origin[time_slot] = 0.0;

  std::vector<EvalPoint<T>> pts;
  pts.reserve(static_cast<std::size_t>(m) + 2);
  const bool need_center = !cache.has_center;
  const bool need_origin = !cache.has_origin;
  if (need_center) pts.push_back({coords});
  if (need_origin) pts.push_back({origin});
  for (int j = 0; j < m; ++j) pts.push_back({coords, e_t, shift[j], true});
  std::vector<T> vals(pts.size());
  field.eval_batch(pts, vals.data());
  std::size_t base = 0;
  if (need_center) {
    cache.u_center = vals[base++];
    cache.has_center = true;
  }
  if (need_origin) {
    cache.u_origin = vals[base++];
    cache.has_origin = true;
  }

  const T inv_gamma = 1.0 / gamma(1.0 - gamma_ord);
  const T hist_coef = inv_gamma * (gamma_ord / (1.0 - gamma_ord)) *
                      exp((1.0 - gamma_ord) * std::log(t));
  const T init_term = inv_gamma * exp(-(gamma_ord * std::log(t))) *
                      (cache.u_center - cache.u_origin);

  out.resize(m);
  for (int j = 0; j < m; ++j) {
    const T& u_back = vals[base + j];
    out[j] = hist_coef * (cache.u_center - u_back) / (-shift[j]) + init_term;
  }
}

namespace detail {

template <class T>
T mean(const std::vector<T>& xs) {
  T acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc / static_cast<double>(xs.size());
}

}  // namespace detail

// Group-mean estimate of (-L)^{alpha/2} u at coords.
template <class Field, class T = typename Field::scalar_type>
T mc_frac_laplacian(Field& field, std::span<const double> coords, const SampleGroup& g,
                    const T& alpha, const EstimatorConfig& cfg,
                    CenterCache<T>* cache = nullptr) {
  CenterCache<T> local;
  CenterCache<T>& c = cache ? *cache : local;
  std::vector<T> samples;
  mc_frac_laplacian_samples(field, coords, static_cast<int>(coords.size()), g, alpha, cfg,
                            c, samples);
  return detail::mean(samples);
}

// Group-mean estimate of D_t^gamma u at coords.
template <class Field, class T = typename Field::scalar_type>
T mc_caputo(Field& field, std::span<const double> coords, int time_slot,
            const SampleGroup& g, const T& gamma_ord, const EstimatorConfig& cfg,
            CenterCache<T>* cache = nullptr) {
  CenterCache<T> local;
  CenterCache<T>& c = cache ? *cache : local;
  std::vector<T> samples;
  mc_caputo_samples(field, coords, time_slot, g, gamma_ord, cfg, c, samples);
  return detail::mean(samples);
}

// Per-sample estimates of the full residual operator
//   [gamma] D_t^gamma u + c (-L)^{alpha/2} u + v . grad u + [mu] u
// at coords = (x_1..x_d, [t], [extras...]). Shared terms (advection, reaction,
// center) are computed once per cache, so a pair of groups at the same point
// costs 8m+1 evaluations for the stationary operator.
template <class Field, class T = typename Field::scalar_type>
void residual_op_samples(Field& field, std::span<const double> coords, int d_spatial,
                         const SampleGroup& g, const ResidualCoeffs<T>& coeffs,
                         const EstimatorConfig& cfg, CenterCache<T>& cache,
                         std::vector<T>& out) {
  mc_frac_laplacian_samples(field, coords, d_spatial, g, coeffs.alpha, cfg, cache, out);
  for (T& s : out) s = coeffs.c * s;

  if (coeffs.gamma_ord) {
    std::vector<T> caputo;
    mc_caputo_samples(field, coords, d_spatial, g, *coeffs.gamma_ord, cfg, cache, caputo);
    for (int j = 0; j < g.m; ++j) out[j] = out[j] + caputo[j];
  }

  if (!coeffs.v.empty()) {
    if (static_cast<int>(coeffs.v.size()) != d_spatial) {
      throw std::invalid_argument("residual_op_samples: v dimension mismatch");
    }
    if (!cache.has_advection) {
      const std::vector<double> zero(d_spatial, 0.0);
      std::vector<std::pair<int, T>> scaled;
      scaled.reserve(coeffs.v.size());
      for (int k = 0; k < d_spatial; ++k) scaled.push_back({k, coeffs.v[k]});
      auto [value, dd] = field.eval_with_tangent(coords, zero, scaled);
      if (!cache.has_center) {
        cache.u_center = value;
        cache.has_center = true;
      }
      cache.advection = dd;
      cache.has_advection = true;
    }
    for (T& s : out) s = s + cache.advection;
  }

  if (coeffs.mu) {
    const T reaction = *coeffs.mu * cache.u_center;
    for (T& s : out) s = s + reaction;
  }
}

// Group-mean residual estimate.
template <class Field, class T = typename Field::scalar_type>
T residual_estimate(Field& field, std::span<const double> coords, int d_spatial,
                    const SampleGroup& g, const ResidualCoeffs<T>& coeffs,
                    const EstimatorConfig& cfg, CenterCache<T>* cache = nullptr) {
  CenterCache<T> local;
  CenterCache<T>& c = cache ? *cache : local;
  std::vector<T> samples;
  residual_op_samples(field, coords, d_spatial, g, coeffs, cfg, c, samples);
  return detail::mean(samples);
}

}  // namespace mcpinn
