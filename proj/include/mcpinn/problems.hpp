#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "frac_ops.hpp"
#include "net.hpp"
#include "oracle.hpp"
#include "rng.hpp"
#include "samplers.hpp"

// Problem families on the unit ball, the boundary-enforcing ansatz, and the
// synthetic data sets (residual, initial, sensor) drawn from the oracle.
//
// Input conventions for the surrogate network, fixed across the project:
//   ForwardLaplacian      (x_1 .. x_d)
//   ForwardAde/InverseAde (x_1 .. x_d, t)        time in slot d
//   ParametricDiffusion   (x_1 .. x_d, alpha, mu)
// Estimator shift directions cover the spatial slots (or the time slot) and
// are zero-padded into the remaining inputs.

namespace mcpinn {

enum class Family {
  kForwardLaplacian,     // c (-L)^{a/2} u = f
  kForwardAde,           // D_t^g u + c (-L)^{a/2} u + v.grad u = f, coeffs known
  kInverseAde,           // same operator, (alpha, gamma, c, v) trained from sensors
  kParametricDiffusion,  // (-L)^{a/2} u + mu u = f(x, alpha_ref), (alpha, mu) inputs
};

struct ProblemSpec {
  Family family = Family::kForwardLaplacian;
  int d = 2;  // spatial dimension

  // Operator coefficients. For InverseAde these are the hidden truth that
  // synthesizes the data; the trained values start from their own guesses.
  double alpha = 1.5;
  double gamma_ord = 0.5;
  double c = 1.0;
  std::vector<double> v;  // empty = no advection term

  double t_final = 1.0;        // time horizon for the ADE families
  double t_min_frac = 1e-4;    // residual times stay in (t_min_frac * T, T]
  int n_sensors = 20;          // InverseAde observation count
  int n_init = 100;            // initial-condition points for ADE families

  // ParametricDiffusion: forcing order and prior ranges of the input slots.
  double alpha_ref = 1.0;
  double alpha_lo = 0.5, alpha_hi = 1.5;
  double mu_lo = -0.5, mu_hi = 0.5;

  std::vector<int> hidden = {64, 64, 64, 64};

  bool time_dependent() const {
    return family == Family::kForwardAde || family == Family::kInverseAde;
  }

  int input_dim() const {
    if (time_dependent()) return d + 1;
    if (family == Family::kParametricDiffusion) return d + 2;
    return d;
  }

  int time_slot() const { return time_dependent() ? d : -1; }

  NetworkSpec network() const {
    NetworkSpec spec;
    spec.input_dim = input_dim();
    spec.hidden = hidden;
    return spec;
  }

  void validate() const {
    if (d < 1) throw std::invalid_argument("ProblemSpec: d >= 1 required");
    if (!(alpha > 0.0 && alpha < 2.0)) {
      throw std::invalid_argument("ProblemSpec: alpha in (0,2) required");
    }
    if (!v.empty() && static_cast<int>(v.size()) != d) {
      throw std::invalid_argument("ProblemSpec: v must have d components");
    }
    if (time_dependent()) {
      if (!(gamma_ord > 0.0 && gamma_ord < 1.0)) {
        throw std::invalid_argument("ProblemSpec: gamma in (0,1) required");
      }
      if (!(t_final > 0.0) || !(t_min_frac > 0.0 && t_min_frac < 1.0)) {
        throw std::invalid_argument("ProblemSpec: 0 < t_min_frac < 1 and T > 0 required");
      }
      if (n_init < 0) throw std::invalid_argument("ProblemSpec: n_init >= 0 required");
    }
    if (family == Family::kInverseAde && n_sensors < 1) {
      throw std::invalid_argument("ProblemSpec: n_sensors >= 1 required");
    }
    if (family == Family::kParametricDiffusion) {
      if (!(alpha_ref > 0.0 && alpha_ref < 2.0)) {
        throw std::invalid_argument("ProblemSpec: alpha_ref in (0,2) required");
      }
      if (!(0.0 < alpha_lo && alpha_lo < alpha_hi && alpha_hi < 2.0)) {
        throw std::invalid_argument("ProblemSpec: alpha range inside (0,2) required");
      }
      if (!(mu_lo < mu_hi)) {
        throw std::invalid_argument("ProblemSpec: mu_lo < mu_hi required");
      }
    }
    network().validate();
  }
};

// Measurement counts used in the reference inverse runs; other dimensions get
// a proportional default.
inline int default_sensor_count(int d) {
  if (d == 1) return 20;
  if (d == 3) return 80;
  return 20 * d;
}

// Which PDE coefficients become trainable slots of the parameter vector.
struct TrainableFlags {
  bool alpha = false;
  bool gamma_ord = false;
  bool c = false;
  int v_dim = 0;
};

inline TrainableFlags trainable_flags(const ProblemSpec& prob) {
  TrainableFlags f;
  if (prob.family == Family::kInverseAde) {
    f.alpha = true;
    f.gamma_ord = true;
    f.c = true;
    f.v_dim = prob.d;
  }
  return f;
}

inline ParamLayout make_layout(const ProblemSpec& prob) {
  const TrainableFlags f = trainable_flags(prob);
  return make_layout(prob.network(), f.alpha, f.gamma_ord, f.c, f.v_dim);
}

// Boundary-enforcing wrapper around a field: value = relu(1 - |x|^2) * body,
// using the spatial slots only, so the surrogate vanishes identically outside
// the closed unit ball. A shifted point x + s w keeps the multiplier exact:
//   1 - |x + s w|^2 = c0 + c1 s + c2 s^2,
//   c0 = 1 - |x|^2,  c1 = -2 x.w,  c2 = -|w|^2   (spatial parts of x, w).
template <class Inner>
class AnsatzField {
 public:
  using scalar_type = typename Inner::scalar_type;

  AnsatzField(Inner& inner, int d_spatial) : inner_(inner), d_(d_spatial) {
    if (d_spatial < 1) throw std::invalid_argument("AnsatzField: d >= 1 required");
  }

  void eval_batch(std::span<const EvalPoint<scalar_type>> pts, scalar_type* out) {
    inner_.eval_batch(pts, out);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const EvalPoint<scalar_type>& pt = pts[i];
      double c0 = 1.0, c1 = 0.0, c2 = 0.0;
      for (int k = 0; k < d_ && k < static_cast<int>(pt.base.size()); ++k) {
        c0 -= pt.base[k] * pt.base[k];
      }
      if (pt.has_shift) {
        for (int k = 0; k < d_ && k < static_cast<int>(pt.dir.size()); ++k) {
          c1 -= 2.0 * pt.base[k] * pt.dir[k];
          c2 -= pt.dir[k] * pt.dir[k];
        }
      }
      if (c1 == 0.0 && c2 == 0.0) {
        out[i] = out[i] * std::max(c0, 0.0);
      } else {
        const scalar_type mult = relu(c0 + pt.s * c1 + (pt.s * pt.s) * c2);
        out[i] = mult * out[i];
      }
    }
  }

  // Product rule: D_w (M u) = M D_w u + (grad M . w) u, with
  // grad M = -2 x on the spatial slots while the rectifier is active.
  std::pair<scalar_type, scalar_type> eval_with_tangent(
      std::span<const double> base, std::span<const double> dir_const,
      std::span<const std::pair<int, scalar_type>> dir_scaled = {}) {
    auto [val, dd] = inner_.eval_with_tangent(base, dir_const, dir_scaled);
    double c0 = 1.0;
    for (int k = 0; k < d_ && k < static_cast<int>(base.size()); ++k) {
      c0 -= base[k] * base[k];
    }
    if (!(c0 > 0.0)) return {val * 0.0, dd * 0.0};
    double g0 = 0.0;
    for (int k = 0; k < d_ && k < static_cast<int>(dir_const.size()); ++k) {
      g0 += -2.0 * base[k] * dir_const[k];
    }
    scalar_type total = c0 * dd + g0 * val;
    for (const auto& [slot, s] : dir_scaled) {
      if (slot < d_) total = total + (-2.0 * base[slot]) * (s * val);
    }
    return {c0 * val, total};
  }

 private:
  Inner& inner_;
  int d_;
};

// Plain (non-recorded) surrogate value at one point; exactly 0 on and outside
// the unit sphere.
inline double surrogate_value(const ProblemSpec& prob, const ParamVector& p,
                              std::span<const double> coords) {
  double c0 = 1.0;
  for (int k = 0; k < prob.d; ++k) c0 -= coords[k] * coords[k];
  if (!(c0 > 0.0)) return 0.0;
  return c0 * forward(prob.network(), p, coords);
}

// One labeled point: (coords, value). The value is the forcing f_i for
// residual points, g_i for initial points, the observation u_i for sensors,
// and the exact solution for test points.
struct TaggedPoint {
  std::vector<double> coords;
  double value = 0.0;
};

struct Dataset {
  std::vector<TaggedPoint> residual;
  std::vector<TaggedPoint> initial;
  std::vector<TaggedPoint> sensors;
};

namespace detail {

inline double uniform_in(RngStream& s, double lo, double hi) {
  return lo + (hi - lo) * s.next_uniform();
}

}  // namespace detail

// Residual points: x from the collocation mixture (see sample_ball_mixture),
// t uniform in (t_min, T] for the time-dependent families, (alpha, mu)
// uniform over the prior box for the parametric family. The forcing comes
// from the oracle at the drawn point; for InverseAde it uses the hidden true
// coefficients (the forcing is data). Point i is keyed by key.child(i), so
// prefixes agree across batch sizes.
inline std::vector<TaggedPoint> sample_batch(const ProblemSpec& prob, int n,
                                             const RngKey& key) {
  prob.validate();
  if (n < 1) throw std::invalid_argument("sample_batch: n >= 1 required");
  const std::vector<double> zero_v(prob.d, 0.0);
  std::span<const double> v(prob.v.empty() ? zero_v : prob.v);
  std::vector<TaggedPoint> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    RngStream s = key.child(i).stream();
    TaggedPoint pt;
    pt.coords = sample_ball_mixture(prob.d, s);
    switch (prob.family) {
      case Family::kForwardLaplacian:
        pt.value = prob.c * forcing_laplacian(pt.coords, prob.d, prob.alpha);
        break;
      case Family::kForwardAde:
      case Family::kInverseAde: {
        const double t_min = prob.t_min_frac * prob.t_final;
        const double t = t_min + (prob.t_final - t_min) * s.next_uniform();
        pt.value = forcing_ade(pt.coords, t, prob.d, prob.alpha, prob.gamma_ord, prob.c, v);
        pt.coords.push_back(t);
        break;
      }
      case Family::kParametricDiffusion: {
        const double a = detail::uniform_in(s, prob.alpha_lo, prob.alpha_hi);
        const double mu = detail::uniform_in(s, prob.mu_lo, prob.mu_hi);
        pt.value = forcing_laplacian(pt.coords, prob.d, prob.alpha_ref);
        pt.coords.push_back(a);
        pt.coords.push_back(mu);
        break;
      }
    }
    out.push_back(std::move(pt));
  }
  return out;
}

// Initial-condition points (x, t=0) with g_i from the exact solution at the
// true coefficients. Empty for families without a time axis.
inline std::vector<TaggedPoint> make_init_data(const ProblemSpec& prob, const RngKey& key) {
  prob.validate();
  std::vector<TaggedPoint> out;
  if (!prob.time_dependent()) return out;
  out.reserve(prob.n_init);
  for (int i = 0; i < prob.n_init; ++i) {
    RngStream s = key.child(i).stream();
    TaggedPoint pt;
    pt.coords = sample_ball_mixture(prob.d, s);
    pt.value = exact_solution_ade(pt.coords, 0.0, prob.alpha);
    pt.coords.push_back(0.0);
    out.push_back(std::move(pt));
  }
  return out;
}

// Noiseless sensors on the final-time slice: n_sensors points uniform in the
// ball at t = T, valued by the exact solution at the hidden coefficients.
inline std::vector<TaggedPoint> make_sensor_data(const ProblemSpec& prob, const RngKey& key) {
  prob.validate();
  if (prob.family != Family::kInverseAde) {
    throw std::invalid_argument("make_sensor_data: InverseAde family required");
  }
  std::vector<TaggedPoint> out;
  out.reserve(prob.n_sensors);
  for (int i = 0; i < prob.n_sensors; ++i) {
    RngStream s = key.child(i).stream();
    TaggedPoint pt;
    pt.coords = sample_unit_ball(prob.d, s);
    pt.value = exact_solution_ade(pt.coords, prob.t_final, prob.alpha);
    pt.coords.push_back(prob.t_final);
    out.push_back(std::move(pt));
  }
  return out;
}

// Test points for error reporting, valued by the exact solution. The
// parametric family is scored on its (alpha_ref, mu = 0) slice.
inline std::vector<TaggedPoint> make_test_points(const ProblemSpec& prob, const RngKey& key,
                                                 int n = 1000) {
  prob.validate();
  if (n < 1) throw std::invalid_argument("make_test_points: n >= 1 required");
  std::vector<TaggedPoint> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    RngStream s = key.child(i).stream();
    TaggedPoint pt;
    pt.coords = sample_unit_ball(prob.d, s);
    switch (prob.family) {
      case Family::kForwardLaplacian:
        pt.value = exact_solution_laplacian(pt.coords, prob.alpha);
        break;
      case Family::kForwardAde:
      case Family::kInverseAde: {
        const double t_min = prob.t_min_frac * prob.t_final;
        const double t = t_min + (prob.t_final - t_min) * s.next_uniform();
        pt.value = exact_solution_ade(pt.coords, t, prob.alpha);
        pt.coords.push_back(t);
        break;
      }
      case Family::kParametricDiffusion:
        pt.value = exact_solution_laplacian(pt.coords, prob.alpha_ref);
        pt.coords.push_back(prob.alpha_ref);
        pt.coords.push_back(0.0);
        break;
    }
    out.push_back(std::move(pt));
  }
  return out;
}

// Residual-operator coefficients for one point, as tape scalars: trainable
// slots come from the parameter vector, fixed ones enter as constants, and
// the parametric family reads (alpha, mu) off the point's own input slots.
inline ResidualCoeffs<Sc> point_coeffs(const ProblemSpec& prob, const ParamLayout& layout,
                                       Tape& tape, std::span<const double> coords) {
  ResidualCoeffs<Sc> r;
  switch (prob.family) {
    case Family::kForwardLaplacian:
      r.alpha = tape.constant(prob.alpha);
      r.c = tape.constant(prob.c);
      break;
    case Family::kForwardAde:
      r.alpha = tape.constant(prob.alpha);
      r.c = tape.constant(prob.c);
      r.gamma_ord = tape.constant(prob.gamma_ord);
      if (!prob.v.empty()) {
        for (double vk : prob.v) r.v.push_back(tape.constant(vk));
      }
      break;
    case Family::kInverseAde:
      r.alpha = tape.param(layout.pde.alpha);
      r.c = tape.param(layout.pde.c);
      r.gamma_ord = tape.param(layout.pde.gamma);
      for (int k = 0; k < layout.pde.v_dim; ++k) r.v.push_back(tape.param(layout.pde.v + k));
      break;
    case Family::kParametricDiffusion:
      r.alpha = tape.constant(coords[prob.d]);
      r.c = tape.constant(1.0);
      r.mu = tape.constant(coords[prob.d + 1]);
      break;
  }
  return r;
}

// Double-valued counterpart used by oracle-side checks: the trainable slots
// are read from the parameter vector values.
inline ResidualCoeffs<double> point_coeffs_value(const ProblemSpec& prob,
                                                 const ParamVector& p,
                                                 std::span<const double> coords) {
  ResidualCoeffs<double> r;
  switch (prob.family) {
    case Family::kForwardLaplacian:
      r.alpha = prob.alpha;
      r.c = prob.c;
      break;
    case Family::kForwardAde:
      r.alpha = prob.alpha;
      r.c = prob.c;
      r.gamma_ord = prob.gamma_ord;
      if (!prob.v.empty()) r.v = prob.v;
      break;
    case Family::kInverseAde:
      r.alpha = p.values[p.layout.pde.alpha];
      r.c = p.values[p.layout.pde.c];
      r.gamma_ord = p.values[p.layout.pde.gamma];
      for (int k = 0; k < p.layout.pde.v_dim; ++k) r.v.push_back(p.values[p.layout.pde.v + k]);
      break;
    case Family::kParametricDiffusion:
      r.alpha = coords[prob.d];
      r.c = 1.0;
      r.mu = coords[prob.d + 1];
      break;
  }
  return r;
}

}  // namespace mcpinn
