#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcpinn/problems.hpp"

// Rejection-sampling posterior over the diffusion order and reaction
// coefficient of the parametric problem, plus the one-dimensional kernel
// density estimates used to report it. The sampler takes any callable
// u(x | alpha, mu), so it runs equally against a trained surrogate or an
// analytic stand-in.

namespace mcpinn {

struct AbcConfig {
  std::int64_t n_draws = 100000;
  double tolerance = 2.5e-4;
  double alpha_lo = 0.5;
  double alpha_hi = 1.5;
  double mu_lo = -0.5;
  double mu_hi = 0.5;
  std::vector<TaggedPoint> sensors;

  void validate() const {
    if (n_draws < 1) throw std::invalid_argument("AbcConfig: n_draws >= 1 required");
    if (!(tolerance > 0.0)) throw std::invalid_argument("AbcConfig: tolerance > 0 required");
    if (!(alpha_lo < alpha_hi) || !(alpha_lo > 0.0) || !(alpha_hi < 2.0)) {
      throw std::invalid_argument("AbcConfig: alpha prior must be a range inside (0, 2)");
    }
    if (!(mu_lo < mu_hi)) throw std::invalid_argument("AbcConfig: mu prior range is empty");
    if (sensors.empty()) throw std::invalid_argument("AbcConfig: at least one sensor required");
  }

  // The posterior is only meaningful where the surrogate was trained.
  void require_within(const ProblemSpec& prob) const {
    if (alpha_lo < prob.alpha_lo || alpha_hi > prob.alpha_hi || mu_lo < prob.mu_lo ||
        mu_hi > prob.mu_hi) {
      throw std::invalid_argument("AbcConfig: prior exceeds the surrogate's training ranges");
    }
  }
};

struct PosteriorSample {
  std::vector<double> alpha;  // accepted draws, in draw order
  std::vector<double> mu;
  std::int64_t n_draws = 0;
  std::string diagnostic;  // set when nothing was accepted

  double acceptance_rate() const {
    return n_draws > 0 ? static_cast<double>(alpha.size()) / n_draws : 0.0;
  }
};

// Draws (alpha, mu) uniformly from the prior box and keeps the pairs whose
// squared sensor misfit stays within the tolerance. Each draw owns a stream
// keyed by its index, so the accepted set is independent of batching.
template <class F>
PosteriorSample abc_rejection(F&& field, const AbcConfig& cfg, const RngKey& key) {
  cfg.validate();
  PosteriorSample out;
  out.n_draws = cfg.n_draws;
  const RngKey root = key.child(kAbcPurpose);
  for (std::int64_t i = 0; i < cfg.n_draws; ++i) {
    RngStream s = root.child(static_cast<std::uint64_t>(i)).stream();
    const double a = cfg.alpha_lo + (cfg.alpha_hi - cfg.alpha_lo) * s.next_uniform();
    const double m = cfg.mu_lo + (cfg.mu_hi - cfg.mu_lo) * s.next_uniform();
    double misfit = 0.0;
    for (const TaggedPoint& sensor : cfg.sensors) {
      const double diff =
          field(std::span<const double>(sensor.coords), a, m) - sensor.value;
      misfit += diff * diff;
    }
    if (misfit <= cfg.tolerance) {
      out.alpha.push_back(a);
      out.mu.push_back(m);
    }
  }
  if (out.alpha.empty()) {
    out.diagnostic = "no draws accepted; consider a larger tolerance";
  }
  return out;
}

// Scott's rule n^{-1/5} * sd, floored so a degenerate posterior still yields
// a usable (sharply peaked) density.
inline double scott_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::domain_error("scott_bandwidth: need at least 2 samples");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n - 1);
  const double bw = std::pow(static_cast<double>(n), -0.2) * std::sqrt(var);
  return std::max(bw, 1e-4);
}

// Gaussian-kernel density estimate of the samples, evaluated on the grid.
inline std::vector<double> kde_1d(std::span<const double> samples,
                                  std::span<const double> grid, double bandwidth) {
  if (samples.size() < 2) throw std::domain_error("kde_1d: need at least 2 samples");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_1d: bandwidth > 0 required");
  const double norm =
      1.0 / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> density(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double x : samples) {
      const double z = (grid[g] - x) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    density[g] = norm * acc;
  }
  return density;
}

struct DensityEstimate {
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> density;
};

// Reporting grid: the prior range and the sample hull padded by five
// bandwidths, spaced finely enough (a third of a bandwidth) that trapezoid
// mass is exact to well within 1e-3.
inline std::vector<double> report_grid(std::span<const double> samples, double prior_lo,
                                       double prior_hi, double bandwidth) {
  if (samples.empty()) throw std::domain_error("report_grid: no samples");
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const double lo = std::min(prior_lo, *mn - 5.0 * bandwidth);
  const double hi = std::max(prior_hi, *mx + 5.0 * bandwidth);
  const double target = bandwidth / 3.0;
  const std::size_t n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil((hi - lo) / target)) + 1, 401, 40001);
  std::vector<double> grid(n);
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + h * static_cast<double>(i);
  grid.back() = hi;
  return grid;
}

inline DensityEstimate posterior_density(std::span<const double> samples, double prior_lo,
                                         double prior_hi) {
  DensityEstimate est;
  est.bandwidth = scott_bandwidth(samples);
  est.grid = report_grid(samples, prior_lo, prior_hi, est.bandwidth);
  est.density = kde_1d(samples, est.grid, est.bandwidth);
  return est;
}

inline double trapezoid_mass(std::span<const double> grid, std::span<const double> density) {
  if (grid.size() != density.size() || grid.size() < 2) {
    throw std::invalid_argument("trapezoid_mass: grid and density sizes must match, >= 2");
  }
  double mass = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    mass += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
  }
  return mass;
}

// The five spatial sensor locations of the d=2 posterior reproduction.
inline std::vector<std::vector<double>> default_abc_sensor_positions() {
  return {{-0.0120, -0.2170},
          {0.0321, 0.7628},
          {0.6677, 0.1095},
          {0.5411, 0.5840},
          {-0.2382, -0.7787}};
}

}  // namespace mcpinn
