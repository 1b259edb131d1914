#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcpinn/rng.hpp"
#include "mcpinn/samplers.hpp"

using namespace mcpinn;

namespace {

// One-sample Kolmogorov-Smirnov statistic against a CDF.
template <class Cdf>
double ks_stat(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::abs((i + 1) / n - f));
    d = std::max(d, std::abs(f - i / n));
  }
  return d;
}

}  // namespace

TEST_CASE("identical key and path reproduce draws; siblings differ") {
  RngKey root(42);
  RngStream a = root.child(3).child(7).stream();
  RngStream b = root.child(3).child(7).stream();
  RngStream c = root.child(3).child(8).stream();
  bool sibling_differs = false;
  for (int i = 0; i < 100; ++i) {
    const double ua = a.next_uniform();
    const double ub = b.next_uniform();
    const double uc = c.next_uniform();
    REQUIRE(ua == ub);
    if (ua != uc) sibling_differs = true;
  }
  CHECK(sibling_differs);
}

TEST_CASE("path levels do not collide with flattened indices") {
  RngKey root(7);
  // (a, b) vs (a*1000 + b) as a single level must give unrelated streams.
  RngStream two_level = root.child(2).child(5).stream();
  RngStream one_level = root.child(2005).stream();
  CHECK(two_level.next_uniform() != one_level.next_uniform());
}

TEST_CASE("uniforms live in (0, 1]") {
  RngStream s = RngKey(1).child(0).stream();
  for (int i = 0; i < 1000000; ++i) {
    const double u = s.next_uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u <= 1.0);
  }
}

TEST_CASE("uniform stream passes KS and moment checks") {
  RngStream s = RngKey(99).child(1).stream();
  const int n = 100000;
  std::vector<double> xs(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    xs[i] = s.next_uniform();
    mean += xs[i];
  }
  mean /= n;
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(ks_stat(xs, [](double x) { return std::clamp(x, 0.0, 1.0); }) < 0.006);
}

TEST_CASE("distinct streams are uncorrelated") {
  RngStream a = RngKey(5).child(10).stream();
  RngStream b = RngKey(5).child(11).stream();
  const int n = 100000;
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.next_uniform(), y = b.next_uniform();
    sa += x;
    sb += y;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double rho = cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
  CHECK(std::abs(rho) < 0.01);
}

TEST_CASE("normal pairs have the right moments") {
  RngStream s = RngKey(17).child(2).stream();
  const int n = 200000;
  double m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = s.next_normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= n;
  m2 /= n;
  CHECK(std::abs(m1) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("unit sphere samples have unit norm and zero mean") {
  for (int d : {1, 2, 3, 10}) {
    RngStream s = RngKey(3).child(d).stream();
    const int n = 20000;
    std::vector<double> mean(d, 0.0);
    double mean_sq0 = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::vector<double> xi = sample_unit_sphere(d, s);
      double norm2 = 0.0;
      for (int k = 0; k < d; ++k) {
        norm2 += xi[k] * xi[k];
        mean[k] += xi[k];
      }
      mean_sq0 += xi[0] * xi[0];
      REQUIRE(std::abs(norm2 - 1.0) < 1e-12);
      if (d == 1) REQUIRE((xi[0] == 1.0 || xi[0] == -1.0));
    }
    for (int k = 0; k < d; ++k) {
      INFO("d = " << d << " component " << k);
      CHECK(std::abs(mean[k] / n) < 5.0 / std::sqrt(static_cast<double>(n)));
    }
    // isotropy: E[xi_0^2] = 1/d
    CHECK(std::abs(mean_sq0 / n - 1.0 / d) < 5.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("beta power draws match their CDF") {
  for (double k : {0.2, 0.5, 1.0, 1.5}) {
    RngStream s = RngKey(11).child(static_cast<std::uint64_t>(k * 10)).stream();
    const int n = 100000;
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) {
      const BetaPowerDraw d = sample_beta_power(k, s);
      REQUIRE(d.value > 0.0);
      REQUIRE(d.value <= 1.0);
      REQUIRE(d.value == std::pow(d.u, 1.0 / k));
      xs[i] = d.value;
    }
    INFO("k = " << k);
    CHECK(ks_stat(xs, [k](double x) { return std::pow(std::clamp(x, 0.0, 1.0), k); }) < 0.006);
  }
  RngStream s = RngKey(0).stream();
  CHECK_THROWS_AS(sample_beta_power(0.0, s), std::domain_error);
}

TEST_CASE("unit ball samples are uniform") {
  const int d = 3;
  RngStream s = RngKey(23).child(0).stream();
  const int n = 100000;
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<double> x = sample_unit_ball(d, s);
    double norm2 = 0.0;
    for (double c : x) norm2 += c * c;
    REQUIRE(norm2 <= 1.0 + 1e-12);
    r[i] = std::sqrt(norm2);
  }
  // radius CDF is r^d for the uniform ball
  CHECK(ks_stat(r, [d](double x) { return std::pow(std::clamp(x, 0.0, 1.0), d); }) < 0.006);
}

TEST_CASE("sample groups are reproducible and hold valid uniforms") {
  RngStream s1 = RngKey(8).child(1).child(2).child(0).stream();
  RngStream s2 = RngKey(8).child(1).child(2).child(0).stream();
  const SampleGroup a = make_sample_group(20, 2, s1);
  const SampleGroup b = make_sample_group(20, 2, s2);
  REQUIRE(a.xi == b.xi);
  REQUIRE(a.u_in == b.u_in);
  REQUIRE(a.u_out == b.u_out);
  REQUIRE(a.u_tau == b.u_tau);
  for (int j = 0; j < a.m; ++j) {
    REQUIRE((a.u_in[j] > 0.0 && a.u_in[j] <= 1.0));
    REQUIRE((a.u_out[j] > 0.0 && a.u_out[j] <= 1.0));
    REQUIRE((a.u_tau[j] > 0.0 && a.u_tau[j] <= 1.0));
  }
}

TEST_CASE("derived radii respect their supports and respond to alpha") {
  const double r0 = 0.2;
  RngStream s = RngKey(4).child(9).stream();
  const SampleGroup g = make_sample_group(200, 2, s);
  for (int j = 0; j < g.m; ++j) {
    for (double alpha : {0.3, 1.0, 1.7}) {
      const double rin = inner_radius(g.u_in[j], alpha, r0);
      const double rout = outer_radius(g.u_out[j], alpha, r0);
      REQUIRE(rin > 0.0);
      REQUIRE(rin <= r0 * (1.0 + 1e-12));
      REQUIRE(rout >= r0 * (1.0 - 1e-12));
      const double tau = time_fraction(g.u_tau[j], 0.5);
      REQUIRE(tau > 0.0);
      REQUIRE(tau <= 1.0 + 1e-12);
    }
    // continuity in alpha with frozen uniforms
    const double a0 = inner_radius(g.u_in[j], 1.0, r0);
    const double a1 = inner_radius(g.u_in[j], 1.0 + 1e-7, r0);
    REQUIRE(std::abs(a1 - a0) < 1e-4);
  }
}
