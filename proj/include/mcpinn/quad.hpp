#pragma once

#include <cmath>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcpinn {

struct QuadSpec {
  double abs_tol = 1e-9;
  int max_subdiv = 16384;

  void validate() const {
    if (!(abs_tol > 0.0)) throw std::invalid_argument("QuadSpec: abs_tol > 0 required");
    if (max_subdiv < 1) throw std::invalid_argument("QuadSpec: max_subdiv >= 1 required");
  }
};

// Raised when an adaptive rule exhausts its subdivision budget before
// reaching the requested tolerance; carries the best estimate so far.
class AccuracyError : public std::runtime_error {
 public:
  AccuracyError(const std::string& what, double estimate)
      : std::runtime_error(what), estimate_(estimate) {}
  double estimate() const { return estimate_; }

 private:
  double estimate_;
};

namespace detail {

// Gauss-Kronrod 7-15 on [-1, 1]: Kronrod abscissae (positive half), Kronrod
// weights and the embedded 7-point Gauss weights.
inline constexpr double kGk15X[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kGk15Wk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kGk15Wg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
  double a, b, value, error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

// One Gauss-Kronrod 7-15 evaluation; error is the conservative |K15 - G7|.
template <class F>
Panel gk15(F&& f, double a, double b) {
  const double h = 0.5 * (b - a);
  const double c = 0.5 * (a + b);
  const double f0 = f(c);
  double resk = kGk15Wk[7] * f0;
  double resg = kGk15Wg[3] * f0;
  for (int i = 0; i < 7; ++i) {
    const double x = h * kGk15X[i];
    const double fs = f(c - x) + f(c + x);
    resk += kGk15Wk[i] * fs;
    if (i % 2 == 1) resg += kGk15Wg[i / 2] * fs;
  }
  return {a, b, resk * h, std::abs((resk - resg) * h)};
}

}  // namespace detail

// Adaptive Gauss-Kronrod integration of f over [a, b] to an absolute
// tolerance. Worst panel first; throws AccuracyError when the subdivision
// budget runs out.
template <class F>
double integrate(F&& f, double a, double b, const QuadSpec& spec = {}) {
  spec.validate();
  if (a == b) return 0.0;
  std::priority_queue<detail::Panel> panels;
  panels.push(detail::gk15(f, a, b));
  double value = panels.top().value;
  double error = panels.top().error;
  int used = 1;
  while (error > spec.abs_tol) {
    if (used >= spec.max_subdiv) {
      throw AccuracyError("integrate: tolerance " + std::to_string(spec.abs_tol) +
                              " not reached with " + std::to_string(used) +
                              " panels (error ~" + std::to_string(error) + ")",
                          value);
    }
    const detail::Panel worst = panels.top();
    panels.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    const detail::Panel left = detail::gk15(f, worst.a, mid);
    const detail::Panel right = detail::gk15(f, mid, worst.b);
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    panels.push(left);
    panels.push(right);
    ++used;
  }
  return value;
}

// Integrates across a sorted list of breakpoints (integrand may kink there),
// spending the tolerance evenly across the pieces.
template <class F>
double integrate_pieces(F&& f, const std::vector<double>& points, const QuadSpec& spec = {}) {
  if (points.size() < 2) throw std::invalid_argument("integrate_pieces: need >= 2 points");
  QuadSpec piece = spec;
  piece.abs_tol = spec.abs_tol / static_cast<double>(points.size() - 1);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    if (!(points[i] <= points[i + 1])) {
      throw std::invalid_argument("integrate_pieces: points must be non-decreasing");
    }
    total += integrate(f, points[i], points[i + 1], piece);
  }
  return total;
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
// Legendre recurrence.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
  const double pi = 3.14159265358979323846264338328;
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace mcpinn
