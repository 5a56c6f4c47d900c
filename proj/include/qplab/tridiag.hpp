#pragma once

// Symmetric tridiagonal tools: Sturm pivot counts, windowed eigenvalues by
// bisection, eigenvectors by shifted inverse iteration, and exponential
// decay fits for localization diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qplab/errors.hpp"
#include "qplab/fit.hpp"

namespace qplab {

struct Tridiag {
  Eigen::VectorXd diag;
  Eigen::VectorXd off;  // size diag.size() - 1
};

inline Eigen::VectorXd apply(const Tridiag& t, const Eigen::VectorXd& u) {
  const long n = t.diag.size();
  Eigen::VectorXd r = t.diag.cwiseProduct(u);
  for (long i = 0; i + 1 < n; ++i) {
    r[i] += t.off[i] * u[i + 1];
    r[i + 1] += t.off[i] * u[i];
  }
  return r;
}

// Number of eigenvalues strictly below x, from the signs of the LDL^T pivots
// of T - xI. Zero pivots are nudged negative, the standard tie convention.
inline long count_below(const Tridiag& t, double x) {
  const long n = t.diag.size();
  require(n >= 1 && t.off.size() == n - 1, errc::bad_input, "inconsistent tridiagonal sizes");
  long cnt = 0;
  double d = 1.0;
  for (long i = 0; i < n; ++i) {
    double b2 = i > 0 ? t.off[i - 1] * t.off[i - 1] : 0.0;
    d = (t.diag[i] - x) - b2 / d;
    if (d == 0.0) d = -1e-300;
    if (d < 0.0) ++cnt;
  }
  return cnt;
}

// All eigenvalues in [lo, hi), each located by bisection on the Sturm count.
inline std::vector<double> eigenvalues_in_window(const Tridiag& t, double lo, double hi,
                                                 double tol) {
  require(lo < hi, errc::bad_input, "empty window");
  require(tol > 0.0, errc::bad_input, "tolerance must be positive");
  const long k_lo = count_below(t, lo);
  const long k_hi = count_below(t, hi);
  std::vector<double> out;
  for (long k = k_lo; k < k_hi; ++k) {
    double a = lo, b = hi;
    // Invariant: count(a) <= k < count(b).
    while (b - a > tol) {
      double m = 0.5 * (a + b);
      if (count_below(t, m) <= k)
        a = m;
      else
        b = m;
    }
    out.push_back(0.5 * (a + b));
  }
  return out;
}

namespace detail {

// Solve (T - lambda I) x = b by Gaussian elimination with partial pivoting
// (three-band factorization with a second superdiagonal fill-in).
inline Eigen::VectorXd solve_shifted(const Tridiag& t, double lambda, Eigen::VectorXd b) {
  const long n = t.diag.size();
  Eigen::VectorXd d = t.diag.array() - lambda;
  Eigen::VectorXd dl = t.off;
  Eigen::VectorXd du = t.off;
  Eigen::VectorXd du2 = Eigen::VectorXd::Zero(std::max<long>(0, n - 2));
  const double tiny = 1e-300;

  for (long i = 0; i + 1 < n; ++i) {
    if (std::abs(d[i]) >= std::abs(dl[i])) {
      if (d[i] == 0.0) d[i] = tiny;
      double fact = dl[i] / d[i];
      d[i + 1] -= fact * du[i];
      b[i + 1] -= fact * b[i];
    } else {
      double fact = d[i] / dl[i];
      d[i] = dl[i];
      double temp = d[i + 1];
      d[i + 1] = du[i] - fact * temp;
      du[i] = temp;
      if (i + 2 < n) {
        du2[i] = du[i + 1];
        du[i + 1] = -fact * du[i + 1];
      }
      std::swap(b[i], b[i + 1]);
      b[i + 1] -= fact * b[i];
    }
  }
  if (d[n - 1] == 0.0) d[n - 1] = tiny;

  b[n - 1] /= d[n - 1];
  if (n >= 2) b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
  for (long i = n - 3; i >= 0; --i) b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
  return b;
}

}  // namespace detail

// Shifted inverse iteration from a fixed deterministic start; optional
// orthogonalization against previously found vectors of a near-degenerate
// cluster.
inline Eigen::VectorXd inverse_iteration(const Tridiag& t, double lambda,
                                         const std::vector<Eigen::VectorXd>& ortho = {},
                                         int sweeps = 4) {
  const long n = t.diag.size();
  Eigen::VectorXd x(n);
  for (long j = 0; j < n; ++j) x[j] = std::sin(0.7391 * (double)(j + 1)) + 0.5 * std::cos(1.618 * (double)(j + 1));
  x.normalize();
  for (int s = 0; s < sweeps; ++s) {
    x = detail::solve_shifted(t, lambda, x);
    for (const auto& v : ortho) x -= v.dot(x) * v;
    double nrm = x.norm();
    require(nrm > 0.0, errc::singular_sample, "inverse iteration collapsed to zero");
    x /= nrm;
  }
  return x;
}

struct DecayFit {
  long center = 0;   // localization center (argmax |u|)
  double rate = 0.0; // fitted exponential decay rate away from the center
  double r2 = 0.0;
  double ipr = 0.0;  // inverse participation ratio, ~1/support size
};

// Fit ln|u(j)| against |j - center|; the rate is minus the slope. Entries
// below the floor are excluded so roundoff zeros do not bias the tail.
inline DecayFit decay_fit(const Eigen::VectorXd& u, double floor = 1e-13) {
  const long n = u.size();
  require(n >= 8, errc::bad_input, "vector too short for a decay fit");
  DecayFit d;
  double best = 0.0;
  double sum2 = 0.0, sum4 = 0.0;
  for (long j = 0; j < n; ++j) {
    double a = std::abs(u[j]);
    if (a > best) {
      best = a;
      d.center = j;
    }
    sum2 += a * a;
    sum4 += a * a * a * a;
  }
  require(best > 0.0, errc::bad_input, "zero vector");
  d.ipr = sum4 / (sum2 * sum2);
  std::vector<double> xs, ys;
  for (long j = 0; j < n; ++j) {
    double a = std::abs(u[j]);
    if (j != d.center && a > floor) {
      xs.push_back((double)std::labs(j - d.center));
      ys.push_back(std::log(a));
    }
  }
  require(xs.size() >= 4, errc::degenerate_window, "too few usable entries for a decay fit");
  auto f = fit_line(xs, ys);
  d.rate = -f.slope;
  d.r2 = f.r2;
  return d;
}

}  // namespace qplab
