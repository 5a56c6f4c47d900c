#pragma once

// Least-squares helpers: straight lines, continuous piecewise-affine fits
// with BIC segment selection, and snapping of fitted slopes onto a lattice.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "qplab/errors.hpp"

namespace qplab {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rss = 0.0;
  double r2 = 1.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), errc::bad_input, "x/y length mismatch");
  const size_t n = x.size();
  require(n >= 2, errc::bad_input, "line fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= (double)n;
  my /= (double)n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, errc::bad_input, "line fit needs at least two distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.rss = std::max(0.0, syy - f.slope * sxy);
  f.r2 = syy > 0.0 ? 1.0 - f.rss / syy : 1.0;
  return f;
}

// Continuous piecewise-affine function anchored at x0.
struct PiecewiseFit {
  double x0 = 0.0;
  double value0 = 0.0;            // fitted value at x0
  std::vector<double> breaks;     // interior knots, strictly increasing
  std::vector<double> slopes;     // one per segment, breaks.size() + 1
  double rss = 0.0;
  double bic = 0.0;

  int segments() const { return (int)slopes.size(); }

  double at(double t) const {
    if (t <= x0) return value0 + slopes.front() * (t - x0);
    double val = value0;
    double pos = x0;
    for (size_t j = 0; j < slopes.size(); ++j) {
      double end = j < breaks.size() ? breaks[j] : t;
      double stop = std::min(t, end);
      if (stop > pos) {
        val += slopes[j] * (stop - pos);
        pos = stop;
      }
      if (t <= end) break;
    }
    return val;
  }
};

namespace detail {

// Least squares for fixed knots via the hinge basis 1, (x-x0), (x-b_j)_+.
inline PiecewiseFit fit_with_knots(const std::vector<double>& x, const std::vector<double>& y,
                                   const std::vector<double>& knots) {
  const size_t n = x.size();
  const size_t p = 2 + knots.size();
  Eigen::MatrixXd design(n, p);
  Eigen::VectorXd rhs(n);
  for (size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = x[i] - x.front();
    for (size_t j = 0; j < knots.size(); ++j) design(i, 2 + j) = std::max(0.0, x[i] - knots[j]);
    rhs(i) = y[i];
  }
  Eigen::VectorXd beta = design.colPivHouseholderQr().solve(rhs);
  PiecewiseFit f;
  f.x0 = x.front();
  f.value0 = beta(0);
  f.breaks = knots;
  f.slopes.resize(knots.size() + 1);
  f.slopes[0] = beta(1);
  for (size_t j = 0; j < knots.size(); ++j) f.slopes[j + 1] = f.slopes[j] + beta(2 + j);
  f.rss = (design * beta - rhs).squaredNorm();
  return f;
}

inline double bic_of(double rss, size_t n, int k_segments) {
  // Parameters: value0 + k slopes + (k-1) knots. The rss floor keeps exact
  // fits from swamping the comparison with log(0).
  double per_point = std::max(rss / (double)n, 1e-28);
  return (double)n * std::log(per_point) + (double)(2 * k_segments) * std::log((double)n);
}

}  // namespace detail

// Continuous piecewise-affine fit; the segment count 1..max_segments is
// chosen by BIC, knots searched over interior sample positions with at least
// two samples per segment.
inline PiecewiseFit piecewise_fit(const std::vector<double>& x, const std::vector<double>& y,
                                  int max_segments) {
  require(x.size() == y.size(), errc::bad_input, "x/y length mismatch");
  const size_t n = x.size();
  require(n >= 4, errc::bad_input, "piecewise fit needs at least four points");
  for (size_t i = 1; i < n; ++i)
    require(x[i] > x[i - 1], errc::bad_input, "abscissae must be strictly increasing");
  require(max_segments >= 1, errc::bad_input, "need at least one segment");

  PiecewiseFit best = detail::fit_with_knots(x, y, {});
  best.bic = detail::bic_of(best.rss, n, 1);

  // Knot index combinations for k segments: indices i_1 < ... < i_{k-1} in
  // [2, n-3] with gaps >= 2 so each segment keeps two samples.
  for (int k = 2; k <= max_segments; ++k) {
    const int m = k - 1;
    if ((size_t)(2 * k) > n) break;
    std::vector<int> idx(m);
    for (int j = 0; j < m; ++j) idx[j] = 2 + 2 * j;
    if (idx.back() > (int)n - 3) continue;
    while (true) {
      std::vector<double> knots(m);
      for (int j = 0; j < m; ++j) knots[j] = x[idx[j]];
      PiecewiseFit f = detail::fit_with_knots(x, y, knots);
      f.bic = detail::bic_of(f.rss, n, k);
      if (f.bic < best.bic) best = f;

      int j = m - 1;
      while (j >= 0) {
        ++idx[j];
        int limit = (int)n - 3 - 2 * (m - 1 - j);
        if (idx[j] <= limit) {
          for (int l = j + 1; l < m; ++l) idx[l] = idx[l - 1] + 2;
          break;
        }
        --j;
      }
      if (j < 0) break;
    }
  }
  return best;
}

// Free-knot hinge model y = level + slope * (x - knot)_+ : flat left of the
// knot, affine right of it. The knot moves continuously, so kinks between
// samples are recovered exactly on clean data.
struct HingeFit {
  double level = 0.0;
  double knot = 0.0;
  double slope = 0.0;
  double rss = 0.0;
};

namespace detail {

inline HingeFit hinge_at(const std::vector<double>& x, const std::vector<double>& y,
                         double knot) {
  // LSQ over (level, slope) with the hinge basis (x - knot)_+.
  const size_t n = x.size();
  double s1 = 0.0, sh = 0.0, shh = 0.0, sy = 0.0, shy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double h = std::max(0.0, x[i] - knot);
    s1 += 1.0;
    sh += h;
    shh += h * h;
    sy += y[i];
    shy += h * y[i];
  }
  double det = s1 * shh - sh * sh;
  HingeFit f;
  f.knot = knot;
  if (det <= 1e-30) {
    f.level = sy / s1;
    f.slope = 0.0;
  } else {
    f.level = (shh * sy - sh * shy) / det;
    f.slope = (s1 * shy - sh * sy) / det;
  }
  f.rss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double r = y[i] - (f.level + f.slope * std::max(0.0, x[i] - knot));
    f.rss += r * r;
  }
  return f;
}

}  // namespace detail

inline HingeFit hinge_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 4, errc::bad_input,
          "hinge fit needs at least four points");
  const double lo = x.front();
  const double hi = x.back() - 1e-9 * (x.back() - x.front());
  HingeFit best = detail::hinge_at(x, y, lo);
  const int scan = 256;
  for (int i = 1; i <= scan; ++i) {
    double k = lo + (hi - lo) * (double)i / (double)scan;
    auto f = detail::hinge_at(x, y, k);
    if (f.rss < best.rss) best = f;
  }
  // Golden-section refinement around the best scan point.
  double a = std::max(lo, best.knot - (hi - lo) / scan);
  double b = std::min(hi, best.knot + (hi - lo) / scan);
  const double g = 0.6180339887498949;
  double c = b - g * (b - a), d = a + g * (b - a);
  auto fc = detail::hinge_at(x, y, c), fd = detail::hinge_at(x, y, d);
  for (int it = 0; it < 60; ++it) {
    if (fc.rss < fd.rss) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = detail::hinge_at(x, y, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = detail::hinge_at(x, y, d);
    }
  }
  auto f = fc.rss < fd.rss ? fc : fd;
  return f.rss < best.rss ? f : best;
}

struct SnapResult {
  std::vector<long> ints;  // slope / unit rounded
  double worst = 0.0;      // largest |slope - unit*int|
  bool ok = true;
};

// Snap each slope onto unit * Z; ok is false when any slope lands farther
// than tol (absolute, same units as the slopes) from the lattice.
inline SnapResult snap_slopes(const std::vector<double>& slopes, double unit, double tol) {
  require(unit > 0.0, errc::bad_input, "snap unit must be positive");
  SnapResult r;
  for (double s : slopes) {
    long k = std::lround(s / unit);
    double miss = std::abs(s - unit * (double)k);
    r.worst = std::max(r.worst, miss);
    if (miss > tol) r.ok = false;
    r.ints.push_back(k);
  }
  return r;
}

}  // namespace qplab
