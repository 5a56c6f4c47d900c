#pragma once

// Quasiperiodic cocycle engine: (alpha, A) with A sampled over the torus,
// possibly at complexified phase. Lyapunov spectra come from QR-renormalized
// products, rotation numbers from projective angle unwrapping. Everything is
// deterministic: fixed theta0 grids, fixed reduction order, no RNG.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <vector>

#include "qplab/errors.hpp"
#include "qplab/potential.hpp"

namespace qplab {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::Vector2d;

struct CocycleMap {
  double alpha = 0.0;
  int dim = 2;
  // Sampler at complex phase z; real-axis callers pass z = theta.
  std::function<MatrixXcd(cplx)> sampler;
  double strip_radius = std::numeric_limits<double>::infinity();

  MatrixXcd operator()(double theta) const { return sampler(cplx(theta, 0.0)); }
};

inline CocycleMap complexify(const CocycleMap& c, double eps) {
  require(std::abs(eps) <= c.strip_radius, errc::strip_exceeded,
          "complexification leaves the sampler's analyticity strip");
  CocycleMap out = c;
  auto base = c.sampler;
  out.sampler = [base, eps](cplx z) { return base(z + cplx(0.0, eps)); };
  out.strip_radius = c.strip_radius - std::abs(eps);
  return out;
}

struct LyapunovSpectrum {
  std::vector<double> exponents;  // sorted descending
  std::vector<double> stderr_;    // spread of per-segment estimates
  long horizon = 0;               // steps per segment actually used
  int segments = 0;
};

// Sum of the top k exponents (norm growth of the k-th exterior power).
inline double exterior_sum(const LyapunovSpectrum& s, int k) {
  require(k >= 1 && k <= (int)s.exponents.size(), errc::bad_input, "exterior order out of range");
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += s.exponents[i];
  return acc;
}

namespace detail {

// Fixed low-discrepancy segment offsets (golden rotation of a fixed seed).
inline double segment_theta0(int j) {
  double t = (0.31830988618379067 + (double)j) * 0.61803398874989485;
  return t - std::floor(t);
}

}  // namespace detail

// QR-renormalized product of n sampler matrices along the orbit of theta0.
// Accumulates per-direction log growth in `logs`; the optional observer is
// invoked after every renormalization with (steps_done, logs) so callers can
// trace partial sums (domination margins need them). `burn` extra steps run
// first without logging so the frame aligns with the invariant flag before
// growth is measured (otherwise every estimate carries an O(1/n) alignment
// transient).
inline void product_qr(const CocycleMap& c, double theta0, long n, int renorm_every,
                       std::vector<double>& logs,
                       const std::function<void(long, const std::vector<double>&)>& observer = {},
                       long burn = 0) {
  const int m = c.dim;
  require(renorm_every >= 1, errc::bad_input, "renorm stride must be >= 1");
  logs.assign(m, 0.0);
  MatrixXcd acc = MatrixXcd::Identity(m, m);
  double theta = theta0;
  long since = 0;
  bool logging = burn == 0;
  long logged = 0;
  const long total = burn + n;
  for (long j = 0; j < total; ++j) {
    MatrixXcd a = c.sampler(cplx(theta, 0.0));
    require(a.rows() == m && a.cols() == m, errc::bad_input, "sampler dimension mismatch");
    require(a.allFinite(), errc::singular_sample, "sampler produced non-finite entries");
    acc = a * acc;
    theta += c.alpha;
    theta -= std::floor(theta);
    bool boundary = j + 1 == burn || j + 1 == total;
    if (++since == renorm_every || boundary) {
      Eigen::HouseholderQR<MatrixXcd> qr(acc);
      MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
      if (logging) {
        for (int i = 0; i < m; ++i) {
          double rii = std::abs(r(i, i));
          require(rii > 1e-300, errc::singular_sample, "singular matrix in QR renormalization");
          logs[i] += std::log(rii);
        }
        logged += since;
        if (observer) observer(logged, logs);
      } else {
        for (int i = 0; i < m; ++i)
          require(std::abs(r(i, i)) > 1e-300, errc::singular_sample,
                  "singular matrix in QR renormalization");
      }
      acc = qr.householderQ() * MatrixXcd::Identity(m, m);
      since = 0;
      if (j + 1 == burn) logging = true;
    }
  }
}

inline int default_renorm_stride(int dim) { return dim <= 4 ? 10 : 5; }

struct LyapunovOptions {
  long horizon = 1L << 16;   // initial steps per segment
  int segments = 6;
  int renorm_every = 0;      // 0 = pick by dimension
  double tol = 1e-4;         // adaptive stop: top exponent moved less than this
  long horizon_cap = 100000000;  // 1e8
};

// Lyapunov spectrum averaged over a deterministic theta0 grid. The horizon
// doubles until the top exponent stabilizes within tol (or the cap is hit).
inline LyapunovSpectrum lyapunov_spectrum(const CocycleMap& c, LyapunovOptions opt = {}) {
  const int m = c.dim;
  int stride = opt.renorm_every;
  if (stride <= 0) {
    // Default stride, capped so a block's condition number stays far from the
    // double-precision floor: growth spread * stride <= 25.
    stride = default_renorm_stride(m);
    std::vector<double> probe;
    product_qr(c, detail::segment_theta0(0), 64, 1, probe, {}, 16);
    auto mm = std::minmax_element(probe.begin(), probe.end());
    double spread = (*mm.second - *mm.first) / 64.0;
    if (spread > 1e-9) stride = std::max(1, std::min(stride, (int)(25.0 / spread)));
  }
  require(opt.segments >= 2, errc::bad_input, "need at least two segments for a spread estimate");

  LyapunovSpectrum out;
  double prev_top = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> prev_all;
  for (long n = opt.horizon;; n *= 2) {
    std::vector<std::vector<double>> per_seg(opt.segments);
    const long burn = std::min<long>(256, n / 4);
    for (int s = 0; s < opt.segments; ++s) {
      std::vector<double> logs;
      product_qr(c, detail::segment_theta0(s), n, stride, logs, {}, burn);
      for (double& v : logs) v /= (double)n;
      per_seg[s] = logs;
    }
    out.exponents.assign(m, 0.0);
    out.stderr_.assign(m, 0.0);
    for (int i = 0; i < m; ++i) {
      double mean = 0.0;
      for (int s = 0; s < opt.segments; ++s) mean += per_seg[s][i];
      mean /= opt.segments;
      double var = 0.0;
      for (int s = 0; s < opt.segments; ++s) {
        double d = per_seg[s][i] - mean;
        var += d * d;
      }
      var /= (opt.segments - 1);
      out.exponents[i] = mean;
      out.stderr_[i] = std::sqrt(var / opt.segments);
    }
    out.horizon = n;
    out.segments = opt.segments;
    if (opt.tol <= 0.0) break;  // fixed-horizon mode
    bool stable = !std::isnan(prev_top) && std::abs(out.exponents[0] - prev_top) < opt.tol;
    if (stable || n * 2 > opt.horizon_cap) {
      // The doubling delta estimates the remaining finite-horizon bias,
      // which the segment spread alone misses; fold it in.
      if (!prev_all.empty())
        for (int i = 0; i < m; ++i) out.stderr_[i] += std::abs(out.exponents[i] - prev_all[i]);
      break;
    }
    prev_top = out.exponents[0];
    prev_all = out.exponents;
  }
  return out;
}

// ---- rotation numbers --------------------------------------------------

namespace detail {

inline Eigen::Matrix2d real_sl2_sample(const CocycleMap& c, double theta) {
  MatrixXcd a = c.sampler(cplx(theta, 0.0));
  require(a.rows() == 2 && a.cols() == 2, errc::bad_input, "rotation number needs a 2x2 cocycle");
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  require(a.imag().cwiseAbs().maxCoeff() <= 1e-9 * scale, errc::non_real_sampler,
          "rotation number needs a real SL(2,R) sampler");
  Eigen::Matrix2d r = a.real();
  require(std::abs(r.determinant() - 1.0) <= 1e-6 * scale * scale, errc::non_real_sampler,
          "rotation number needs det = 1");
  return r;
}

}  // namespace detail

// Winding of theta -> A(theta) e1 around the circle; must vanish for a
// cocycle homotopic to the identity.
inline int sampler_winding(const CocycleMap& c, int grid = 2048) {
  double total = 0.0;
  Vector2d prev = detail::real_sl2_sample(c, 0.0) * Vector2d(1.0, 0.0);
  for (int j = 1; j <= grid; ++j) {
    Vector2d cur = detail::real_sl2_sample(c, (double)j / grid) * Vector2d(1.0, 0.0);
    total += std::atan2(prev.x() * cur.y() - prev.y() * cur.x(), prev.dot(cur));
    prev = cur;
  }
  return (int)std::lround(total / kTwoPi);
}

struct RotationOptions {
  long horizon = 1L << 15;
  double tol = 1e-6;
  long horizon_cap = 1L << 23;
  bool check_homotopy = true;
};

// Fibered rotation number of a real SL(2,R) cocycle homotopic to the
// identity: average projective angle advance, in turns mod 1. Any consistent
// branch of the per-step angle gives the same mean mod 1, so the unwrap cut
// is placed inside the largest gap of the observed step distribution; a fixed
// (-1/2, 1/2]-turn branch would alias steps whenever the advance concentrates
// near half a turn (trace near -2, the near-parabolic case) and bias the mean
// by the aliased fraction.
inline double rotation_number(const CocycleMap& c, RotationOptions opt = {}) {
  if (opt.check_homotopy)
    require(sampler_winding(c) == 0, errc::not_homotopic_to_identity,
            "sampler winds around the circle; not homotopic to the identity");

  const auto step_angle = [](const Vector2d& w, Vector2d& wn) {
    double norm = wn.norm();
    require(norm > 1e-300, errc::singular_sample, "vector collapsed in rotation iteration");
    wn /= norm;
    return std::atan2(w.x() * wn.y() - w.y() * wn.x(), w.dot(wn));
  };

  // Pilot pass: locate the support of the step distribution after a short
  // transient and cut the branch in the widest arc it avoids.
  double cut = 0.0;
  {
    const long pilot = 4096, skip = 512;
    std::vector<double> adv;
    adv.reserve(pilot - skip);
    double theta = 0.0;
    Vector2d w(1.0, 0.0);
    for (long j = 0; j < pilot; ++j) {
      Vector2d wn = detail::real_sl2_sample(c, theta) * w;
      double d = step_angle(w, wn);
      if (j >= skip) adv.push_back(d);
      w = wn;
      theta += c.alpha;
      theta -= std::floor(theta);
    }
    std::sort(adv.begin(), adv.end());
    double best = adv.front() + kTwoPi - adv.back();
    cut = adv.back() + 0.5 * best;
    for (size_t j = 1; j < adv.size(); ++j) {
      double g = adv[j] - adv[j - 1];
      if (g > best) {
        best = g;
        cut = adv[j - 1] + 0.5 * g;
      }
    }
    require(best > 0.05, errc::bad_input,
            "per-step advance fills the whole circle; rotation number branch is ambiguous");
  }

  // The raw Birkhoff mean converges like 1/n (lift boundary term), so the
  // orbit is extended through doubling checkpoints and Richardson-extrapolated.
  double theta = 0.0, total = 0.0;
  Vector2d w(1.0, 0.0);
  long done = 0;
  double prev_raw = std::numeric_limits<double>::quiet_NaN();
  double prev_extrap = std::numeric_limits<double>::quiet_NaN();
  for (long n = opt.horizon;; n *= 2) {
    for (; done < n; ++done) {
      Vector2d wn = detail::real_sl2_sample(c, theta) * w;
      double d = step_angle(w, wn);
      d -= kTwoPi * std::floor((d - cut) / kTwoPi);
      require(std::min(d - cut, cut + kTwoPi - d) > 1e-9, errc::bad_input,
              "projective step landed on the unwrap branch cut; rotation number ambiguous");
      total += d;
      w = wn;
      theta += c.alpha;
      theta -= std::floor(theta);
    }
    double raw = total / (kTwoPi * (double)n);
    if (!std::isnan(prev_raw)) {
      double extrap = 2.0 * raw - prev_raw;  // cancels the 1/n term
      if (!std::isnan(prev_extrap)) {
        double diff = std::abs(extrap - prev_extrap);
        diff = std::min(diff, 1.0 - diff);
        if (diff < opt.tol || n * 2 > opt.horizon_cap) {
          extrap -= std::floor(extrap);
          return extrap;
        }
      }
      prev_extrap = extrap;
    }
    prev_raw = raw;
  }
}

}  // namespace qplab
