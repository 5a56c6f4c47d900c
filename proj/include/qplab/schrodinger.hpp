#pragma once

// Schrodinger-side analysis for H u(n) = u(n+1) + u(n-1) + v(theta + n alpha) u(n):
// transfer cocycle, complexified Lyapunov profiles with their piecewise-affine
// structure, regime classification, integrated density of states, regularity
// and localization diagnostics.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "qplab/cocycle.hpp"
#include "qplab/fit.hpp"
#include "qplab/potential.hpp"
#include "qplab/tridiag.hpp"

namespace qplab {

// Transfer cocycle [[E - v(z), -1], [1, 0]]; SL(2,R) on the real axis.
inline CocycleMap schrodinger_cocycle(const TrigPotential& v, double alpha, double E) {
  CocycleMap c;
  c.alpha = alpha;
  c.dim = 2;
  c.strip_radius = std::numeric_limits<double>::infinity();
  c.sampler = [v, E](cplx z) {
    MatrixXcd a(2, 2);
    a << cplx(E) - v(z), cplx(-1.0), cplx(1.0), cplx(0.0);
    return a;
  };
  return c;
}

// Truncates the coefficient rule until the working half-strip h1/2 carries a
// sup-norm truncation error below 1e-12.
inline CocycleMap schrodinger_cocycle(const AnalyticPotential& v, double alpha, double E) {
  require(v.h1 > 0.0, errc::bad_input, "analytic potential needs a positive decay rate");
  const double h = v.h1 / 2.0;
  long n = 8;
  while (n < (1L << 20) && v.tail_bound(n, h) > 1e-12) n *= 2;
  CocycleMap c = schrodinger_cocycle(v.truncate(n), alpha, E);
  c.strip_radius = h;
  return c;
}

struct LyapunovProfile {
  double energy = 0.0;
  std::vector<double> eps_grid;    // symmetric about 0, increasing
  std::vector<double> L_values;    // top exponent at each eps
  std::vector<double> L_stderr;
  std::vector<double> breakpoints; // turning points on eps >= 0 (0 first when
                                   // the slope jumps across the origin)
  std::vector<long> slopes;        // snapped segment slopes in units of 2 pi
  std::vector<double> raw_slopes;  // fitted slopes before snapping
  double fit_residual = 0.0;       // rms residual of the piecewise fit
  double snap_miss = 0.0;          // worst distance to the 2 pi lattice
};

struct ProfileOptions {
  double eps_max = 0.0;           // 0: auto, 1.5 L(E)/2pi + 0.05
  int n_eps = 17;                 // forced odd so the grid contains 0
  LyapunovOptions lyap;
  double snap_tol = 0.15 * kTwoPi;
  int max_segments = 4;
};

inline LyapunovProfile lyapunov_profile(const TrigPotential& v, double alpha, double E,
                                        ProfileOptions opt = {}) {
  require(opt.n_eps >= 9, errc::bad_input, "profile needs at least 9 grid points");
  CocycleMap c = schrodinger_cocycle(v, alpha, E);

  double eps_max = opt.eps_max;
  if (eps_max <= 0.0) {
    auto s0 = lyapunov_spectrum(c, opt.lyap);
    eps_max = 1.5 * std::max(0.0, s0.exponents[0]) / kTwoPi + 0.05;
  }

  LyapunovProfile p;
  p.energy = E;
  const int n = opt.n_eps | 1;
  for (int i = 0; i < n; ++i) {
    double eps = -eps_max + 2.0 * eps_max * (double)i / (double)(n - 1);
    if (std::abs(eps) < 1e-15) eps = 0.0;
    auto s = lyapunov_spectrum(complexify(c, eps), opt.lyap);
    p.eps_grid.push_back(eps);
    p.L_values.push_back(s.exponents[0]);
    p.L_stderr.push_back(s.stderr_[0]);
  }

  // Fit the right half (profiles are even in eps).
  std::vector<double> xs, ys;
  for (int i = 0; i < n; ++i)
    if (p.eps_grid[i] >= 0.0) {
      xs.push_back(p.eps_grid[i]);
      ys.push_back(p.L_values[i]);
    }
  auto fit = piecewise_fit(xs, ys, opt.max_segments);
  p.fit_residual = std::sqrt(fit.rss / (double)xs.size());
  p.raw_slopes = fit.slopes;

  auto snap = snap_slopes(fit.slopes, kTwoPi, opt.snap_tol);
  p.snap_miss = snap.worst;
  require(snap.ok, errc::snap_failure, "fitted slope misses the 2 pi lattice by " +
                                           std::to_string(snap.worst / kTwoPi) + " * 2 pi");

  // Merge consecutive segments whose snapped slopes agree; keep genuine
  // turning points only. A nonzero slope at 0+ means the even reflection
  // turns at the origin itself.
  p.slopes.push_back(snap.ints[0]);
  if (snap.ints[0] != 0) p.breakpoints.push_back(0.0);
  for (size_t j = 1; j < snap.ints.size(); ++j) {
    if (snap.ints[j] != p.slopes.back()) {
      p.slopes.push_back(snap.ints[j]);
      p.breakpoints.push_back(fit.breaks[j - 1]);
    }
  }
  return p;
}

// Slope at eps = 0+ in units of 2 pi.
inline long acceleration(const LyapunovProfile& p) {
  require(!p.slopes.empty(), errc::bad_input, "profile carries no fit");
  return p.slopes.front();
}

// Slope immediately after the first turning point; 0 when the grid shows no
// turning point. A turning point too close to the grid edge is not trusted.
inline long t_acceleration(const LyapunovProfile& p) {
  require(!p.slopes.empty(), errc::bad_input, "profile carries no fit");
  if (p.breakpoints.empty()) return 0;
  double step = p.eps_grid.size() >= 2 ? p.eps_grid[1] - p.eps_grid[0] : 0.0;
  require(p.breakpoints.front() <= p.eps_grid.back() - 2.0 * step, errc::grid_too_short,
          "first turning point sits too close to the grid edge");
  if (p.breakpoints.front() == 0.0) return p.slopes.front();
  return p.slopes.size() >= 2 ? p.slopes[1] : 0;
}

enum class Regime { uniformly_hyperbolic, subcritical, critical, supercritical };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::uniformly_hyperbolic: return "uniformly_hyperbolic";
    case Regime::subcritical: return "subcritical";
    case Regime::critical: return "critical";
    case Regime::supercritical: return "supercritical";
  }
  return "?";
}

struct RegimeLabel {
  Regime regime = Regime::subcritical;
  long omega = 0;
  long t_omega = 0;        // 0 also when no turning point fits in the grid
  bool type_one = false;
  double L0 = 0.0;
  double L0_stderr = 0.0;
  double zero_threshold = 0.0;
};

struct ClassifyOptions {
  ProfileOptions profile;
  double l_zero_floor = 1e-3;
};

inline RegimeLabel classify(const TrigPotential& v, double alpha, double E,
                            ClassifyOptions opt = {}) {
  auto p = lyapunov_profile(v, alpha, E, opt.profile);
  RegimeLabel r;
  size_t i0 = p.eps_grid.size() / 2;
  r.L0 = p.L_values[i0];
  r.L0_stderr = p.L_stderr[i0];
  r.zero_threshold = std::max(opt.l_zero_floor, 3.0 * r.L0_stderr);
  r.omega = acceleration(p);
  r.t_omega = t_acceleration(p);
  r.type_one = r.t_omega == 1;
  bool positive = r.L0 > r.zero_threshold;
  if (positive)
    r.regime = r.omega > 0 ? Regime::supercritical : Regime::uniformly_hyperbolic;
  else
    r.regime = r.omega > 0 ? Regime::critical : Regime::subcritical;
  return r;
}

// ---- integrated density of states ---------------------------------------

struct IdsRecord {
  double E = 0.0;
  double N = 0.0;
  long size = 0;
  int theta_samples = 0;
  double stderr_ = 0.0;
};

struct IdsOptions {
  long size = 512;
  int theta_samples = 8;
};

namespace detail {

inline Tridiag dirichlet_truncation(const TrigPotential& v, double alpha, double theta,
                                    long size) {
  Tridiag t;
  t.diag.resize(size);
  t.off = Eigen::VectorXd::Ones(size - 1);
  double th = theta;
  for (long n = 0; n < size; ++n) {
    t.diag[n] = v.real_at(th);
    th += alpha;
    th -= std::floor(th);
  }
  return t;
}

}  // namespace detail

// Eigenvalue counting fraction of the Dirichlet truncation, averaged over a
// deterministic theta grid. The 2/size boundary sensitivity is folded into
// the reported spread.
inline IdsRecord ids(const TrigPotential& v, double alpha, double E, IdsOptions opt = {}) {
  require(opt.size >= 50, errc::bad_input, "truncation too small for an eigenvalue count");
  require(opt.theta_samples >= 1, errc::bad_input, "need at least one theta sample");
  IdsRecord r;
  r.E = E;
  r.size = opt.size;
  r.theta_samples = opt.theta_samples;
  double mean = 0.0, sq = 0.0;
  for (int j = 0; j < opt.theta_samples; ++j) {
    auto t = detail::dirichlet_truncation(v, alpha, detail::segment_theta0(j), opt.size);
    double n = (double)count_below(t, E) / (double)opt.size;
    mean += n;
    sq += n * n;
  }
  mean /= opt.theta_samples;
  sq /= opt.theta_samples;
  r.N = mean;
  double var = std::max(0.0, sq - mean * mean);
  r.stderr_ = std::sqrt(var / std::max(1, opt.theta_samples - 1)) + 2.0 / (double)opt.size;
  return r;
}

// Rotation number folded into [0, 1/2]; for the transfer cocycle the count
// relation reads N = 1 - 2 rho.
inline double schrodinger_rotation(const TrigPotential& v, double alpha, double E,
                                   RotationOptions opt = {}) {
  double rho = rotation_number(schrodinger_cocycle(v, alpha, E), opt);
  return rho > 0.5 ? 1.0 - rho : rho;
}

inline double ids_rotation_check(const TrigPotential& v, double alpha, double E,
                                 IdsOptions iopt = {}, RotationOptions ropt = {}) {
  auto r = ids(v, alpha, E, iopt);
  double rho = schrodinger_rotation(v, alpha, E, ropt);
  return std::abs(r.N - (1.0 - 2.0 * rho));
}

// Bisection for the energy where the counting fraction reaches `target`.
// Sturm counts are exactly monotone in E, so the bracket is safe.
inline double energy_at_ids(const TrigPotential& v, double alpha, double target, double lo,
                            double hi, IdsOptions opt = {}, double tol = 1e-4) {
  require(lo < hi, errc::bad_input, "empty energy bracket");
  require(target > 0.0 && target < 1.0, errc::bad_input, "target must be inside (0,1)");
  double nlo = ids(v, alpha, lo, opt).N;
  double nhi = ids(v, alpha, hi, opt).N;
  require(nlo <= target && target <= nhi, errc::bad_input, "bracket does not contain target");
  while (hi - lo > tol) {
    double m = 0.5 * (lo + hi);
    if (ids(v, alpha, m, opt).N < target)
      lo = m;
    else
      hi = m;
  }
  return 0.5 * (lo + hi);
}

// |L(E) - integral of ln|E - E'| dN(E')| by Stieltjes summation over a sweep
// that covers the spectrum.
inline double thouless_check(const TrigPotential& v, double alpha, double E,
                             const std::vector<IdsRecord>& sweep,
                             LyapunovOptions lopt = {}) {
  require(sweep.size() >= 3, errc::bad_input, "sweep too short");
  double integral = 0.0;
  for (size_t i = 0; i + 1 < sweep.size(); ++i) {
    double dn = sweep[i + 1].N - sweep[i].N;
    if (dn == 0.0) continue;
    double mid = 0.5 * (sweep[i].E + sweep[i + 1].E);
    double gap = std::max(std::abs(E - mid), 1e-12);
    integral += std::log(gap) * dn;
  }
  auto s = lyapunov_spectrum(schrodinger_cocycle(v, alpha, E), lopt);
  return std::abs(s.exponents[0] - integral);
}

struct HolderEstimate {
  double exponent = 0.0;
  double r2 = 0.0;
};

namespace detail {

inline double interp_ids(const std::vector<IdsRecord>& sweep, double E) {
  require(sweep.size() >= 2, errc::bad_input, "sweep too short");
  if (E <= sweep.front().E) return sweep.front().N;
  if (E >= sweep.back().E) return sweep.back().N;
  size_t lo = 0, hi = sweep.size() - 1;
  while (hi - lo > 1) {
    size_t m = (lo + hi) / 2;
    if (sweep[m].E <= E)
      lo = m;
    else
      hi = m;
  }
  double w = (E - sweep[lo].E) / (sweep[hi].E - sweep[lo].E);
  return sweep[lo].N + w * (sweep[hi].N - sweep[lo].N);
}

}  // namespace detail

// Regression of ln osc(N, [E0-s, E0+s]) on ln s over dyadic scales.
inline HolderEstimate holder_exponent(const std::vector<IdsRecord>& sweep, double E0,
                                      const std::vector<double>& scales) {
  require(scales.size() >= 3, errc::bad_input, "need at least three scales");
  std::vector<double> xs, ys;
  for (double s : scales) {
    require(s > 0.0, errc::bad_input, "scales must be positive");
    double osc = detail::interp_ids(sweep, E0 + s) - detail::interp_ids(sweep, E0 - s);
    if (osc > 0.0) {
      xs.push_back(std::log(s));
      ys.push_back(std::log(osc));
    }
  }
  require(xs.size() >= 3, errc::degenerate_window,
          "counting function constant around E0 at these scales");
  auto f = fit_line(xs, ys);
  return {f.slope, f.r2};
}

// ---- localization diagnostics --------------------------------------------

struct DecayReport {
  std::vector<double> energies;
  std::vector<double> rates;
  std::vector<double> r2;
  std::vector<double> iprs;
  std::vector<long> centers;
  double median_rate = 0.0;
  double median_ipr = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  require(!v.empty(), errc::bad_input, "median of empty set");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Diagonalizes the Dirichlet truncation at one phase, keeps eigenpairs with
// eigenvalue inside [elo, ehi), and fits exponential decay away from each
// localization center. Reports rates and participation; asserts nothing
// about spectral type.
inline DecayReport localization_probe(const TrigPotential& v, double alpha, double theta,
                                      double elo, double ehi, long size) {
  require(size >= 500, errc::bad_input, "localization probe needs size >= 500");
  auto t = detail::dirichlet_truncation(v, alpha, theta, size);
  auto vals = eigenvalues_in_window(t, elo, ehi, 1e-11);
  DecayReport rep;
  std::vector<Eigen::VectorXd> cluster;
  double cluster_lambda = std::numeric_limits<double>::quiet_NaN();
  for (double lambda : vals) {
    if (!std::isnan(cluster_lambda) && std::abs(lambda - cluster_lambda) > 1e-8) cluster.clear();
    Eigen::VectorXd u = inverse_iteration(t, lambda, cluster);
    cluster.push_back(u);
    cluster_lambda = lambda;
    auto d = decay_fit(u);
    rep.energies.push_back(lambda);
    rep.rates.push_back(d.rate);
    rep.r2.push_back(d.r2);
    rep.iprs.push_back(d.ipr);
    rep.centers.push_back(d.center);
  }
  if (!rep.rates.empty()) {
    rep.median_rate = detail::median_of(rep.rates);
    rep.median_ipr = detail::median_of(rep.iprs);
  }
  return rep;
}

}  // namespace qplab
