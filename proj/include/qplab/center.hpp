#pragma once

// Symplectic center of the dual cocycle. The 2d-dimensional companion cocycle
// carries an invariant two-dimensional slow subbundle (the two exponents of
// smallest modulus); this header extracts it per theta, builds a normalized
// frame in which the restricted dynamics becomes e^{2 pi i phi(theta)} C(theta)
// with C real and det C = 1, and derives everything downstream of that frame:
// fibered rotation numbers, the rotation/IDS duality constant, truncation
// convergence of the frame, cohomological twists, and Bloch-wave assembly.

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "qplab/cocycle.hpp"
#include "qplab/dual.hpp"
#include "qplab/fit.hpp"
#include "qplab/frequency.hpp"
#include "qplab/schrodinger.hpp"
#include "qplab/tridiag.hpp"

namespace qplab {

using Eigen::Matrix2cd;
using Eigen::Matrix2d;
using Eigen::VectorXcd;
using Eigen::VectorXd;

namespace detail {

inline double frac(double x) {
  double f = x - std::floor(x);
  return f < 1.0 ? f : 0.0;
}

// Signed representative in [-1/2, 1/2).
inline double wrap_half(double x) { return x - std::round(x); }

inline double dist_to_int(double x) { return std::abs(wrap_half(x)); }

inline Matrix2d rot2(double angle) {
  Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

// ---------------------------------------------------------------------------
// Trigonometric interpolation on a uniform torus grid. Samples are turned
// into Fourier coefficients once; evaluation off the grid sums the retained
// modes, and whole-grid shifts go through a mode twist so they stay O(G log G).
struct TrigSeries {
  Eigen::VectorXcd coef;  // coefficient of e^{2 pi i k theta} at index k mod G
  std::vector<std::pair<long, cplx>> retained;
  long grid = 0;

  static long signed_mode(long idx, long grid) { return idx <= grid / 2 ? idx : idx - grid; }

  static TrigSeries from_samples(const Eigen::VectorXcd& samples, double rel_floor = 1e-13) {
    TrigSeries t;
    t.grid = samples.size();
    require(t.grid >= 4, errc::bad_input, "grid too short for trigonometric interpolation");
    Eigen::FFT<double> fft;
    Eigen::VectorXcd freq;
    fft.fwd(freq, samples);
    t.coef = freq / (double)t.grid;
    double floor = rel_floor * t.coef.cwiseAbs().maxCoeff();
    for (long idx = 0; idx < t.grid; ++idx)
      if (std::abs(t.coef[idx]) > floor) t.retained.emplace_back(signed_mode(idx, t.grid), t.coef[idx]);
    return t;
  }

  cplx eval(double theta) const {
    cplx acc(0.0, 0.0);
    for (const auto& [k, c] : retained) acc += c * std::polar(1.0, kTwoPi * (double)k * theta);
    return acc;
  }

  // Samples of the interpolant at theta_j + shift for all grid points j.
  Eigen::VectorXcd shifted_grid(double shift) const {
    Eigen::VectorXcd tw(grid);
    for (long idx = 0; idx < grid; ++idx)
      tw[idx] = coef[idx] * (double)grid *
                std::polar(1.0, kTwoPi * (double)signed_mode(idx, grid) * shift);
    Eigen::FFT<double> fft;
    Eigen::VectorXcd out;
    fft.inv(out, tw);
    return out;
  }
};

// Fixed full-rank seed for the subspace iteration; one deterministic choice
// shared by every run so results are reproducible bit for bit.
inline MatrixXcd subspace_seed(long rows, long cols) {
  MatrixXcd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      m(r, c) = cplx(std::sin(0.7391 * (double)((r + 1) * (c + 2))) + 0.25,
                     0.4 * std::cos(1.618 * (double)(r + 1) + 0.77 * (double)(c + 1)));
  Eigen::HouseholderQR<MatrixXcd> qr(m);
  return qr.householderQ() * MatrixXcd::Identity(rows, cols);
}

inline MatrixXcd thin_orth(const MatrixXcd& m) {
  Eigen::HouseholderQR<MatrixXcd> qr(m);
  return qr.householderQ() * MatrixXcd::Identity(m.rows(), m.cols());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Options shared by the extraction pipeline.
struct CenterOptions {
  long grid = 2048;          // power of two; theta_j = j / grid
  long horizon = 0;          // subspace iteration length; 0 = ceil(factor / gap)
  double horizon_factor = 25.0;
  long horizon_cap = 10000;
  LyapunovOptions gap_lyap;  // spectrum run sizing the horizon
  bool check_domination = true;
  long dom_horizon = 4096;
  int dom_samples = 2;
  double dom_margin = 0.005;
  int anchor_plus = -1;    // component fixing the eigenvector phase at theta_0
  int anchor_minus = -1;
  double degeneracy_floor = 1e-8;  // |c(theta)| floor
  double split_tol = 1e-4;         // principal angle certificate width

  CenterOptions() {
    gap_lyap.horizon = 1L << 13;
    gap_lyap.segments = 4;
    gap_lyap.tol = 5e-4;
  }
};

// Per-theta orthonormal bases of the two-dimensional slow subbundle, with the
// finite-horizon certificates that justified them.
struct SubspaceField {
  Eigen::VectorXd theta_grid;
  std::vector<MatrixXcd> basis;  // 2d x 2, orthonormal columns
  long d = 0;
  long horizon = 0;
  double gap = std::numeric_limits<double>::infinity();  // gamma_2 - gamma_1 estimate
  double sigma2_min = 1.0;  // worst second principal cosine between the sided spaces
  double sigma3_max = 0.0;  // best third principal cosine (0 when d == 1)
  double domination_margin = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Slow subbundle extraction. The forward-slow (d+1)-dimensional space at theta
// is the small singular subspace of the forward product, computed by inverse
// subspace iteration; the backward-slow space arrives through the plain
// product from theta - N alpha. Their intersection is the center, certified
// two-dimensional through the principal cosines of the two bases.
inline SubspaceField center_subspace(const DualCocycle& dc, const CenterOptions& opt = {}) {
  const long G = opt.grid;
  require(G >= 16 && (G & (G - 1)) == 0, errc::bad_input, "grid size must be a power of two");
  const long d = dc.d;
  const long m = 2 * d;
  const double alpha = dc.map.alpha;

  SubspaceField ss;
  ss.d = d;
  ss.theta_grid.resize(G);
  for (long j = 0; j < G; ++j) ss.theta_grid[j] = (double)j / (double)G;

  if (d == 1) {
    // One pair of exponents: the whole fiber is the center.
    ss.basis.assign(G, MatrixXcd::Identity(2, 2));
    ss.horizon = 0;
    return ss;
  }

  if (opt.check_domination) {
    for (int k : {(int)d - 1, (int)d + 1}) {
      auto rep = domination_check(dc.map, k, opt.dom_horizon, opt.dom_samples, opt.dom_margin);
      require(rep.dominated, errc::splitting_degenerate,
              "no dominated splitting at index " + std::to_string(k) + ": margin " +
                  std::to_string(rep.margin) + " at theta " + std::to_string(rep.failing_theta));
      ss.domination_margin = std::min(ss.domination_margin, rep.margin);
    }
  }

  long N = opt.horizon;
  if (N <= 0) {
    auto spec = dual_lyapunov_spectrum(dc, opt.gap_lyap);
    ss.gap = spec.gamma[1] - spec.gamma[0];
    N = (long)std::ceil(opt.horizon_factor / std::max(ss.gap, 2e-3));
    N = std::clamp(N, (long)50, opt.horizon_cap);
  }
  ss.horizon = N;

  const MatrixXcd seed = detail::subspace_seed(m, d + 1);
  ss.basis.resize(G);
  for (long j = 0; j < G; ++j) {
    const double theta = ss.theta_grid[j];

    // Forward-slow space: dominant column space of the inverse-ordered product.
    MatrixXcd f = seed;
    for (long k = N - 1; k >= 0; --k) {
      MatrixXcd a = dc.map.sampler(cplx(detail::frac(theta + (double)k * alpha), 0.0));
      f = detail::thin_orth(a.partialPivLu().solve(f));
    }
    // Backward-slow space: image of the long forward product ending at theta.
    MatrixXcd b = seed;
    for (long k = N; k >= 1; --k) {
      MatrixXcd a = dc.map.sampler(cplx(detail::frac(theta - (double)k * alpha), 0.0));
      b = detail::thin_orth(a * b);
    }

    Eigen::JacobiSVD<MatrixXcd> svd(f.adjoint() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    double s2 = sv[1], s3 = sv[2];
    ss.sigma2_min = std::min(ss.sigma2_min, s2);
    ss.sigma3_max = std::max(ss.sigma3_max, s3);
    if (!(s2 > 1.0 - opt.split_tol && s3 < 1.0 - opt.split_tol))
      fail(errc::splitting_degenerate,
           "center intersection not two-dimensional at theta " + std::to_string(theta) +
               ": principal cosines " + std::to_string(s2) + ", " + std::to_string(s3));

    // Symmetrized intersection: matched principal directions from both sides.
    MatrixXcd inter(m, 2);
    for (int i = 0; i < 2; ++i)
      inter.col(i) = f * svd.matrixU().col(i) + b * svd.matrixV().col(i);
    ss.basis[j] = detail::thin_orth(inter);
  }
  return ss;
}

// ---------------------------------------------------------------------------
// Normalized center frame: sections u, v spanning the center with u*Sv = 1,
// the transfer phase phi, and the real unimodular matrix C.
struct CenterFrame {
  TrigPotential v;
  double alpha = 0.0;
  double energy = 0.0;
  double eps = 0.0;
  long d = 0;
  MatrixXcd S;

  Eigen::VectorXd theta_grid;
  MatrixXcd u_basis;  // 2d x G, normalized section u at each grid point
  MatrixXcd v_basis;  // 2d x G
  Eigen::VectorXcd c_values;  // pre-normalization pairing u*Sv
  Eigen::VectorXd phi;        // continuous phase; phi_0 anchored in (-1/4, 1/4]
  std::vector<Matrix2cd> C_values;
  double strip_radius = 0.0;
  double domination_margin = std::numeric_limits<double>::infinity();

  double winding = 0.0;   // phase drift over one torus loop, in half-integers
  double mean_phi = 0.0;  // grid average of phi
  double frame_residual = 0.0;       // worst transfer defect per grid point
  double normalization_error = 0.0;  // worst |u*Sv - 1| after rescaling
  double realness_defect = 0.0;      // worst imaginary part of C entries
  double det_defect = 0.0;           // worst | |det| - 1 | of the transfer matrix
  double omega_defect = 0.0;         // worst defect of the pullback-form identity
  double sigma2_min = 1.0;
  double sigma3_max = 0.0;
  long horizon = 0;
  int anchor_plus = -1, anchor_minus = -1; // anchors actually used
};

namespace detail {

// Chain eigenvector phases along the grid, anchor the first point, and spread
// the loop holonomy uniformly so the section closes up smoothly.
inline void align_section(std::vector<Eigen::VectorXcd>& x, int anchor) {
  const long G = (long)x.size();
  cplx a0 = x[0][anchor];
  require(std::abs(a0) > 1e-8 * x[0].norm(), errc::frame_alignment_failure,
          "anchor component vanishes at theta_0");
  x[0] *= std::conj(a0) / std::abs(a0);
  for (long j = 1; j < G; ++j) {
    cplx z = x[j - 1].dot(x[j]);
    double overlap = std::abs(z) / (x[j - 1].norm() * x[j].norm());
    require(overlap >= 0.5, errc::branch_discontinuity,
            "eigenvector branch jumped near theta " + std::to_string((double)j / (double)G));
    x[j] *= std::conj(z) / std::abs(z);
  }
  double hol = std::arg(x[G - 1].dot(x[0]));
  for (long j = 0; j < G; ++j) x[j] *= std::polar(1.0, hol * (double)j / (double)G);
}

}  // namespace detail

inline CenterFrame symplectic_normalize(const SubspaceField& ss, const DualCocycle& dc,
                                        const CenterOptions& opt = {}) {
  const long G = (long)ss.basis.size();
  const long d = ss.d;
  const long m = 2 * d;
  require(G >= 16, errc::bad_input, "subspace field is empty");
  require(std::abs(dc.energy.imag()) == 0.0, errc::bad_input,
          "center frames are built at real energies");

  CenterFrame f;
  f.v = dc.v;
  f.alpha = dc.map.alpha;
  f.energy = dc.energy.real();
  f.eps = dc.eps;
  f.d = d;
  f.S = dc.S;
  f.theta_grid = ss.theta_grid;
  f.strip_radius = dc.map.strip_radius;
  f.domination_margin = ss.domination_margin;
  f.sigma2_min = ss.sigma2_min;
  f.sigma3_max = ss.sigma3_max;
  f.horizon = ss.horizon;

  const MatrixXcd iS = cplx(0.0, 1.0) * dc.S;
  std::vector<Eigen::VectorXcd> xp(G), xm(G);
  for (long j = 0; j < G; ++j) {
    // Orthonormalize whatever presentation the subspace field carries, then
    // diagonalize the compressed pairing. The resulting directions are those
    // of the restriction of iS to the subspace itself, independent of the
    // presentation, so the frame is pinned up to per-section phases.
    MatrixXcd q = detail::thin_orth(ss.basis[j]);
    Matrix2cd h = q.adjoint() * iS * q;
    h = 0.5 * (h + h.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix2cd> es(h);
    double lo = es.eigenvalues()[0], hi = es.eigenvalues()[1];
    require(lo < 0.0 && hi > 0.0 && std::min(-lo, hi) > 1e-10 * std::max(-lo, hi),
            errc::center_degenerate,
            "restricted pairing lost its (1,1) signature at theta " +
                std::to_string(f.theta_grid[j]));
    xm[j] = q * es.eigenvectors().col(0) / std::sqrt(-lo);
    xp[j] = q * es.eigenvectors().col(1) / std::sqrt(hi);
  }

  int ap = opt.anchor_plus >= 0 ? opt.anchor_plus : 0;
  int am = opt.anchor_minus >= 0 ? opt.anchor_minus : 0;
  if (opt.anchor_plus < 0) xp[0].cwiseAbs().maxCoeff(&ap);
  if (opt.anchor_minus < 0) xm[0].cwiseAbs().maxCoeff(&am);
  f.anchor_plus = ap;
  f.anchor_minus = am;
  detail::align_section(xp, ap);
  detail::align_section(xm, am);

  // Null directions of the pairing combine into the section pair; the pairing
  // value c = u*Sv is then constant by construction and only its numerical
  // drift is left to check.
  f.u_basis.resize(m, G);
  f.v_basis.resize(m, G);
  f.c_values.resize(G);
  std::vector<cplx> sq(G);
  for (long j = 0; j < G; ++j) {
    Eigen::VectorXcd u = xp[j] + xm[j];
    Eigen::VectorXcd v = xp[j] - xm[j];
    cplx c = (u.adjoint() * dc.S * v)(0, 0);
    require(std::abs(c) > opt.degeneracy_floor, errc::center_degenerate,
            "center pairing degenerate at theta " + std::to_string(f.theta_grid[j]));
    f.c_values[j] = c;
    cplx s = std::sqrt(c);
    if (j > 0 && std::abs(s - sq[j - 1]) > std::abs(s + sq[j - 1])) s = -s;
    sq[j] = s;
    f.u_basis.col(j) = u / std::conj(s);
    f.v_basis.col(j) = v / s;
  }
  require(std::abs(sq[G - 1] - sq[0]) <= std::abs(sq[G - 1] + sq[0]), errc::branch_discontinuity,
          "square root of the pairing has odd holonomy");
  for (long j = 0; j < G; ++j) {
    cplx pairing = (f.u_basis.col(j).adjoint() * dc.S * f.v_basis.col(j))(0, 0);
    f.normalization_error = std::max(f.normalization_error, std::abs(pairing - 1.0));
  }

  // Transfer matrix per grid point, with theta + alpha through the mode twist.
  std::vector<detail::TrigSeries> su(m), sv(m);
  MatrixXcd u_shift(m, G), v_shift(m, G);
  for (long r = 0; r < m; ++r) {
    su[r] = detail::TrigSeries::from_samples(f.u_basis.row(r).transpose());
    sv[r] = detail::TrigSeries::from_samples(f.v_basis.row(r).transpose());
    u_shift.row(r) = su[r].shifted_grid(f.alpha).transpose();
    v_shift.row(r) = sv[r].shifted_grid(f.alpha).transpose();
  }

  f.phi.resize(G);
  f.C_values.assign(G, Matrix2cd::Zero());
  const Matrix2cd J2 = (Matrix2cd() << 0.0, 1.0, -1.0, 0.0).finished();
  double arg_prev = 0.0, arg0 = 0.0;
  std::vector<Matrix2cd> mt(G);
  for (long j = 0; j < G; ++j) {
    MatrixXcd a = dc.map.sampler(cplx(f.theta_grid[j], 0.0));
    MatrixXcd lhs(m, 2), next(m, 2);
    lhs.col(0) = a * f.u_basis.col(j);
    lhs.col(1) = a * f.v_basis.col(j);
    next.col(0) = u_shift.col(j);
    next.col(1) = v_shift.col(j);
    Matrix2cd mj = next.colPivHouseholderQr().solve(lhs);
    mt[j] = mj;
    f.frame_residual =
        std::max(f.frame_residual, (lhs - next * mj).cwiseAbs().maxCoeff());
    if (f.eps == 0.0)
      f.omega_defect = std::max(
          f.omega_defect, (mj.adjoint() * J2 * mj - J2).cwiseAbs().maxCoeff());

    cplx det = mj.determinant();
    f.det_defect = std::max(f.det_defect, std::abs(std::abs(det) - 1.0));
    double a_raw = std::arg(det);
    if (j == 0) {
      arg_prev = arg0 = a_raw;
    } else {
      double step = detail::wrap_half((a_raw - arg_prev) / kTwoPi) * kTwoPi;
      require(std::abs(step) <= 0.25 * kTwoPi, errc::branch_discontinuity,
              "transfer determinant phase jumped near theta " +
                  std::to_string(f.theta_grid[j]));
      arg_prev += step;
    }
    f.phi[j] = arg_prev / (2.0 * kTwoPi);
    f.C_values[j] = mj * std::polar(1.0, -0.5 * arg_prev);
    f.realness_defect =
        std::max(f.realness_defect, f.C_values[j].imag().cwiseAbs().maxCoeff());
  }
  double wrap = detail::wrap_half((std::arg(mt[0].determinant()) - arg_prev) / kTwoPi) * kTwoPi;
  f.winding = (arg_prev + wrap - arg0) / (2.0 * kTwoPi);
  require(detail::dist_to_int(2.0 * f.winding) < 0.05, errc::branch_discontinuity,
          "phase winding did not close to a half-integer");
  f.winding = std::round(2.0 * f.winding) / 2.0;
  f.mean_phi = f.phi.mean();

  if (f.eps == 0.0) {
    require(f.realness_defect < 1e-6, errc::center_degenerate,
            "transfer matrix failed to come out real: defect " +
                std::to_string(f.realness_defect));
    require(f.det_defect < 1e-8, errc::center_degenerate,
            "transfer determinant drifted off the unit circle: defect " +
                std::to_string(f.det_defect));
    require(f.omega_defect < 1e-5, errc::center_degenerate,
            "pullback symplectic form not preserved: defect " +
                std::to_string(f.omega_defect));
  } else {
    f.omega_defect = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

inline CenterFrame center_frame(const TrigPotential& v, double alpha, double E, double eps,
                                const CenterOptions& opt = {}) {
  auto dc = dual_cocycle(v, alpha, cplx(E, 0.0), eps);
  auto ss = center_subspace(dc, opt);
  return symplectic_normalize(ss, dc, opt);
}

// ---------------------------------------------------------------------------
// The restricted dynamics as a 2x2 cocycle. `realify` drops the (validated)
// imaginary noise and renormalizes the determinant so the engine's SL(2,R)
// paths accept the sampler; the raw variant keeps the complex entries for
// exponent measurements at nonzero eps.
inline CocycleMap center_cocycle(const CenterFrame& f, bool realify = false) {
  const long G = f.theta_grid.size();
  auto entries = std::make_shared<std::array<detail::TrigSeries, 4>>();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXcd samples(G);
      for (long j = 0; j < G; ++j) samples[j] = f.C_values[j](r, c);
      (*entries)[2 * r + c] = detail::TrigSeries::from_samples(samples);
    }
  if (realify)
    require(f.eps == 0.0 && f.realness_defect < 1e-6, errc::bad_input,
            "realified center cocycle needs a validated real frame");

  CocycleMap c;
  c.alpha = f.alpha;
  c.dim = 2;
  c.strip_radius = 0.0;
  c.sampler = [entries, realify](cplx z) {
    require(std::abs(z.imag()) < 1e-12, errc::strip_exceeded,
            "center cocycle is tabulated on the real axis only");
    Matrix2cd m;
    for (int r = 0; r < 2; ++r)
      for (int c2 = 0; c2 < 2; ++c2) m(r, c2) = (*entries)[2 * r + c2].eval(z.real());
    if (realify) {
      Matrix2d mr = m.real();
      double det = mr.determinant();
      require(det > 0.25, errc::singular_sample, "center sampler determinant collapsed");
      return MatrixXcd((mr / std::sqrt(det)).cast<cplx>());
    }
    return MatrixXcd(m);
  };
  return c;
}

inline double center_top_exponent(const CenterFrame& f, LyapunovOptions opt = {}) {
  return lyapunov_spectrum(center_cocycle(f), opt).exponents[0];
}

// ---------------------------------------------------------------------------
// Exponent invariance across the complexification strip: the restriction's
// top exponent must not move when the frame is rebuilt at shifted phase.
struct InvarianceReport {
  std::vector<double> eps;
  std::vector<double> L1;
  double L1_base = 0.0;
  double max_deviation = 0.0;
};

inline InvarianceReport center_invariance_check(const CenterFrame& base,
                                                const std::vector<double>& eps_list,
                                                const CenterOptions& copt = {},
                                                LyapunovOptions lopt = {}) {
  auto sc = schrodinger_cocycle(base.v, base.alpha, base.energy);
  double L0 = lyapunov_spectrum(sc, lopt).exponents[0];
  double cap = std::min(base.strip_radius, L0 / kTwoPi);

  InvarianceReport rep;
  rep.L1_base = center_top_exponent(base, lopt);
  for (double e : eps_list) {
    require(std::abs(e) <= cap + 1e-12, errc::strip_exceeded,
            "eps " + std::to_string(e) + " leaves the validity strip (cap " +
                std::to_string(cap) + ")");
    double l1 = e == 0.0 && base.eps == 0.0
                    ? rep.L1_base
                    : center_top_exponent(center_frame(base.v, base.alpha, base.energy, e, copt),
                                          lopt);
    rep.eps.push_back(e);
    rep.L1.push_back(l1);
    rep.max_deviation = std::max(rep.max_deviation, std::abs(l1 - rep.L1_base));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Fibered rotation numbers of the frame and their pairing with the density of
// states of the original operator.
struct RotationIdsRecord {
  double E = 0.0;
  double rho_hat = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double mean_phi = 0.0;
  double N = std::numeric_limits<double>::quiet_NaN();
  double L = std::numeric_limits<double>::quiet_NaN();
  long omega = std::numeric_limits<long>::min();
  int winding_correction = 0;
};

struct CenterRotationOptions {
  RotationOptions rotation;
  IdsOptions ids;
  bool with_ids = true;
};

inline RotationIdsRecord center_rotation(const CenterFrame& f, CenterRotationOptions opt = {}) {
  require(f.eps == 0.0, errc::bad_input, "rotation numbers need a real-axis frame");
  require(f.realness_defect < 1e-6, errc::bad_input,
          "rotation numbers are defined only for frames with a real transfer matrix");
  require(detail::dist_to_int(f.winding) < 1e-9, errc::not_homotopic_to_identity,
          "half-integer phase winding leaves the transfer matrix antiperiodic");

  RotationIdsRecord rec;
  rec.E = f.energy;
  rec.mean_phi = f.mean_phi;

  CocycleMap c2 = center_cocycle(f, /*realify=*/true);
  int w = sampler_winding(c2);
  if (w != 0) {
    // Unwind before measuring: multiply by a rotation of opposite degree.
    rec.winding_correction = w;
    auto base = c2.sampler;
    c2.sampler = [base, w](cplx z) {
      return MatrixXcd(detail::rot2(-kTwoPi * (double)w * z.real()).cast<cplx>() * base(z));
    };
  }
  rec.rho_hat = rotation_number(c2, opt.rotation);
  rec.rho1 = detail::frac(rec.mean_phi + rec.rho_hat);
  rec.rho2 = detail::frac(rec.mean_phi - rec.rho_hat);
  if (opt.with_ids) rec.N = ids(f.v, f.alpha, f.energy, opt.ids).N;
  return rec;
}

inline RotationIdsRecord center_rotation(const CenterFrame& f, const RegimeLabel& label,
                                         CenterRotationOptions opt = {}) {
  auto rec = center_rotation(f, opt);
  rec.L = label.L0;
  rec.omega = label.omega;
  return rec;
}

// ---------------------------------------------------------------------------
// Rotation/IDS duality across an energy sweep. Both labelings of the rotation
// pair are tested for constancy of (rho2 - rho1) - N and the steadier one is
// reported; the engine fixes only an overall orientation, not the labeling.
struct DualitySweep {
  std::vector<RotationIdsRecord> records;
  double k = 0.0;         // circular mean of the matched combination
  double residual = 0.0;  // circular standard deviation
  int branch = +1;        // +1: labels as computed; -1: rho1 and rho2 swapped
  double rho1_monotone_violation = 0.0;
  double rho2_monotone_violation = 0.0;
};

struct SweepOptions {
  CenterOptions center;
  ClassifyOptions classify;
  CenterRotationOptions rotation;
};

namespace detail {

struct CircularStats {
  double mean = 0.0;  // in [0,1)
  double stddev = 0.0;
};

inline CircularStats circular_stats(const std::vector<double>& turns) {
  cplx acc(0.0, 0.0);
  for (double t : turns) acc += std::polar(1.0, kTwoPi * t);
  acc /= (double)turns.size();
  CircularStats s;
  s.mean = frac(std::arg(acc) / kTwoPi);
  double r = std::min(1.0, std::abs(acc));
  s.stddev = r < 1e-300 ? std::numeric_limits<double>::infinity()
                        : std::sqrt(std::max(0.0, -2.0 * std::log(r))) / kTwoPi;
  return s;
}

}  // namespace detail

inline DualitySweep duality_ids_sweep(const TrigPotential& v, double alpha,
                                      const std::vector<double>& E_grid,
                                      const SweepOptions& opt = {}) {
  require(!E_grid.empty(), errc::bad_input, "empty energy grid");
  for (size_t i = 0; i + 1 < E_grid.size(); ++i)
    require(E_grid[i] < E_grid[i + 1], errc::bad_input, "energy grid must increase strictly");

  DualitySweep sweep;
  std::vector<double> t_as_is, t_swapped;
  for (double E : E_grid) {
    auto label = classify(v, alpha, E, opt.classify);
    if (!(label.regime == Regime::supercritical && label.type_one))
      fail(errc::window_violation,
           "E = " + std::to_string(E) + " is not supercritical type I (regime " +
               regime_name(label.regime) + ", T-acceleration " + std::to_string(label.t_omega) +
               ")");
    auto frame = center_frame(v, alpha, E, 0.0, opt.center);
    auto rec = center_rotation(frame, label, opt.rotation);
    t_as_is.push_back(detail::frac(rec.rho2 - rec.rho1 - rec.N));
    t_swapped.push_back(detail::frac(rec.rho1 - rec.rho2 - rec.N));
    sweep.records.push_back(rec);
  }

  auto s1 = detail::circular_stats(t_as_is);
  auto s2 = detail::circular_stats(t_swapped);
  bool swap = s2.stddev < s1.stddev;
  sweep.branch = swap ? -1 : +1;
  sweep.k = swap ? s2.mean : s1.mean;
  sweep.residual = swap ? s2.stddev : s1.stddev;

  for (size_t i = 0; i + 1 < sweep.records.size(); ++i) {
    double r1a = swap ? sweep.records[i].rho2 : sweep.records[i].rho1;
    double r1b = swap ? sweep.records[i + 1].rho2 : sweep.records[i + 1].rho1;
    double r2a = swap ? sweep.records[i].rho1 : sweep.records[i].rho2;
    double r2b = swap ? sweep.records[i + 1].rho1 : sweep.records[i + 1].rho2;
    sweep.rho1_monotone_violation =
        std::max(sweep.rho1_monotone_violation, detail::wrap_half(r1b - r1a));
    sweep.rho2_monotone_violation =
        std::max(sweep.rho2_monotone_violation, -detail::wrap_half(r2b - r2a));
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Convergence of the frame under coefficient truncation of an analytic
// potential. The frame construction is canonical up to per-section constant
// phases, so adjacent orders are compared after aligning a constant gauge and
// the half-turn ambiguity of the phase anchor.
struct TruncationReport {
  std::vector<long> orders;
  std::vector<bool> regime_ok;  // advisory: supercritical type I verified at this order
  std::vector<bool> built;      // frame construction succeeded at this order
  std::vector<std::string> warnings;
  std::vector<double> dists;    // dists[i] = d(orders[i], orders[i+1]); NaN if a side is missing
  double slope = 0.0;
  double r2 = 0.0;
  CenterFrame limit;            // frame at the highest order
};

struct TruncationOptions {
  CenterOptions center;
  ClassifyOptions classify;
  bool verify_regime = true;
  double dist_floor = 1e-13;
};

namespace detail {

// Constant 2x2 gauge aligning C_b toward C_a: the unit-norm T minimizing
// sum_theta |C_b T - T C_a|_F^2, the null-most direction of the stacked
// Sylvester operator.
inline Matrix2d commuting_gauge(const std::vector<Matrix2cd>& ca,
                                const std::vector<Matrix2cd>& cb) {
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  const Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
  for (size_t j = 0; j < ca.size(); ++j) {
    Eigen::Matrix4d op = Eigen::Matrix4d::Zero();
    Matrix2d a = ca[j].real(), b = cb[j].real();
    // vec(B T - T A) = (I (x) B - A^T (x) I) vec(T), column-major blocks.
    for (int p = 0; p < 2; ++p)
      for (int q = 0; q < 2; ++q) {
        op.block<2, 2>(2 * p, 2 * q) = (p == q ? b : Matrix2d::Zero().eval()) - a(q, p) * id;
      }
    acc += op.transpose() * op;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(acc);
  Eigen::Vector4d t = es.eigenvectors().col(0);
  Matrix2d T;
  T << t[0], t[2], t[1], t[3];
  double det = T.determinant();
  if (std::abs(det) < 1e-6) return Matrix2d::Identity();
  T /= std::sqrt(std::abs(det));
  return T;
}

// Local polish of a constant gauge candidate: damped Newton over sl(2) on the
// mean squared conjugation defect, with numerical derivatives. The Sylvester
// seed minimizes a linearized surrogate; this descends the true objective.
inline Matrix2d refine_gauge(const std::vector<Matrix2cd>& ca,
                             const std::vector<Matrix2cd>& cb, Matrix2d T) {
  const double n = (double)ca.size();
  auto cost = [&](const Matrix2d& t) {
    double det = t.determinant();
    if (std::abs(det) < 1e-8) return std::numeric_limits<double>::infinity();
    Matrix2d ti = t.inverse();
    double s = 0.0;
    for (size_t j = 0; j < ca.size(); ++j)
      s += (ti * cb[j].real() * t - ca[j].real()).squaredNorm();
    return s / n;
  };
  std::array<Matrix2d, 3> gen;
  gen[0] << 1, 0, 0, -1;
  gen[1] << 0, 1, 0, 0;
  gen[2] << 0, 0, 1, 0;
  auto expm = [](const Matrix2d& x) {
    Matrix2d r = Matrix2d::Identity(), p = Matrix2d::Identity();
    for (int k = 1; k <= 14; ++k) {
      p = (p * x / (double)k).eval();
      r += p;
    }
    return r;
  };
  double c0 = cost(T);
  const double h = 1e-5;
  double mu = 1e-3;
  for (int it = 0; it < 60; ++it) {
    Eigen::Vector3d grad;
    Eigen::Matrix3d hess;
    std::array<double, 3> cp, cm;
    for (int a = 0; a < 3; ++a) {
      cp[a] = cost(T * expm(h * gen[a]));
      cm[a] = cost(T * expm(-h * gen[a]));
      grad[a] = (cp[a] - cm[a]) / (2.0 * h);
      hess(a, a) = (cp[a] + cm[a] - 2.0 * c0) / (h * h);
    }
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        double cab = cost(T * expm(h * (gen[a] + gen[b])));
        hess(a, b) = hess(b, a) = (cab - cp[a] - cp[b] + c0) / (h * h);
      }
    if (grad.norm() < 1e-14 * (1.0 + c0)) break;
    bool stepped = false;
    for (int tries = 0; tries < 8; ++tries) {
      Eigen::Matrix3d m = hess + mu * Eigen::Matrix3d::Identity();
      Eigen::Vector3d step = m.ldlt().solve(-grad);
      Matrix2d x = step[0] * gen[0] + step[1] * gen[1] + step[2] * gen[2];
      Matrix2d cand = T * expm(x);
      double c1 = cost(cand);
      if (c1 < c0) {
        T = cand;
        c0 = c1;
        mu = std::max(mu * 0.3, 1e-10);
        stepped = true;
        break;
      }
      mu *= 10.0;
    }
    if (!stepped) break;
  }
  return T / std::sqrt(std::abs(T.determinant()));
}

// Distance between frames up to the residual gauge: a half-integer phase
// shift (C flips sign on half-odd shifts so e^{2 pi i phi} C is unchanged)
// plus an optional constant conjugation of C.
inline double frame_distance(const CenterFrame& a, const CenterFrame& b,
                             bool align_gauge = true) {
  require(a.theta_grid.size() == b.theta_grid.size(), errc::bad_input,
          "frames tabulated on different grids");
  const long G = a.theta_grid.size();
  double shift = std::round(2.0 * (b.mean_phi - a.mean_phi)) / 2.0;
  double csign = detail::dist_to_int(shift) > 0.25 ? -1.0 : 1.0;
  double phase_max = 0.0, raw = 0.0;
  for (long j = 0; j < G; ++j) {
    phase_max = std::max(phase_max, std::abs(b.phi[j] - shift - a.phi[j]));
    raw = std::max(raw, (csign * b.C_values[j] - a.C_values[j]).cwiseAbs().maxCoeff());
  }
  if (!align_gauge || raw < 1e-10) return std::max(phase_max, raw);
  std::vector<Matrix2cd> cb_signed(G);
  for (long j = 0; j < G; ++j) cb_signed[j] = csign * b.C_values[j];
  auto sup_defect = [&](const Matrix2d& t) {
    Matrix2d ti = t.inverse();
    double s = 0.0;
    for (long j = 0; j < G; ++j)
      s = std::max(s,
                   (ti * cb_signed[j].real() * t - a.C_values[j].real()).cwiseAbs().maxCoeff());
    return s;
  };
  // Seed the polish from both orderings; an exact minimizer is symmetric, so
  // disagreement between the two seeds measures surrogate error only.
  Matrix2d t1 = refine_gauge(a.C_values, cb_signed, commuting_gauge(a.C_values, cb_signed));
  Matrix2d t2 = refine_gauge(a.C_values, cb_signed,
                             commuting_gauge(cb_signed, a.C_values).inverse());
  double aligned = std::min(sup_defect(t1), sup_defect(t2));
  return std::max(phase_max, std::min(raw, aligned));
}

}  // namespace detail

inline TruncationReport truncation_convergence(const AnalyticPotential& v, double alpha,
                                               double E, long n_lo, long n_hi,
                                               const TruncationOptions& opt = {}) {
  require(n_lo >= 1 && n_lo < n_hi, errc::bad_input, "need at least two truncation orders");

  TruncationReport rep;
  std::vector<CenterFrame> frames;
  bool have_limit = false;
  for (long n = n_lo; n <= n_hi; ++n) {
    TrigPotential vn = v.truncate(n);
    rep.orders.push_back(n);
    bool ok = true;
    if (opt.verify_regime) {
      try {
        auto label = classify(vn, alpha, E, opt.classify);
        ok = label.regime == Regime::supercritical && label.type_one;
        if (!ok)
          rep.warnings.push_back("order " + std::to_string(n) + ": regime " +
                                 regime_name(label.regime) + " is outside the window");
      } catch (const Error& e) {
        ok = false;
        rep.warnings.push_back("order " + std::to_string(n) +
                               ": regime verification failed: " + e.what());
      }
    }
    rep.regime_ok.push_back(ok);
    try {
      frames.push_back(center_frame(vn, alpha, E, 0.0, opt.center));
      rep.built.push_back(true);
      rep.limit = frames.back();
      have_limit = true;
    } catch (const Error& e) {
      frames.emplace_back();
      rep.built.push_back(false);
      rep.warnings.push_back("order " + std::to_string(n) + ": frame skipped: " + e.what());
    }
  }
  require(have_limit, errc::splitting_degenerate, "no truncation order produced a frame");

  std::vector<double> xs, ys;
  for (size_t i = 0; i + 1 < frames.size(); ++i) {
    double dn = std::numeric_limits<double>::quiet_NaN();
    if (rep.built[i] && rep.built[i + 1]) dn = detail::frame_distance(frames[i], frames[i + 1]);
    rep.dists.push_back(dn);
    if (dn > opt.dist_floor) {
      xs.push_back((double)rep.orders[i]);
      ys.push_back(std::log(dn));
    }
  }
  if (xs.size() >= 2) {
    auto line = fit_line(xs, ys);
    rep.slope = line.slope;
    rep.r2 = line.r2;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Cohomological equation psi(theta + alpha) - psi(theta) = phi(theta) - mean,
// solved mode by mode with the small divisors logged.
struct CohomologyResult {
  Eigen::VectorXd psi;
  double residual = 0.0;      // worst defect of the reconstructed identity
  double min_divisor = std::numeric_limits<double>::infinity();
  long modes = 0;             // largest retained |k|
};

namespace detail {

// Continued-fraction beta of the double image of alpha; the expansion of a
// double terminates once the remainder underflows, so retry shallower depths.
inline double beta_of(double alpha) {
  for (int depth : {32, 20, 12, 8, 5, 3, 2, 1}) {
    try {
      return continued_fraction(alpha, depth).beta_estimate;
    } catch (const Error&) {
      continue;
    }
  }
  fail(errc::bad_input, "frequency is rational to working precision");
}

}  // namespace detail

inline CohomologyResult cohomological_solve(const Eigen::VectorXd& phi, double alpha, double h,
                                            double beta = -1.0) {
  const long G = phi.size();
  require(G >= 16, errc::bad_input, "grid too short for a cohomological solve");
  require(h > 0.0, errc::bad_input, "strip radius must be positive");
  if (beta < 0.0) beta = detail::beta_of(alpha);
  require(beta / kTwoPi < h, errc::bad_input,
          "strip too narrow for the small-divisor sum: beta/2pi = " +
              std::to_string(beta / kTwoPi));

  Eigen::VectorXcd samples = phi.cast<cplx>();
  Eigen::FFT<double> fft;
  Eigen::VectorXcd freq;
  fft.fwd(freq, samples);
  freq /= (double)G;

  long keep = 0;
  for (long idx = 1; idx < G; ++idx) {
    long k = detail::TrigSeries::signed_mode(idx, G);
    if (std::abs(freq[idx]) >= 1e-12) keep = std::max(keep, std::labs(k));
  }

  CohomologyResult out;
  out.modes = keep;
  Eigen::VectorXcd psi_hat = Eigen::VectorXcd::Zero(G);
  for (long idx = 1; idx < G; ++idx) {
    long k = detail::TrigSeries::signed_mode(idx, G);
    if (k == 0 || std::labs(k) > keep) continue;
    cplx div = std::polar(1.0, kTwoPi * (double)k * alpha) - 1.0;
    if (std::abs(div) < 1e-12)
      fail(errc::small_divisor_overflow,
           "divisor collapse at mode " + std::to_string(k) + ": |e^{2 pi i k alpha} - 1| = " +
               std::to_string(std::abs(div)));
    out.min_divisor = std::min(out.min_divisor, std::abs(div));
    psi_hat[idx] = freq[idx] / div;
  }

  Eigen::VectorXcd psi_c, shift_c;
  Eigen::VectorXcd twisted(G);
  fft.inv(psi_c, Eigen::VectorXcd(psi_hat * (double)G));
  for (long idx = 0; idx < G; ++idx)
    twisted[idx] = psi_hat[idx] * (double)G *
                   std::polar(1.0, kTwoPi * (double)detail::TrigSeries::signed_mode(idx, G) * alpha);
  fft.inv(shift_c, twisted);

  out.psi = psi_c.real();
  double mean = freq[0].real();
  for (long j = 0; j < G; ++j)
    out.residual = std::max(out.residual,
                            std::abs(shift_c[j].real() - psi_c[j].real() - (phi[j] - mean)));
  require(out.residual < 1e-8, errc::small_divisor_overflow,
          "cohomological reconstruction residual " + std::to_string(out.residual));
  return out;
}

// ---------------------------------------------------------------------------
// Diophantine phase window: || 2 theta + k alpha || >= gamma / (|k|+1)^tau for
// all |k| up to the finite check horizon.
struct DiophantineWindow {
  double tau = 1.5;
  double gamma = 1e-2;
  long k_max = 10000;

  struct Margin {
    double value = std::numeric_limits<double>::infinity();
    long k = 0;
  };

  Margin margin_detail(double theta, double alpha) const {
    require(tau > 1.0 && gamma > 0.0, errc::degenerate_window,
            "window needs tau > 1 and gamma > 0");
    Margin m;
    for (long k = -k_max; k <= k_max; ++k) {
      double val = detail::dist_to_int(2.0 * theta + (double)k * alpha) *
                   std::pow((double)(std::labs(k) + 1), tau);
      if (val < m.value) {
        m.value = val;
        m.k = k;
      }
    }
    return m;
  }

  double margin(double theta, double alpha) const { return margin_detail(theta, alpha).value; }
  bool member(double theta, double alpha) const { return margin(theta, alpha) >= gamma; }
};

// ---------------------------------------------------------------------------
// Bloch waves. The frame is conjugated toward a constant rotation by bounded
// iterative averaging; the achieved residual is reported, not certified. The
// reduced sections build quasiperiodic solutions whose Fourier coefficients
// are exponentially localized eigenvectors of the operator at the phases
// rho_1 and rho_2.
struct BlochWave {
  double E = 0.0;
  double phase = 0.0;          // rho_1 for the first wave, rho_2 for the second
  long n_max = 0;
  Eigen::VectorXcd amplitudes; // u(n) at index n + n_max, unit norm
  double residual = 0.0;       // ||(H - E) u|| on the window
  DecayFit decay;
};

struct BlochPair {
  BlochWave u;
  BlochWave v;
  double conj_residual = 0.0;  // worst distance of the conjugated cocycle from the rotation
  bool stalled = false;
  double rho_achieved = 0.0;
  int iterations = 0;
};

struct BlochOptions {
  long n_max = 256;
  double subcritical_gate = 1e-2;
  long mode_cap = 256;
  double target_residual = 1e-11;
  double stall_threshold = 1e-6;
  LyapunovOptions lyap;
  RotationOptions rotation;

  BlochOptions() {
    lyap.horizon = 1L << 13;
    lyap.segments = 4;
    lyap.tol = 5e-4;
  }
};

namespace detail {

// Principal log of an SL(2,R) matrix near the identity (trace > -2).
inline Matrix2d sl2_log(const Matrix2d& x, bool& ok) {
  double t = 0.5 * x.trace();
  Matrix2d y = x - t * Matrix2d::Identity();
  ok = t > -0.999;
  if (!ok) return Matrix2d::Zero();
  if (t < 1.0) {
    double delta = std::acos(std::clamp(t, -1.0, 1.0));
    double s = std::sin(delta);
    return delta < 1e-8 ? y : Matrix2d((delta / s) * y);
  }
  double delta = std::acosh(std::min(t, 1e12));
  double s = std::sinh(delta);
  return delta < 1e-8 ? y : Matrix2d((delta / s) * y);
}

// exp of a trace-free 2x2 real matrix, closed form through y^2 = -det(y) I.
inline Matrix2d sl2_exp(const Matrix2d& y) {
  double dt = y.determinant();
  if (std::abs(dt) < 1e-30) return Matrix2d::Identity() + y;
  if (dt > 0.0) {
    double w = std::sqrt(dt);
    return std::cos(w) * Matrix2d::Identity() + (std::sin(w) / w) * y;
  }
  double w = std::sqrt(-dt);
  return std::cosh(w) * Matrix2d::Identity() + (std::sinh(w) / w) * y;
}

}  // namespace detail

inline BlochPair bloch_reconstruct(const CenterFrame& f, const Eigen::VectorXd& psi,
                                   double alpha, const DiophantineWindow& window,
                                   int conjugation_budget = 48, const BlochOptions& opt = {}) {
  const long G = f.theta_grid.size();
  require(psi.size() == G, errc::bad_input, "psi grid does not match the frame grid");
  require(std::abs(alpha - f.alpha) < 1e-15, errc::bad_input,
          "frequency does not match the frame");
  require(opt.n_max >= 8 && 2 * opt.n_max < G, errc::bad_input,
          "amplitude window must fit inside the grid");

  CenterRotationOptions ropt;
  ropt.rotation = opt.rotation;
  ropt.with_ids = false;
  auto rec = center_rotation(f, ropt);

  double l1 = lyapunov_spectrum(center_cocycle(f, /*realify=*/true), opt.lyap).exponents[0];
  require(l1 < opt.subcritical_gate, errc::bad_input,
          "center cocycle is not subcritical: L1 = " + std::to_string(l1));

  auto wm = window.margin_detail(rec.rho_hat, alpha);
  if (wm.value < window.gamma)
    fail(errc::window_rejected,
         "rho_hat leaves the Diophantine window at k = " + std::to_string(wm.k) +
             ": margin " + std::to_string(wm.value) + " < gamma " + std::to_string(window.gamma));

  // Realified transfer matrices and the accumulated conjugation.
  std::vector<Matrix2d> C(G), B(G, Matrix2d::Identity());
  for (long j = 0; j < G; ++j) {
    Matrix2d m = f.C_values[j].real();
    double det = m.determinant();
    require(det > 0.25, errc::singular_sample, "realified transfer matrix became singular");
    C[j] = m / std::sqrt(det);
  }

  BlochPair pair;
  double rho_t = rec.rho_hat;
  Eigen::FFT<double> fft;
  double res_prev = std::numeric_limits<double>::infinity();
  int grew = 0;
  for (int iter = 0; iter < conjugation_budget; ++iter) {
    Matrix2d r = detail::rot2(kTwoPi * rho_t);
    double res = 0.0;
    for (long j = 0; j < G; ++j) res = std::max(res, (C[j] - r).cwiseAbs().maxCoeff());
    pair.conj_residual = res;
    pair.iterations = iter;
    if (res < opt.target_residual) break;
    if (res > 2.0 * res_prev && ++grew >= 3) break;
    res_prev = std::min(res_prev, res);

    // Deviation in the rotation algebra, split into the commuting component
    // and the doubly twisted one.
    Eigen::VectorXcd a_dev(G), s_dev(G);
    bool ok = true;
    double wmax = 0.0;
    for (long j = 0; j < G; ++j) {
      Matrix2d w = detail::sl2_log(r.transpose() * C[j], ok);
      if (!ok) break;
      double aj = 0.5 * (w(1, 0) - w(0, 1));
      cplx sj(0.5 * (w(0, 0) - w(1, 1)), 0.5 * (w(0, 1) + w(1, 0)));
      a_dev[j] = aj;
      s_dev[j] = sj;
      wmax = std::max({wmax, std::abs(aj), std::abs(sj)});
    }
    if (!ok) break;
    double damp = std::min(1.0, 0.5 / std::max(wmax, 1e-300));

    Eigen::VectorXcd a_hat, s_hat;
    fft.fwd(a_hat, a_dev);
    fft.fwd(s_hat, s_dev);
    a_hat /= (double)G;
    s_hat /= (double)G;
    rho_t += damp * a_hat[0].real() / kTwoPi;

    const long k_cap = std::min({G / 2 - 1, opt.mode_cap, (long)4 << std::min(iter, 20)});
    Eigen::VectorXcd ya = Eigen::VectorXcd::Zero(G), ys = Eigen::VectorXcd::Zero(G);
    for (long idx = 0; idx < G; ++idx) {
      long k = detail::TrigSeries::signed_mode(idx, G);
      if (std::labs(k) > k_cap) continue;
      if (k != 0) {
        cplx div = std::polar(1.0, kTwoPi * (double)k * alpha) - 1.0;
        if (std::abs(div) > 1e-9) ya[idx] = a_hat[idx] / div;
      }
      cplx div2 = std::polar(1.0, kTwoPi * ((double)k * alpha - 2.0 * rho_t)) - 1.0;
      if (std::abs(div2) > 1e-9) ys[idx] = s_hat[idx] / div2;
    }

    auto grid_of = [&](const Eigen::VectorXcd& hat, double shift, Eigen::VectorXcd& out) {
      Eigen::VectorXcd tw(G);
      for (long idx = 0; idx < G; ++idx)
        tw[idx] = hat[idx] * (double)G *
                  std::polar(1.0, kTwoPi * (double)detail::TrigSeries::signed_mode(idx, G) * shift);
      fft.inv(out, tw);
    };
    Eigen::VectorXcd ya0, ys0, ya1, ys1;
    grid_of(ya, 0.0, ya0);
    grid_of(ys, 0.0, ys0);
    grid_of(ya, alpha, ya1);
    grid_of(ys, alpha, ys1);

    r = detail::rot2(kTwoPi * rho_t);
    for (long j = 0; j < G; ++j) {
      auto make = [&](cplx a, cplx s) {
        double aj = damp * a.real(), sp = damp * s.real(), sq = damp * s.imag();
        Matrix2d y;
        y << sp, -aj + sq, aj + sq, -sp;
        return detail::sl2_exp(y);
      };
      Matrix2d e0 = make(ya0[j], ys0[j]);
      Matrix2d e1 = make(ya1[j], ys1[j]);
      Matrix2d c = e1.inverse() * C[j] * e0;
      double det = c.determinant();
      require(det > 0.25, errc::singular_sample, "conjugation step became singular");
      C[j] = c / std::sqrt(det);
      B[j] = B[j] * e0;
    }
  }
  {
    Matrix2d r = detail::rot2(kTwoPi * rho_t);
    double res = 0.0;
    for (long j = 0; j < G; ++j) res = std::max(res, (C[j] - r).cwiseAbs().maxCoeff());
    pair.conj_residual = res;
  }
  pair.stalled = pair.conj_residual > opt.stall_threshold;
  pair.rho_achieved = rho_t;

  // Reduced sections: columns of (u, v) B e^{2 pi i psi} solve the transfer
  // relation with the constant rotation; combining them along the rotation's
  // eigenvectors yields the two Bloch exponents.
  const long row = f.d - 1;  // component carrying u(n) in the companion state
  Eigen::VectorXcd fvals(G), gvals(G);
  const cplx iu(0.0, 1.0);
  for (long j = 0; j < G; ++j) {
    cplx u_r = f.u_basis(row, j), v_r = f.v_basis(row, j);
    cplx f1 = (u_r * B[j](0, 0) + v_r * B[j](1, 0)) * std::polar(1.0, kTwoPi * psi[j]);
    cplx f2 = (u_r * B[j](0, 1) + v_r * B[j](1, 1)) * std::polar(1.0, kTwoPi * psi[j]);
    fvals[j] = (iu * f1 - f2) / (2.0 * iu);
    gvals[j] = (iu * f1 + f2) / (2.0 * iu);
  }

  double rho1 = detail::frac(f.mean_phi + rho_t);
  double rho2 = detail::frac(f.mean_phi - rho_t);

  auto wave_of = [&](const Eigen::VectorXcd& vals, double phase) {
    BlochWave w;
    w.E = f.energy;
    w.phase = phase;
    w.n_max = opt.n_max;
    Eigen::VectorXcd hat;
    fft.fwd(hat, vals);
    hat /= (double)G;
    w.amplitudes.resize(2 * opt.n_max + 1);
    for (long n = -opt.n_max; n <= opt.n_max; ++n)
      w.amplitudes[n + opt.n_max] = hat[(n % G + G) % G];
    double nrm = w.amplitudes.norm();
    require(nrm > 1e-12, errc::center_degenerate, "Bloch amplitudes vanished");
    w.amplitudes /= nrm;

    Tridiag t;
    const long sz = 2 * opt.n_max + 1;
    t.diag.resize(sz);
    t.off = Eigen::VectorXd::Ones(sz - 1);
    for (long i = 0; i < sz; ++i)
      t.diag[i] = f.v.real_at(detail::frac(phase + (double)(i - opt.n_max) * f.alpha));
    Eigen::VectorXd re = w.amplitudes.real(), im = w.amplitudes.imag();
    Eigen::VectorXd rre = apply(t, re) - f.energy * re;
    Eigen::VectorXd rim = apply(t, im) - f.energy * im;
    w.residual = std::sqrt(rre.squaredNorm() + rim.squaredNorm());
    w.decay = decay_fit(w.amplitudes.cwiseAbs());
    return w;
  };
  pair.u = wave_of(gvals, rho1);
  pair.v = wave_of(fvals, rho2);
  return pair;
}

}  // namespace qplab
