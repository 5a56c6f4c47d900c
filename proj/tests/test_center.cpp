#include "qplab/center.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "qplab/frequency.hpp"

namespace qplab {
namespace {

const double kGolden = golden_frequency().alpha;

// Frames are expensive; build each (potential, E) once and share across tests.
const CenterFrame& amo_frame(double E) {
  static std::map<double, CenterFrame> cache;
  auto it = cache.find(E);
  if (it == cache.end()) it = cache.emplace(E, center_frame(amo(2.0), kGolden, E, 0.0)).first;
  return it->second;
}

const CenterFrame& noneven_frame(double E) {
  static std::map<double, CenterFrame> cache;
  auto it = cache.find(E);
  if (it == cache.end()) {
    CenterOptions opt;
    opt.grid = 1024;
    it = cache.emplace(E, center_frame(noneven(1.5), kGolden, E, 0.0, opt)).first;
  }
  return it->second;
}

LyapunovOptions fast_lyap() {
  LyapunovOptions opt;
  opt.horizon = 1L << 14;
  opt.tol = 2e-4;
  return opt;
}

TEST(CenterSubspace, OneFrequencyCenterIsTheWholeFiber) {
  auto dc = dual_cocycle(amo(2.0), kGolden, cplx(0.5, 0.0), 0.0);
  auto ss = center_subspace(dc);
  EXPECT_EQ(ss.d, 1);
  ASSERT_GE(ss.basis.size(), 16u);
  for (size_t j = 0; j < ss.basis.size(); j += 97) {
    EXPECT_EQ(ss.basis[j].rows(), 2);
    EXPECT_EQ(ss.basis[j].cols(), 2);
    EXPECT_LT((ss.basis[j].adjoint() * ss.basis[j] - MatrixXcd::Identity(2, 2)).norm(), 1e-12);
  }
}

TEST(CenterSubspace, TwoFrequencySlowBundleIsCertified) {
  auto dc = dual_cocycle(noneven(1.5), kGolden, cplx(1.0, 0.0), 0.0);
  CenterOptions opt;
  opt.grid = 512;
  auto ss = center_subspace(dc, opt);
  EXPECT_EQ(ss.d, 2);
  EXPECT_GE(ss.horizon, 50);
  EXPECT_LE(ss.horizon, opt.horizon_cap);
  EXPECT_GT(ss.gap, 0.0);
  EXPECT_GT(ss.domination_margin, 0.0);
  // The sided slow spaces must share exactly a two-dimensional intersection.
  EXPECT_GT(ss.sigma2_min, 1.0 - opt.split_tol);
  EXPECT_LT(ss.sigma3_max, 1.0 - opt.split_tol);
  for (size_t j = 0; j < ss.basis.size(); j += 61) {
    EXPECT_EQ(ss.basis[j].rows(), 4);
    EXPECT_EQ(ss.basis[j].cols(), 2);
    EXPECT_LT((ss.basis[j].adjoint() * ss.basis[j] - MatrixXcd::Identity(2, 2)).norm(), 1e-10);
  }
}

TEST(CenterFrame, TraceMatchesCosineClosedForm) {
  // For one frequency the transfer matrix is conjugate to the rescaled
  // Schrodinger step, so tr C(theta) = (E - 2 cos 2 pi theta) / lambda.
  const double lambda = 2.0, E = 2.0;
  const auto& f = amo_frame(E);
  double worst = 0.0;
  for (long j = 0; j < (long)f.theta_grid.size(); ++j) {
    double expected = (E - 2.0 * std::cos(kTwoPi * f.theta_grid[j])) / lambda;
    worst = std::max(worst, std::abs(f.C_values[j].trace().real() - expected));
  }
  EXPECT_LT(worst, 1e-8);
  EXPECT_LT(f.frame_residual, 1e-6);
  EXPECT_LT(f.normalization_error, 1e-10);
  EXPECT_LT(f.realness_defect, 1e-6);
  EXPECT_LT(f.det_defect, 1e-8);
  EXPECT_LT(f.omega_defect, 1e-5);
}

TEST(CenterFrame, PairingConstantIsMinusTwoI) {
  for (const CenterFrame* f : {&amo_frame(2.0), &noneven_frame(2.5)}) {
    double worst = 0.0;
    for (long j = 0; j < f->c_values.size(); ++j)
      worst = std::max(worst, std::abs(f->c_values[j] - cplx(0.0, -2.0)));
    EXPECT_LT(worst, 1e-10);
  }
}

TEST(CenterFrame, EvenPotentialPinsPhaseToHalfTurns) {
  const auto& f = amo_frame(0.5);
  double worst = 0.0;
  for (long j = 0; j < f.phi.size(); ++j)
    worst = std::max(worst, detail::dist_to_int(2.0 * f.phi[j]));
  EXPECT_LT(worst, 1e-5);
  EXPECT_EQ(f.winding, 0.0);
}

TEST(CenterFrame, NonEvenPotentialBreaksThePhaseSymmetry) {
  const auto& f = noneven_frame(2.5);
  EXPECT_LT(f.frame_residual, 1e-6);
  EXPECT_LT(f.realness_defect, 1e-6);
  EXPECT_LT(f.det_defect, 1e-8);
  EXPECT_LT(f.omega_defect, 1e-5);
  EXPECT_EQ(f.winding, 0.0);
  double lo = f.phi.minCoeff(), hi = f.phi.maxCoeff();
  EXPECT_GT(hi - lo, 1e-3);
  EXPECT_GT(detail::dist_to_int(2.0 * f.mean_phi), 1e-3);
}

TEST(CenterFrame, OffSpectrumRestrictionCarriesTheSlowExponent) {
  auto dc = dual_cocycle(noneven(1.5), kGolden, cplx(1.0, 0.0), 0.0);
  auto spec = dual_lyapunov_spectrum(dc, fast_lyap());
  double L1 = center_top_exponent(noneven_frame(1.0), fast_lyap());
  EXPECT_NEAR(L1, spec.gamma[0], 1e-3);
}

TEST(CenterFrame, OnSpectrumRestrictionHasZeroExponent) {
  EXPECT_LT(std::abs(center_top_exponent(noneven_frame(2.5), fast_lyap())), 1e-2);
}

TEST(CenterFrame, RebuildIsBitIdentical) {
  CenterOptions opt;
  opt.grid = 512;
  auto a = center_frame(noneven(1.5), kGolden, 2.5, 0.0, opt);
  auto b = center_frame(noneven(1.5), kGolden, 2.5, 0.0, opt);
  ASSERT_EQ(a.phi.size(), b.phi.size());
  for (long j = 0; j < a.phi.size(); ++j) {
    EXPECT_EQ(a.phi[j], b.phi[j]);
    EXPECT_EQ((a.C_values[j] - b.C_values[j]).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(a.mean_phi, b.mean_phi);
}

TEST(CenterFrame, BasisPresentationDoesNotLeakIntoTheFrame) {
  CenterOptions opt;
  opt.grid = 512;
  auto dc = dual_cocycle(noneven(1.5), kGolden, cplx(2.5, 0.0), 0.0);
  auto ss = center_subspace(dc, opt);
  auto base = symplectic_normalize(ss, dc, opt);
  for (int trial = 0; trial < 5; ++trial) {
    auto scrambled = ss;
    for (size_t j = 0; j < scrambled.basis.size(); ++j) {
      double a = 1.0 + 0.3 * std::sin(0.7 * trial + 0.013 * (double)j);
      double b = 0.4 * std::cos(1.3 * trial + 0.029 * (double)j);
      double c = 0.2 * std::sin(2.1 * trial) + 0.1;
      Matrix2cd t;
      t << cplx(a, 0.1 * b), cplx(b, 0.05), cplx(c, -0.02), cplx(1.0 - 0.2 * b, 0.03 * a);
      scrambled.basis[j] = scrambled.basis[j] * t;
    }
    auto f = symplectic_normalize(scrambled, dc, opt);
    EXPECT_NEAR(f.mean_phi, base.mean_phi, 1e-9) << "trial " << trial;
    double dphi = 0.0, dC = 0.0;
    for (long j = 0; j < f.phi.size(); ++j) {
      dphi = std::max(dphi, std::abs(f.phi[j] - base.phi[j]));
      dC = std::max(dC, (f.C_values[j] - base.C_values[j]).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(dphi, 1e-9) << "trial " << trial;
    EXPECT_LT(dC, 1e-9) << "trial " << trial;
  }
}

TEST(CenterFrame, StripShiftKeepsTheRestrictedExponent) {
  const auto& f = amo_frame(0.5);
  EXPECT_EQ(f.strip_radius, std::numeric_limits<double>::infinity());
  double eps1 = 0.5 * std::log(2.0) / kTwoPi;
  auto rep = center_invariance_check(f, {0.0, 0.5 * eps1, eps1}, {}, fast_lyap());
  EXPECT_LT(rep.max_deviation, 2e-2);
}

TEST(CenterFrame, StripViolationIsRejected) {
  const auto& f = amo_frame(0.5);
  // The restriction is only defined inside L(E)/2pi ~ 0.11 here.
  try {
    center_invariance_check(f, {0.2}, {}, fast_lyap());
    FAIL() << "shift past the strip was accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::strip_exceeded);
  }
}

TEST(CenterFrame, RejectsNonPowerOfTwoGrid) {
  CenterOptions opt;
  opt.grid = 1000;
  try {
    center_frame(amo(2.0), kGolden, 0.5, 0.0, opt);
    FAIL() << "grid 1000 was accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::bad_input);
  }
}

TEST(CenterRotation, MatchesTheProjectiveRotationOfTheRescaledModel) {
  // The restricted transfer is conjugate to the Schrodinger step of
  // amo(1/lambda) at E/lambda, up to orientation of the conjugacy.
  for (double E : {0.5, -1.3}) {
    const auto& f = amo_frame(E);
    CenterRotationOptions opt;
    opt.rotation.tol = 1e-7;
    opt.with_ids = false;
    auto rec = center_rotation(f, opt);
    double ref = schrodinger_rotation(amo(0.5), kGolden, E / 2.0);
    double diff = std::min(std::abs(detail::wrap_half(rec.rho_hat - ref)),
                           std::abs(detail::wrap_half(rec.rho_hat + ref)));
    EXPECT_LT(diff, 1e-4) << "E=" << E;
  }
}

TEST(CenterRotation, SplitRotationsStayCoupledToTheMeanPhase) {
  for (const CenterFrame* f : {&amo_frame(0.5), &noneven_frame(2.5)}) {
    CenterRotationOptions opt;
    opt.rotation.tol = 1e-6;
    opt.with_ids = false;
    auto rec = center_rotation(*f, opt);
    EXPECT_LT(detail::dist_to_int(rec.rho1 - rec.rho2 - 2.0 * rec.rho_hat), 1e-12);
    EXPECT_LT(detail::dist_to_int(rec.rho1 + rec.rho2 - 2.0 * f->mean_phi), 1e-12);
  }
  // Even potential: the split is symmetric, rho1 = -rho2 mod 1.
  CenterRotationOptions opt;
  opt.rotation.tol = 1e-6;
  opt.with_ids = false;
  auto rec = center_rotation(amo_frame(0.5), opt);
  EXPECT_LT(detail::dist_to_int(rec.rho1 + rec.rho2), 1e-8);
}

TEST(CenterRotation, NonEvenPotentialSplitsAsymmetrically) {
  CenterRotationOptions opt;
  opt.rotation.tol = 1e-6;
  opt.with_ids = false;
  auto rec = center_rotation(noneven_frame(2.5), opt);
  EXPECT_GT(detail::dist_to_int(rec.rho1 + rec.rho2), 1e-3);
}

TEST(CenterRotation, NeedsARealAxisFrame) {
  CenterOptions copt;
  copt.grid = 512;
  auto f = center_frame(amo(2.0), kGolden, 0.5, 0.05, copt);
  try {
    center_rotation(f);
    FAIL() << "rotation accepted a strip-shifted frame";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::bad_input);
  }
}

TEST(DualitySweep, CountingIdentityHoldsAcrossTheSpectrum) {
  auto v = amo(2.0);
  IdsOptions iopt;
  iopt.size = 1024;
  std::vector<double> grid;
  for (int i = 0; i < 15; ++i) {
    double q = 0.06 + 0.88 * (double)i / 14.0;
    grid.push_back(energy_at_ids(v, kGolden, q, -6.0, 6.0, iopt));
  }
  auto sweep = duality_ids_sweep(v, kGolden, grid);
  EXPECT_LT(sweep.residual, 1e-2);
  EXPECT_EQ(sweep.records.size(), grid.size());
  EXPECT_LT(sweep.rho1_monotone_violation, 1e-3);
  EXPECT_LT(sweep.rho2_monotone_violation, 1e-3);
}

TEST(DualitySweep, CountingIdentityHoldsForTheNonEvenPotential) {
  std::vector<double> grid = {2.30, 2.35, 2.40, 2.45, 2.50, 2.55, 2.85, 2.95, 3.05, 3.15};
  SweepOptions opt;
  opt.center.grid = 512;
  auto sweep = duality_ids_sweep(noneven(1.5), kGolden, grid, opt);
  EXPECT_LT(sweep.residual, 2e-2);
  // The gauge average behind the branch labels drifts smoothly across the
  // spectral gap between 2.55 and 2.85, so the per-step budget is looser here.
  EXPECT_LT(sweep.rho1_monotone_violation, 2e-2);
  EXPECT_LT(sweep.rho2_monotone_violation, 2e-2);
}

TEST(DualitySweep, SinglePointGridIsDegenerateButExact) {
  auto sweep = duality_ids_sweep(amo(2.0), kGolden, {0.5});
  EXPECT_LT(sweep.residual, 1e-8);
  ASSERT_EQ(sweep.records.size(), 1u);
}

TEST(DualitySweep, SubcriticalEnergiesAreRejected) {
  try {
    duality_ids_sweep(amo(0.5), kGolden, {0.0});
    FAIL() << "subcritical energy passed the window gate";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::window_violation);
  }
}

TEST(Truncation, GeometricCoefficientTailsConverge) {
  auto g = geometric(2.0, 0.5);
  TruncationOptions opt;
  opt.center.grid = 512;
  auto rep = truncation_convergence(g, kGolden, 6.0, 2, 8, opt);
  ASSERT_EQ(rep.orders.size(), 7u);
  for (size_t i = 0; i < rep.built.size(); ++i) EXPECT_TRUE(rep.built[i]) << "order " << rep.orders[i];
  for (double d : rep.dists) {
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_GT(d, 0.0);
  }
  EXPECT_GT(rep.dists.front(), rep.dists.back());
  EXPECT_LE(rep.slope, -0.5);
  EXPECT_GT(rep.r2, 0.9);

  // Cauchy consistency: the rotation number of the last two orders agrees.
  auto f7 = center_frame(g.truncate(7), kGolden, 6.0, 0.0, opt.center);
  CenterRotationOptions ropt;
  ropt.rotation.tol = 1e-6;
  ropt.with_ids = false;
  auto r7 = center_rotation(f7, ropt);
  auto r8 = center_rotation(rep.limit, ropt);
  EXPECT_LT(detail::dist_to_int(r7.rho_hat - r8.rho_hat), 1e-3);
}

TEST(Truncation, PolynomialPotentialTruncationsCoincide) {
  // Once the degree is reached every truncation is the same potential, so the
  // canonical frames must be identical and all distances exactly zero.
  AnalyticPotential poly;
  poly.rule = [](long k) {
    if (std::labs(k) == 1) return cplx(1.5, 0.0);
    if (std::labs(k) == 2) return cplx(0.0, k > 0 ? -0.225 : 0.225);
    return cplx(0.0, 0.0);
  };
  poly.h1 = 5.0;
  poly.family = "degree-two";
  TruncationOptions opt;
  opt.center.grid = 512;
  opt.verify_regime = false;
  auto rep = truncation_convergence(poly, kGolden, 2.5, 2, 5, opt);
  ASSERT_EQ(rep.dists.size(), 3u);
  for (double d : rep.dists) EXPECT_EQ(d, 0.0);
}

TEST(Cohomology, SingleModeHasTheClosedFormSolution) {
  const long G = 512;
  Eigen::VectorXd phi(G);
  for (long j = 0; j < G; ++j) phi[j] = std::cos(kTwoPi * (double)j / (double)G);
  auto res = cohomological_solve(phi, kGolden, 0.2);
  EXPECT_LT(res.residual, 1e-10);
  EXPECT_EQ(res.modes, 1);
  // psi_hat(+-1) = (1/2) / (e^{+-2 pi i alpha} - 1), assembled back pointwise.
  cplx div = std::polar(1.0, kTwoPi * kGolden) - 1.0;
  double worst = 0.0;
  for (long j = 0; j < G; ++j) {
    double th = (double)j / (double)G;
    cplx expected = 0.5 * std::polar(1.0, kTwoPi * th) / div +
                    0.5 * std::polar(1.0, -kTwoPi * th) / std::conj(div);
    worst = std::max(worst, std::abs(res.psi[j] - expected.real()));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Cohomology, ConstantInputSolvesToZero) {
  Eigen::VectorXd phi = Eigen::VectorXd::Constant(64, 0.37);
  auto res = cohomological_solve(phi, kGolden, 0.2);
  EXPECT_EQ(res.modes, 0);
  EXPECT_EQ(res.psi.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT(res.residual, 1e-14);
}

TEST(Cohomology, LiouvilleFrequencyOverflowsTheSmallDivisors) {
  auto prof = liouville_frequency(0.5, 3);
  double alpha = prof.alpha;
  // The third convergent denominator collides: its divisor sits far below the
  // overflow threshold, so a slowly decaying input cannot be solved.
  long q3 = prof.q.back();
  double div = std::abs(std::polar(1.0, kTwoPi * (double)q3 * alpha) - 1.0);
  ASSERT_LT(div, 1e-12);
  const long G = 1024;
  ASSERT_GT(G / 2, q3);
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(G);
  for (long j = 0; j < G; ++j) {
    double th = (double)j / (double)G;
    for (long k = 1; k <= 320; ++k)
      phi[j] += 2.0 / std::pow(1.0 + (double)k, 2.0) * std::cos(kTwoPi * (double)k * th);
  }
  try {
    cohomological_solve(phi, alpha, 0.2, /*beta=*/0.0);
    FAIL() << "divisor collapse went unnoticed";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::small_divisor_overflow);
  }
}

TEST(Cohomology, NarrowStripIsRejectedUpFront) {
  auto prof = liouville_frequency(0.5, 3);
  Eigen::VectorXd phi(64);
  for (long j = 0; j < 64; ++j) phi[j] = std::cos(kTwoPi * (double)j / 64.0);
  // beta/2pi ~ 0.087 for this frequency; a strip thinner than that fails.
  try {
    cohomological_solve(phi, prof.alpha, 0.05);
    FAIL() << "strip below beta/2pi was accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::bad_input);
  }
}

struct BlochSetup {
  CenterFrame frame;
  RotationIdsRecord rotation;
  BlochPair pair;
};

const BlochSetup& amo_bloch() {
  static const BlochSetup setup = [] {
    BlochSetup s;
    s.frame = amo_frame(0.0);
    CenterRotationOptions ropt;
    ropt.rotation.tol = 1e-7;
    ropt.with_ids = false;
    s.rotation = center_rotation(s.frame, ropt);
    auto psi = cohomological_solve(s.frame.phi, kGolden, 0.1);
    DiophantineWindow window;
    s.pair = bloch_reconstruct(s.frame, psi.psi, kGolden, window);
    return s;
  }();
  return setup;
}

TEST(Bloch, ReconstructsLocalizedWavePairs) {
  const auto& s = amo_bloch();
  EXPECT_FALSE(s.pair.stalled);
  EXPECT_LT(s.pair.conj_residual, 1e-8);
  EXPECT_LT(s.pair.u.residual, 1e-2);
  EXPECT_LT(s.pair.v.residual, 1e-2);
  double ln2 = std::log(2.0);
  EXPECT_GT(s.pair.u.decay.rate, 0.8 * ln2);
  EXPECT_LT(s.pair.u.decay.rate, 1.1 * ln2);
  EXPECT_GT(s.pair.u.decay.r2, 0.9);
  EXPECT_LT(detail::dist_to_int(s.pair.rho_achieved - s.rotation.rho_hat), 1e-4);
}

TEST(Bloch, AgreesWithDirectDiagonalization) {
  const auto& s = amo_bloch();
  const auto& w = s.pair.u;
  const long size = 4001, mid = 2000;
  auto v = amo(2.0);
  Tridiag t;
  t.diag.resize(size);
  t.off = Eigen::VectorXd::Ones(size - 1);
  for (long i = 0; i < size; ++i)
    t.diag[i] = v.real_at(detail::frac(w.phase + (double)(i - mid) * kGolden));
  auto eigs = eigenvalues_in_window(t, w.E - 0.02, w.E + 0.02, 1e-10);
  ASSERT_FALSE(eigs.empty());
  double nearest = eigs[0];
  for (double e : eigs)
    if (std::abs(e - w.E) < std::abs(nearest - w.E)) nearest = e;
  Eigen::VectorXd vec = inverse_iteration(t, nearest);
  cplx overlap(0.0, 0.0);
  for (long n = -w.n_max; n <= w.n_max; ++n)
    overlap += vec[mid + n] * std::conj(w.amplitudes[n + w.n_max]);
  EXPECT_GT(std::abs(overlap), 0.9);
}

TEST(Bloch, EvenPotentialPairsTheWavesByReflection) {
  const auto& s = amo_bloch();
  const auto& u = s.pair.u.amplitudes;
  const auto& v = s.pair.v.amplitudes;
  ASSERT_EQ(u.size(), v.size());
  const long n = u.size();
  Eigen::VectorXcd rev(n);
  for (long j = 0; j < n; ++j) rev[j] = v[n - 1 - j];
  cplx phase = rev.dot(u);  // conj(rev) . u, the aligning unimodular factor
  ASSERT_GT(std::abs(phase), 0.5);
  phase /= std::abs(phase);
  EXPECT_LT((u - phase * rev).norm(), 1e-3);
}

TEST(Bloch, ShrunkPhaseWindowIsRejected) {
  const auto& s = amo_bloch();
  auto psi = cohomological_solve(s.frame.phi, kGolden, 0.1);
  DiophantineWindow window;
  window.gamma = 0.9;
  try {
    bloch_reconstruct(s.frame, psi.psi, kGolden, window);
    FAIL() << "window acceptance at gamma = 0.9";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::window_rejected);
  }
}

}  // namespace
}  // namespace qplab
