#include "qplab/cocycle.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qplab;

namespace {

const double kGolden = 0.6180339887498949;

CocycleMap constant_cocycle(const MatrixXcd& a, double alpha = kGolden) {
  CocycleMap c;
  c.alpha = alpha;
  c.dim = (int)a.rows();
  c.sampler = [a](cplx) { return a; };
  return c;
}

CocycleMap schrodinger_like(const TrigPotential& v, double E, double alpha = kGolden) {
  CocycleMap c;
  c.alpha = alpha;
  c.dim = 2;
  c.sampler = [v, E](cplx z) {
    MatrixXcd a(2, 2);
    a << cplx(E) - v(z), cplx(-1.0), cplx(1.0), cplx(0.0);
    return a;
  };
  return c;
}

MatrixXcd rotation_matrix(double phi) {
  MatrixXcd r(2, 2);
  double c = std::cos(kTwoPi * phi), s = std::sin(kTwoPi * phi);
  r << cplx(c), cplx(-s), cplx(s), cplx(c);
  return r;
}

}  // namespace

TEST(Lyapunov, ConstantCompanionMatrixMatchesEigenvalueOracle) {
  MatrixXcd a(2, 2);
  a << cplx(10.0), cplx(-1.0), cplx(1.0), cplx(0.0);

  // Oracle 1: direct eigenvalues of the constant matrix.
  Eigen::ComplexEigenSolver<MatrixXcd> es(a);
  double lmax = std::log(std::max(std::abs(es.eigenvalues()[0]), std::abs(es.eigenvalues()[1])));
  // Oracle 2: closed form ln((E + sqrt(E^2-4))/2) at E = 10.
  double closed = std::log((10.0 + std::sqrt(96.0)) / 2.0);
  EXPECT_NEAR(closed, 2.2924316695611777, 1e-15);
  EXPECT_NEAR(lmax, closed, 1e-12);

  auto s = lyapunov_spectrum(constant_cocycle(a), {.horizon = 1L << 12, .tol = 1e-9});
  ASSERT_EQ(s.exponents.size(), 2u);
  EXPECT_NEAR(s.exponents[0], closed, 1e-9);
  // det = 1 pairing; tolerance covers rounding accumulated across QR blocks
  // at per-step growth e^{2.29}.
  EXPECT_NEAR(s.exponents[0] + s.exponents[1], 0.0, 1e-7);
  EXPECT_GE(s.exponents[0], s.exponents[1]);
}

TEST(Lyapunov, FreeCocycleOffSpectrum) {
  auto c = schrodinger_like(TrigPotential(), 3.0);
  auto s = lyapunov_spectrum(c, {.horizon = 1L << 12, .tol = 1e-9});
  EXPECT_NEAR(s.exponents[0], std::log((3.0 + std::sqrt(5.0)) / 2.0), 1e-8);
  EXPECT_NEAR(s.exponents[0], 0.9624236501192069, 1e-8);
}

TEST(Lyapunov, ConstantDiagonalSpectrum) {
  MatrixXcd a = MatrixXcd::Zero(3, 3);
  a(0, 0) = 2.0;
  a(1, 1) = 1.0;
  a(2, 2) = 0.5;
  auto s = lyapunov_spectrum(constant_cocycle(a), {.horizon = 1L << 10, .tol = 1e-10});
  ASSERT_EQ(s.exponents.size(), 3u);
  EXPECT_NEAR(s.exponents[0], std::log(2.0), 1e-10);
  EXPECT_NEAR(s.exponents[1], 0.0, 1e-10);
  EXPECT_NEAR(s.exponents[2], -std::log(2.0), 1e-10);
  EXPECT_NEAR(exterior_sum(s, 2), std::log(2.0), 1e-9);
  EXPECT_NEAR(exterior_sum(s, 3), 0.0, 1e-9);
}

TEST(Lyapunov, DeterministicReruns) {
  auto c = schrodinger_like(amo(0.9), 0.5);
  auto s1 = lyapunov_spectrum(c, {.horizon = 1L << 13, .tol = 1e-5});
  auto s2 = lyapunov_spectrum(c, {.horizon = 1L << 13, .tol = 1e-5});
  ASSERT_EQ(s1.exponents.size(), s2.exponents.size());
  for (size_t i = 0; i < s1.exponents.size(); ++i) {
    EXPECT_EQ(s1.exponents[i], s2.exponents[i]);  // bit identical
    EXPECT_EQ(s1.stderr_[i], s2.stderr_[i]);
  }
}

TEST(Lyapunov, SingularSampleRejected) {
  MatrixXcd a(2, 2);
  a << cplx(1.0), cplx(1.0), cplx(1.0), cplx(1.0);
  EXPECT_THROW(
      {
        try {
          std::vector<double> logs;
          product_qr(constant_cocycle(a), 0.0, 16, 4, logs);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), errc::singular_sample);
          throw;
        }
      },
      Error);
}

TEST(Lyapunov, ObserverTracesPartialSums) {
  auto c = schrodinger_like(amo(1.2), 1.0);
  std::vector<long> at;
  std::vector<double> logs;
  product_qr(c, 0.25, 100, 10, logs, [&](long n, const std::vector<double>& l) {
    at.push_back(n);
    EXPECT_EQ(l.size(), 2u);
  });
  ASSERT_EQ(at.size(), 10u);
  EXPECT_EQ(at.front(), 10);
  EXPECT_EQ(at.back(), 100);
}

TEST(Rotation, ConstantRotationRecovered) {
  auto c = constant_cocycle(rotation_matrix(0.3));
  EXPECT_NEAR(rotation_number(c), 0.3, 1e-9);
  // Rotation by 0.7 wraps through the half-turn convention but agrees mod 1.
  auto c7 = constant_cocycle(rotation_matrix(0.7));
  EXPECT_NEAR(rotation_number(c7), 0.7, 1e-9);
}

TEST(Rotation, FreeCocycleRotationIsArccosOverTwoPi) {
  double x = 0.2;
  auto c = schrodinger_like(TrigPotential(), 2.0 * std::cos(kTwoPi * x));
  EXPECT_NEAR(rotation_number(c), x, 2e-6);
}

TEST(Rotation, NonRealSamplerRejected) {
  MatrixXcd a(2, 2);
  a << cplx(0.0, 1.0), cplx(0.0), cplx(0.0), cplx(0.0, -1.0);
  EXPECT_THROW(rotation_number(constant_cocycle(a)), Error);
}

TEST(Rotation, WindingSamplerRejected) {
  CocycleMap c;
  c.alpha = kGolden;
  c.dim = 2;
  c.sampler = [](cplx z) {
    double th = z.real();
    MatrixXcd r(2, 2);
    r << cplx(std::cos(kTwoPi * th)), cplx(-std::sin(kTwoPi * th)),
        cplx(std::sin(kTwoPi * th)), cplx(std::cos(kTwoPi * th));
    return r;
  };
  EXPECT_EQ(sampler_winding(c), 1);
  EXPECT_THROW(
      {
        try {
          rotation_number(c);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), errc::not_homotopic_to_identity);
          throw;
        }
      },
      Error);
}

TEST(Complexify, ShiftsThePhaseArgument) {
  auto base = schrodinger_like(amo(1.0), 0.0);
  auto up = complexify(base, 0.05);
  MatrixXcd expect = base.sampler(cplx(0.2, 0.05));
  MatrixXcd got = up(0.2);
  EXPECT_NEAR((expect - got).cwiseAbs().maxCoeff(), 0.0, 1e-14);
  // nested complexifications add
  auto up2 = complexify(up, 0.04);
  EXPECT_NEAR((up2(0.2) - base.sampler(cplx(0.2, 0.09))).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(Complexify, StripGuard) {
  auto base = schrodinger_like(amo(1.0), 0.0);
  base.strip_radius = 0.1;
  EXPECT_THROW(complexify(base, 0.2), Error);
  auto ok = complexify(base, 0.06);
  EXPECT_THROW(complexify(ok, 0.06), Error);  // cumulative budget exceeded
}
