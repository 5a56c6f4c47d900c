#include "qplab/frequency.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qplab;

TEST(ContinuedFraction, GoldenIsAllOnesWithFibonacciDenominators) {
  auto f = golden_frequency(10);
  ASSERT_EQ(f.depth(), 10);
  long fib_prev = 1, fib = 1;  // q_1 = 1, q_2 = 2, ...
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(f.quotients[k], 1);
    EXPECT_EQ(f.q[k], fib);
    long next = fib + fib_prev;
    fib_prev = fib;
    fib = next;
  }
  EXPECT_NEAR(f.alpha, 0.6180339887498949, 1e-15);
}

TEST(ContinuedFraction, SilverIsAllTwosWithPellDenominators) {
  auto f = silver_frequency(5);
  const long pell[5] = {2, 5, 12, 29, 70};
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(f.quotients[k], 2);
    EXPECT_EQ(f.q[k], pell[k]);
  }
}

// pi - 3 has the classical convergents 1/7, 16/113 - 15/106... frozen here as
// the (p_k, q_k) table derived from 22/7, 333/106, 355/113, 103993/33102.
TEST(ContinuedFraction, PiMinusThreeQuotients) {
  auto f = continued_fraction(Real::pi() - Real(3L), 4);
  ASSERT_EQ(f.depth(), 4);
  EXPECT_EQ(f.quotients[0], 7);
  EXPECT_EQ(f.quotients[1], 15);
  EXPECT_EQ(f.quotients[2], 1);
  EXPECT_EQ(f.quotients[3], 292);
  const long qs[4] = {7, 106, 113, 33102};
  for (int k = 0; k < 4; ++k) EXPECT_EQ(f.q[k], qs[k]);
}

TEST(ContinuedFraction, RationalInputDetected) {
  EXPECT_THROW(
      {
        try {
          continued_fraction(0.5, 10);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), errc::rational_detected);
          throw;
        }
      },
      Error);
}

TEST(ContinuedFraction, InputOutsideUnitIntervalRejected) {
  EXPECT_THROW(continued_fraction(1.5, 4), Error);
  EXPECT_THROW(continued_fraction(0.0, 4), Error);
}

TEST(ContinuedFraction, DepthFortyStaysExact) {
  auto f = golden_frequency(40);
  ASSERT_EQ(f.depth(), 40);
  for (long a : f.quotients) EXPECT_EQ(a, 1);
  // Fibonacci growth, no overflow, still strictly increasing.
  for (int k = 1; k < 40; ++k) EXPECT_GT(f.q[k], f.q[k - 1]);
}

TEST(ContinuedFraction, ConvergentsApproximateAlpha) {
  for (auto f : {golden_frequency(12), silver_frequency(12),
                 continued_fraction(Real::pi() - Real(3L), 12)}) {
    double pq = (double)f.p.back() / (double)f.q.back();
    EXPECT_LT(std::abs(f.alpha - pq), 1.0 / ((double)f.q.back() * (double)f.q.back()));
    // best-approximation inequality ||q_k alpha|| < 1/q_{k+1}
    for (int k = 0; k + 1 < f.depth(); ++k)
      EXPECT_LT(dist_qalpha(f, f.q[k]), 1.0 / (double)f.q[k + 1]);
  }
}

TEST(BetaEstimate, GoldenIsZero) {
  auto f = golden_frequency(20);
  EXPECT_LT(f.beta_estimate, 1e-3);
}

TEST(BetaEstimate, MonotoneInDepth) {
  auto a = Real::pi() - Real(3L);
  double prev = 0.0;
  for (int K : {4, 8, 12, 18}) {
    auto f = continued_fraction(a, K);
    EXPECT_GE(f.beta_estimate, prev);
    prev = f.beta_estimate;
  }
}

TEST(Liouville, PrescribedGrowthHitsTargetBeta) {
  // c = 0.5 overflows 64-bit quotients beyond depth 3 (q_3 = 233 forces
  // a_4 ~ exp(116)), so depth 3 is the deepest honest profile.
  auto f = liouville_frequency(0.5, 3);
  ASSERT_EQ(f.depth(), 3);
  EXPECT_EQ(f.quotients[0], 2);
  EXPECT_EQ(f.quotients[1], 3);
  EXPECT_EQ(f.quotients[2], 33);
  EXPECT_GE(f.beta_estimate, 0.45);
  EXPECT_LE(f.beta_estimate, 0.55);
}

TEST(Liouville, RoundTripThroughExpansion) {
  auto f = liouville_frequency(0.5, 3);
  auto g = continued_fraction(f.alpha_hp, 3);
  EXPECT_EQ(g.quotients, f.quotients);
}

TEST(Liouville, OverflowRaisedWhenQuotientsExceedInt64) {
  EXPECT_THROW(
      {
        try {
          liouville_frequency(5.0, 20);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), errc::overflow);
          throw;
        }
      },
      Error);
  EXPECT_THROW(liouville_frequency(0.5, 6), Error);
}

TEST(Liouville, ZeroGrowthDegeneratesToGolden) {
  auto f = liouville_frequency(1e-9, 10);
  for (long a : f.quotients) EXPECT_EQ(a, 1);
  EXPECT_NEAR(f.alpha, 0.6180339887498949, 1e-8);
}

TEST(Liouville, DoubleImageCarriesTheResonance) {
  // The depth-3 c=0.5 profile continues with a_4 ~ exp(116.5), far below
  // double resolution: the IEEE image must collapse onto p_3/q_3 = 100/233.
  auto f = liouville_frequency(0.5, 3);
  EXPECT_EQ(f.p.back(), 100);
  EXPECT_EQ(f.q.back(), 233);
  EXPECT_NEAR(f.alpha, 100.0 / 233.0, 1e-15);
}

TEST(MakeFrequency, ParsesTokensAndLiterals) {
  EXPECT_NEAR(make_frequency("golden", 5).alpha, 0.618033988749895, 1e-12);
  EXPECT_NEAR(make_frequency("silver", 5).alpha, std::sqrt(2.0) - 1.0, 1e-12);
  EXPECT_EQ(make_frequency("liouville:0.5", 3).quotients[2], 33);
  auto f = make_frequency("0.57451836", 6);
  EXPECT_NEAR(f.alpha, 0.57451836, 1e-12);
  EXPECT_THROW(make_frequency("liouville:x", 3), Error);
}

TEST(BetaEstimate, PolynomialQuotientTermsDecay) {
  // a_k = k. The per-scale terms ln(a_{k+1})/q_k decay to zero; the reported
  // running max keeps the coarse-scale value (estimator is scale-max, and
  // early scales dominate for slowly growing quotients).
  FrequencyProfile f;
  std::vector<Real> head;
  for (long k = 1; k <= 8; ++k) {
    detail::push_convergent(f, k);
    head.emplace_back(k);
  }
  f.alpha_hp = cf_value_golden_tail(head);
  f.alpha = f.alpha_hp.to_double();
  detail::finish_beta(f);
  for (size_t i = 1; i < f.beta_terms.size(); ++i) EXPECT_LT(f.beta_terms[i], f.beta_terms[i - 1]);
  EXPECT_LT(f.beta_terms.back(), 1e-2);
  EXPECT_NEAR(f.beta_estimate, std::log(2.0), 1e-12);  // dominated by k=1

  auto g = continued_fraction(f.alpha_hp, 8);
  EXPECT_EQ(g.quotients, f.quotients);
}
