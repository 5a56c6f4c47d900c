#pragma once

// Continued-fraction arithmetic for the base frequency alpha. Partial
// quotients drive everything resonance-related: convergent denominators q_k,
// the exponential-approximation exponent beta(alpha) = limsup ln(a_{k+1})/q_k,
// and synthesized frequencies with prescribed quotient growth.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qplab/errors.hpp"
#include "qplab/mp.hpp"

namespace qplab {

struct FrequencyProfile {
  double alpha = 0.0;            // IEEE double image of the frequency
  Real alpha_hp;                 // 256-bit value used for exact CF arithmetic
  std::vector<long> quotients;   // a_1 .. a_K
  std::vector<long> p;           // convergent numerators p_1 .. p_K
  std::vector<long> q;           // convergent denominators q_1 .. q_K
  std::vector<double> beta_terms;  // ln(a_{k+1})/q_k for k = 1..K-1
  double beta_estimate = 0.0;      // running max of beta_terms (lower-biased)

  int depth() const { return (int)quotients.size(); }
};

namespace detail {

inline void push_convergent(FrequencyProfile& f, long a) {
  require(a >= 1, errc::bad_input, "partial quotient must be >= 1");
  long pk1 = f.p.empty() ? 1 : f.p.back();
  long pk2 = f.p.size() < 2 ? 0 : f.p[f.p.size() - 2];
  long qk1 = f.q.empty() ? 0 : f.q.back();
  long qk2 = f.q.size() < 2 ? 1 : f.q[f.q.size() - 2];
  if (f.p.empty()) { pk1 = 0; pk2 = 1; qk1 = 1; qk2 = 0; }
  long pk, qk;
  if (__builtin_mul_overflow(a, pk1, &pk) || __builtin_add_overflow(pk, pk2, &pk) ||
      __builtin_mul_overflow(a, qk1, &qk) || __builtin_add_overflow(qk, qk2, &qk))
    fail(errc::overflow, "convergent denominator exceeds 64-bit range");
  f.quotients.push_back(a);
  f.p.push_back(pk);
  f.q.push_back(qk);
}

inline void finish_beta(FrequencyProfile& f) {
  f.beta_terms.clear();
  f.beta_estimate = 0.0;
  for (size_t k = 0; k + 1 < f.quotients.size(); ++k) {
    double t = std::log((double)f.quotients[k + 1]) / (double)f.q[k];
    f.beta_terms.push_back(t);
    if (t > f.beta_estimate) f.beta_estimate = t;
  }
}

}  // namespace detail

// Gauss-map expansion of alpha in (0,1) to depth K. The iteration runs at
// 256-bit precision; a fractional remainder below 1e-15 means the input is a
// rational to working precision and the expansion stops with an error.
inline FrequencyProfile continued_fraction(const Real& alpha, int K) {
  require(K >= 1, errc::bad_input, "depth must be >= 1");
  double a0 = alpha.to_double();
  require(a0 > 0.0 && a0 < 1.0, errc::bad_input, "alpha must lie in (0,1)");

  FrequencyProfile f;
  f.alpha_hp = alpha;
  f.alpha = a0;
  Real x = alpha;
  const Real tiny(1e-15);
  for (int k = 0; k < K; ++k) {
    if (x.abs() < tiny)
      fail(errc::rational_detected,
           "remainder below 1e-15 at depth " + std::to_string(k) + "; alpha is rational to working precision");
    Real y = Real(1L) / x;
    require(y.fits_long_floor(), errc::overflow, "partial quotient exceeds 64-bit range");
    long a = y.to_long_floor();
    detail::push_convergent(f, a);
    x = y - y.floor();
  }
  detail::finish_beta(f);
  return f;
}

inline FrequencyProfile continued_fraction(double alpha, int K) {
  return continued_fraction(Real(alpha), K);
}

// Value of the infinite continued fraction [0; a_1, a_2, ...] whose head is
// `head` and whose tail is all ones (golden tail keeps the value irrational
// and contributes nothing to beta).
inline Real cf_value_golden_tail(const std::vector<Real>& head) {
  Real x = (Real::sqrt_of(5) - Real(1L)) / Real(2L);  // [0;1,1,1,...]
  for (auto it = head.rbegin(); it != head.rend(); ++it) x = Real(1L) / (*it + x);
  return x;
}

inline FrequencyProfile golden_frequency(int K = 40) {
  return continued_fraction((Real::sqrt_of(5) - Real(1L)) / Real(2L), K);
}

inline FrequencyProfile silver_frequency(int K = 40) {
  return continued_fraction(Real::sqrt_of(2) - Real(1L), K);
}

// Frequency with prescribed quotient growth a_{k+1} = round(exp(c q_k)),
// seeded with a_1 = max(1, round(exp(c))). Quotients must fit in 64 bits;
// the value itself continues past depth K with one more exact exp-level
// quotient (kept at 256-bit precision only) and then a golden tail, so the
// stored expansion stays faithful under re-expansion.
inline FrequencyProfile liouville_frequency(double c, int K) {
  require(c >= 0.0, errc::bad_input, "growth exponent c must be >= 0");
  require(K >= 1, errc::bad_input, "depth must be >= 1");
  FrequencyProfile f;
  long a1 = (long)std::llround(std::exp(c));
  if (a1 < 1) a1 = 1;
  detail::push_convergent(f, a1);
  for (int k = 1; k < K; ++k) {
    double e = c * (double)f.q.back();
    if (e > 43.0)  // ln(2^63) ~ 43.67
      fail(errc::overflow, "quotient exp(" + std::to_string(e) + ") exceeds 64-bit range at depth " +
                               std::to_string(k + 1));
    long a = (long)std::llround(std::exp(e));
    if (a < 1) a = 1;
    detail::push_convergent(f, a);
  }
  std::vector<Real> head;
  head.reserve(f.quotients.size() + 1);
  for (long a : f.quotients) head.emplace_back(a);
  head.push_back(Real::exp_of(Real(c) * Real(f.q.back())));
  f.alpha_hp = cf_value_golden_tail(head);
  f.alpha = f.alpha_hp.to_double();
  detail::finish_beta(f);
  return f;
}

// ||q alpha|| (distance from q*alpha to the nearest integer), at full
// working precision.
inline double dist_qalpha(const FrequencyProfile& f, long qk) {
  return (Real(qk) * f.alpha_hp).dist_to_int().to_double();
}

// Parse a frequency expression: "golden", "silver", "liouville:<c>", or a
// decimal literal in (0,1).
inline FrequencyProfile make_frequency(const std::string& expr, int K) {
  if (expr == "golden") return golden_frequency(K);
  if (expr == "silver") return silver_frequency(K);
  if (expr.rfind("liouville:", 0) == 0) {
    double c = 0.0;
    try {
      c = std::stod(expr.substr(10));
    } catch (const std::exception&) {
      fail(errc::bad_input, "bad liouville growth exponent in '" + expr + "'");
    }
    return liouville_frequency(c, K);
  }
  Real a(expr);
  double d = a.to_double();
  require(std::isfinite(d), errc::bad_input, "bad frequency literal '" + expr + "'");
  return continued_fraction(a, K);
}

}  // namespace qplab
