#pragma once

// Thin RAII wrapper around MPFR, just wide enough for continued-fraction
// arithmetic. Double precision corrupts partial quotients past depth ~18, so
// the Gauss map runs at 256-bit mantissa by default.

#include <mpfr.h>

#include <cstdint>
#include <string>
#include <utility>

namespace qplab {

class Real {
 public:
  static constexpr mpfr_prec_t kPrec = 256;

  Real() { mpfr_init2(v_, kPrec); mpfr_set_zero(v_, 1); }
  explicit Real(double x) { mpfr_init2(v_, kPrec); mpfr_set_d(v_, x, MPFR_RNDN); }
  explicit Real(long x) { mpfr_init2(v_, kPrec); mpfr_set_si(v_, x, MPFR_RNDN); }
  explicit Real(const std::string& s) {
    mpfr_init2(v_, kPrec);
    mpfr_set_str(v_, s.c_str(), 10, MPFR_RNDN);
  }
  Real(const Real& o) { mpfr_init2(v_, kPrec); mpfr_set(v_, o.v_, MPFR_RNDN); }
  Real(Real&& o) noexcept { mpfr_init2(v_, kPrec); mpfr_swap(v_, o.v_); }
  Real& operator=(Real o) noexcept { mpfr_swap(v_, o.v_); return *this; }
  ~Real() { mpfr_clear(v_); }

  static Real pi() { Real r; mpfr_const_pi(r.v_, MPFR_RNDN); return r; }
  static Real sqrt_of(long n) { Real r; mpfr_sqrt_ui(r.v_, (unsigned long)n, MPFR_RNDN); return r; }
  static Real exp_of(const Real& x) { Real r; mpfr_exp(r.v_, x.v_, MPFR_RNDN); return r; }

  friend Real operator+(const Real& a, const Real& b) { Real r; mpfr_add(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Real operator-(const Real& a, const Real& b) { Real r; mpfr_sub(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Real operator*(const Real& a, const Real& b) { Real r; mpfr_mul(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Real operator/(const Real& a, const Real& b) { Real r; mpfr_div(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }

  Real floor() const { Real r; mpfr_floor(r.v_, v_); return r; }
  Real abs() const { Real r; mpfr_abs(r.v_, v_, MPFR_RNDN); return r; }
  // Distance to the nearest integer.
  Real dist_to_int() const {
    Real n; mpfr_round(n.v_, v_);
    Real d; mpfr_sub(d.v_, v_, n.v_, MPFR_RNDN);
    return d.abs();
  }

  bool operator<(const Real& o) const { return mpfr_cmp(v_, o.v_) < 0; }
  bool operator>(const Real& o) const { return mpfr_cmp(v_, o.v_) > 0; }
  bool is_zero() const { return mpfr_zero_p(v_) != 0; }

  double to_double() const { return mpfr_get_d(v_, MPFR_RNDN); }
  long to_long_floor() const {
    Real f = floor();
    return mpfr_get_si(f.v_, MPFR_RNDN);
  }
  bool fits_long_floor() const {
    Real f = floor();
    return mpfr_fits_slong_p(f.v_, MPFR_RNDN) != 0;
  }

 private:
  mpfr_t v_;
};

}  // namespace qplab
