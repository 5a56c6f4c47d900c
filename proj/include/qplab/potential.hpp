#pragma once

// Sampling potentials v(theta) = sum_k vhat_k e^{2 pi i k theta}. Finite
// trigonometric polynomials carry the dual construction (degree d = range of
// the dual operator); analytic potentials are coefficient rules with a known
// exponential decay rate, truncated to trig polynomials on demand.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "qplab/errors.hpp"

namespace qplab {

using cplx = std::complex<double>;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

class TrigPotential {
 public:
  TrigPotential() = default;

  // Coefficients as (k, vhat_k) pairs; missing entries are zero. Reality of
  // v on the real axis requires vhat_{-k} = conj(vhat_k).
  explicit TrigPotential(const std::vector<std::pair<long, cplx>>& coeffs) {
    long d = 0;
    for (const auto& [k, c] : coeffs) d = std::max(d, std::labs(k));
    c_.assign(2 * d + 1, cplx(0.0, 0.0));
    d_ = d;
    for (const auto& [k, c] : coeffs) c_[idx(k)] += c;
    double scale = 0.0;
    for (const auto& c : c_) scale = std::max(scale, std::abs(c));
    for (long k = 1; k <= d_; ++k)
      require(std::abs(std::conj(at(k)) - at(-k)) <= 1e-12 * std::max(1.0, scale),
              errc::bad_input, "coefficients violate reality: vhat(-k) != conj(vhat(k))");
    trim();
  }

  long degree() const { return d_; }
  cplx at(long k) const { return std::labs(k) <= d_ ? c_[idx(k)] : cplx(0.0); }

  // v(z) for complex phase z = theta + i eps.
  cplx operator()(cplx z) const {
    const cplx w = std::exp(cplx(0.0, kTwoPi) * z);
    // Horner in w and 1/w, split so large |eps| stays stable.
    cplx pos(0.0), neg(0.0);
    for (long k = d_; k >= 1; --k) {
      pos = pos * w + c_[idx(k)];
      neg = neg / w + c_[idx(-k)];
    }
    return pos * w + neg / w + c_[idx(0)];
  }

  // v(theta) for real theta; the imaginary part is a numerical residual.
  double real_at(double theta) const {
    cplx v = (*this)(cplx(theta, 0.0));
    require(std::abs(v.imag()) <= 1e-9 * std::max(1.0, std::abs(v.real())),
            errc::bad_input, "potential not real on the real axis");
    return v.real();
  }

  TrigPotential operator-(const TrigPotential& o) const {
    std::vector<std::pair<long, cplx>> sum;
    long d = std::max(d_, o.d_);
    for (long k = -d; k <= d; ++k) sum.emplace_back(k, at(k) - o.at(k));
    return TrigPotential(sum);
  }

  TrigPotential scaled(double s) const {
    std::vector<std::pair<long, cplx>> out;
    for (long k = -d_; k <= d_; ++k) out.emplace_back(k, s * at(k));
    return TrigPotential(out);
  }

  // v(. + s): multiplies vhat_k by e^{2 pi i k s}, preserving reality.
  TrigPotential shifted(double s) const {
    std::vector<std::pair<long, cplx>> out;
    for (long k = -d_; k <= d_; ++k)
      out.emplace_back(k, at(k) * std::exp(cplx(0.0, kTwoPi * (double)k * s)));
    return TrigPotential(out);
  }

 private:
  size_t idx(long k) const { return (size_t)(k + d_); }
  void trim() {
    while (d_ > 0 && std::abs(c_[idx(d_)]) == 0.0 && std::abs(c_[idx(-d_)]) == 0.0) {
      c_.erase(c_.end() - 1);
      c_.erase(c_.begin());
      --d_;
    }
  }

  std::vector<cplx> c_{cplx(0.0)};
  long d_ = 0;
};

// Coefficient rule with decay |vhat_k| <= C exp(-2 pi h1 |k|).
struct AnalyticPotential {
  std::function<cplx(long)> rule;
  double h1 = 0.0;       // guaranteed decay rate
  std::string family;    // for config round-trips
  double lambda = 0.0, ratio = 0.0;

  TrigPotential truncate(long n) const {
    require(n >= 1, errc::bad_input, "truncation order must be >= 1");
    std::vector<std::pair<long, cplx>> coeffs;
    for (long k = -n; k <= n; ++k) coeffs.emplace_back(k, rule(k));
    return TrigPotential(coeffs);
  }

  // sum_{|k| > n} |vhat_k| e^{2 pi h |k|}, a sup-norm bound on the strip-h
  // truncation error. Requires h < h1.
  double tail_bound(long n, double h) const {
    require(h < h1, errc::strip_exceeded, "tail bound needs h < decay rate h1");
    double s = 0.0;
    for (long k = n + 1; k < n + 100000; ++k) {
      double t = (std::abs(rule(k)) + std::abs(rule(-k))) * std::exp(kTwoPi * h * (double)k);
      s += t;
      if (t < 1e-18 * std::max(1.0, s)) break;
    }
    return s;
  }
};

// sup over |Im z| = h of |v(z)|, by grid refinement until the sup moves by
// less than 1e-10 (relative).
inline double strip_norm(const TrigPotential& v, double h) {
  double prev = -1.0;
  for (long n = 64; n <= (1L << 20); n *= 2) {
    double s = 0.0;
    for (long j = 0; j < n; ++j) {
      double th = (double)j / (double)n;
      s = std::max({s, std::abs(v(cplx(th, h))), std::abs(v(cplx(th, -h)))});
    }
    if (prev >= 0.0 && std::abs(s - prev) <= 1e-10 * std::max(1.0, s)) return s;
    prev = s;
  }
  return prev;
}

// Stock potentials ------------------------------------------------------

// 2 lambda cos(2 pi theta)
inline TrigPotential amo(double lambda) {
  return TrigPotential({{1, cplx(lambda, 0.0)}, {-1, cplx(lambda, 0.0)}});
}

// 2 lambda cos(2 pi theta) + delta * f(theta)
inline TrigPotential amo_perturbed(double lambda, double delta, const TrigPotential& f) {
  std::vector<std::pair<long, cplx>> coeffs = {{1, cplx(lambda)}, {-1, cplx(lambda)}};
  for (long k = -f.degree(); k <= f.degree(); ++k) coeffs.emplace_back(k, delta * f.at(k));
  return TrigPotential(coeffs);
}

// scale * (2 cos(2 pi theta) + 0.3 sin(4 pi theta)): degree 2, not even.
inline TrigPotential noneven(double scale = 1.0) {
  const cplx i(0.0, 1.0);
  return TrigPotential({{1, cplx(scale)},
                        {-1, cplx(scale)},
                        {2, scale * 0.15 / i},
                        {-2, scale * -0.15 / i}});
}

// vhat_k = lambda * ratio^{|k|}
inline AnalyticPotential geometric(double lambda, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, errc::bad_input, "geometric ratio must be in (0,1)");
  AnalyticPotential a;
  a.rule = [lambda, ratio](long k) { return cplx(lambda * std::pow(ratio, (double)std::labs(k)), 0.0); };
  a.h1 = -std::log(ratio) / kTwoPi;
  a.family = "geometric";
  a.lambda = lambda;
  a.ratio = ratio;
  return a;
}

}  // namespace qplab
