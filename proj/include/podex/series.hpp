#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace podex {

/// Truncated univariate power series a0 + a1 t + ... + aK t^K.
///
/// All arithmetic truncates at the common order.  Elementary functions use
/// the standard convolution recurrences, so coefficients are exact up to
/// floating point.
class Series {
 public:
  Series() = default;
  explicit Series(std::size_t order, double a0 = 0.0) : c_(order + 1, 0.0) { c_[0] = a0; }
  static Series constant(std::size_t order, double v) { return Series(order, v); }
  static Series identity(std::size_t order, double a0 = 0.0) {
    Series s(order, a0);
    if (order >= 1) s.c_[1] = 1.0;
    return s;
  }

  std::size_t order() const { return c_.size() - 1; }
  double operator[](std::size_t i) const { return i < c_.size() ? c_[i] : 0.0; }
  double& at(std::size_t i) { return c_[i]; }
  const std::vector<double>& coeffs() const { return c_; }

  double eval(double t) const {
    double v = 0.0;
    for (std::size_t i = c_.size(); i-- > 0;) v = v * t + c_[i];
    return v;
  }

  Series derivative() const {
    Series d(order() == 0 ? 0 : order() - 1);
    for (std::size_t i = 1; i < c_.size(); ++i) d.c_[i - 1] = c_[i] * double(i);
    return d;
  }

  Series& operator+=(const Series& o) {
    for (std::size_t i = 0; i < std::min(c_.size(), o.c_.size()); ++i) c_[i] += o.c_[i];
    return *this;
  }
  Series& operator-=(const Series& o) {
    for (std::size_t i = 0; i < std::min(c_.size(), o.c_.size()); ++i) c_[i] -= o.c_[i];
    return *this;
  }
  Series& operator+=(double v) { c_[0] += v; return *this; }
  Series& operator-=(double v) { c_[0] -= v; return *this; }
  Series& operator*=(double v) { for (double& x : c_) x *= v; return *this; }

  friend Series operator+(Series a, const Series& b) { a += b; return a; }
  friend Series operator-(Series a, const Series& b) { a -= b; return a; }
  friend Series operator+(Series a, double b) { a += b; return a; }
  friend Series operator-(Series a, double b) { a -= b; return a; }
  friend Series operator+(double b, Series a) { a += b; return a; }
  friend Series operator-(double b, Series a) { for (double& x : a.c_) x = -x; a.c_[0] += b; return a; }
  friend Series operator*(Series a, double b) { a *= b; return a; }
  friend Series operator*(double b, Series a) { a *= b; return a; }
  friend Series operator-(Series a) { for (double& x : a.c_) x = -x; return a; }

  friend Series operator*(const Series& a, const Series& b) {
    const std::size_t K = std::min(a.order(), b.order());
    Series r(K);
    for (std::size_t i = 0; i <= K; ++i)
      for (std::size_t j = 0; j + i <= K; ++j) r.c_[i + j] += a.c_[i] * b.c_[j];
    return r;
  }

  friend Series operator/(const Series& a, const Series& b) {
    const std::size_t K = std::min(a.order(), b.order());
    if (b.c_[0] == 0.0) throw std::domain_error("series division by series with zero constant term");
    Series r(K);
    for (std::size_t i = 0; i <= K; ++i) {
      double s = a[i];
      for (std::size_t j = 1; j <= i; ++j) s -= b.c_[j] * r.c_[i - j];
      r.c_[i] = s / b.c_[0];
    }
    return r;
  }
  friend Series operator/(double a, const Series& b) { return Series::constant(b.order(), a) / b; }
  friend Series operator/(Series a, double b) { a *= 1.0 / b; return a; }

  /// exp, log, sqrt, pow, sin/cos by the classical ODE recurrences.
  friend Series exp(const Series& a) {
    const std::size_t K = a.order();
    Series r(K, std::exp(a.c_[0]));
    for (std::size_t i = 1; i <= K; ++i) {
      double s = 0.0;
      for (std::size_t j = 1; j <= i; ++j) s += double(j) * a.c_[j] * r.c_[i - j];
      r.c_[i] = s / double(i);
    }
    return r;
  }

  friend Series log(const Series& a) {
    const std::size_t K = a.order();
    if (a.c_[0] <= 0.0) throw std::domain_error("series log of nonpositive constant term");
    Series r(K, std::log(a.c_[0]));
    for (std::size_t i = 1; i <= K; ++i) {
      double s = double(i) * a.c_[i];
      for (std::size_t j = 1; j < i; ++j) s -= double(j) * r.c_[j] * a.c_[i - j];
      r.c_[i] = s / (double(i) * a.c_[0]);
    }
    return r;
  }

  friend Series sqrt(const Series& a) {
    const std::size_t K = a.order();
    if (a.c_[0] <= 0.0) throw std::domain_error("series sqrt of nonpositive constant term");
    Series r(K, std::sqrt(a.c_[0]));
    for (std::size_t i = 1; i <= K; ++i) {
      double s = a.c_[i];
      for (std::size_t j = 1; j < i; ++j) s -= r.c_[j] * r.c_[i - j];
      r.c_[i] = s / (2.0 * r.c_[0]);
    }
    return r;
  }

  friend Series pow(const Series& a, double e) {
    const std::size_t K = a.order();
    if (a.c_[0] == 0.0) throw std::domain_error("series pow at zero constant term");
    // r' a = e a' r
    Series r(K, std::pow(a.c_[0], e));
    for (std::size_t i = 1; i <= K; ++i) {
      double s = 0.0;
      for (std::size_t j = 1; j <= i; ++j)
        s += (e * double(j) - double(i - j)) * a.c_[j] * r.c_[i - j];
      r.c_[i] = s / (double(i) * a.c_[0]);
    }
    return r;
  }

  friend void sincos(const Series& a, Series& sn, Series& cs) {
    const std::size_t K = a.order();
    sn = Series(K, std::sin(a.c_[0]));
    cs = Series(K, std::cos(a.c_[0]));
    for (std::size_t i = 1; i <= K; ++i) {
      double ss = 0.0, cc = 0.0;
      for (std::size_t j = 1; j <= i; ++j) {
        ss += double(j) * a.c_[j] * cs.c_[i - j];
        cc -= double(j) * a.c_[j] * sn.c_[i - j];
      }
      sn.c_[i] = ss / double(i);
      cs.c_[i] = cc / double(i);
    }
  }
  friend Series sin(const Series& a) { Series s, c; sincos(a, s, c); return s; }
  friend Series cos(const Series& a) { Series s, c; sincos(a, s, c); return c; }

  /// Composition r(t) = a(b(t)); requires b(0) = 0.
  friend Series compose(const Series& a, const Series& b) {
    const std::size_t K = std::min(a.order(), b.order());
    assert(std::abs(b[0]) < 1e-14);
    Series r = Series::constant(K, a[a.order()]);
    for (std::size_t i = a.order(); i-- > 0;) {
      r = r * b;
      r.c_[0] += a.c_[i];
    }
    return r;
  }

  /// Compositional inverse: returns s with a(s(t)) = t + O(t^{K+1}).
  /// Requires a(0) = 0 and a'(0) != 0.
  friend Series revert(const Series& a) {
    const std::size_t K = a.order();
    if (std::abs(a[1]) < 1e-300) throw std::domain_error("series reversion needs nonzero linear term");
    Series s(K);
    if (K >= 1) s.c_[1] = 1.0 / a.c_[1];
    for (std::size_t m = 2; m <= K; ++m) {
      // fix coefficient m so that compose(a, s) has zero coefficient at t^m
      Series t = compose(a, s);
      s.c_[m] -= t.c_[m] / a.c_[1];
    }
    return s;
  }

 private:
  std::vector<double> c_;
};

}  // namespace podex
