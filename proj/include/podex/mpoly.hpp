#pragma once

#include <cassert>
#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

namespace podex {

/// Monomial basis for dense polynomials in m variables truncated at total
/// degree K.  Shared between all polynomials of the same signature.
struct MonomialBasis {
  std::size_t nvars;
  std::size_t max_degree;
  std::vector<std::vector<int>> exponents;      // rank -> exponent vector
  std::map<std::vector<int>, std::size_t> rank; // exponent vector -> rank
  std::vector<std::vector<std::size_t>> prod;   // prod[i][j] = rank of exp_i+exp_j, or npos
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  static std::shared_ptr<const MonomialBasis> get(std::size_t nvars, std::size_t max_degree) {
    static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const MonomialBasis>> cache;
    auto key = std::make_pair(nvars, max_degree);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto b = std::make_shared<MonomialBasis>();
    b->nvars = nvars;
    b->max_degree = max_degree;
    std::vector<int> e(nvars, 0);
    b->enumerate(e, 0, 0);
    for (std::size_t r = 0; r < b->exponents.size(); ++r) b->rank[b->exponents[r]] = r;
    const std::size_t N = b->exponents.size();
    b->prod.assign(N, std::vector<std::size_t>(N, npos));
    std::vector<int> s(nvars);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        int deg = 0;
        for (std::size_t v = 0; v < nvars; ++v) { s[v] = b->exponents[i][v] + b->exponents[j][v]; deg += s[v]; }
        if (deg <= int(max_degree)) b->prod[i][j] = b->rank.at(s);
      }
    cache[key] = b;
    return b;
  }

  void enumerate(std::vector<int>& e, std::size_t var, int deg) {
    if (var == nvars) { exponents.push_back(e); return; }
    for (int d = 0; d + deg <= int(max_degree); ++d) {
      e[var] = d;
      enumerate(e, var + 1, deg + d);
    }
    e[var] = 0;
  }
};

/// Dense multivariate polynomial truncated at total degree K.
class MPoly {
 public:
  MPoly() = default;
  MPoly(std::size_t nvars, std::size_t max_degree)
      : basis_(MonomialBasis::get(nvars, max_degree)), c_(basis_->exponents.size(), 0.0) {}

  static MPoly constant(std::size_t nvars, std::size_t max_degree, double v) {
    MPoly p(nvars, max_degree);
    p.c_[0] = v;
    return p;
  }
  static MPoly variable(std::size_t nvars, std::size_t max_degree, std::size_t var) {
    MPoly p(nvars, max_degree);
    std::vector<int> e(nvars, 0);
    e[var] = 1;
    p.c_[p.basis_->rank.at(e)] = 1.0;
    return p;
  }

  std::size_t nvars() const { return basis_->nvars; }
  std::size_t max_degree() const { return basis_->max_degree; }
  const MonomialBasis& basis() const { return *basis_; }
  double coeff(const std::vector<int>& e) const {
    auto it = basis_->rank.find(e);
    return it == basis_->rank.end() ? 0.0 : c_[it->second];
  }
  double& raw(std::size_t r) { return c_[r]; }
  double raw(std::size_t r) const { return c_[r]; }
  std::size_t size() const { return c_.size(); }

  MPoly& operator+=(const MPoly& o) { for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i]; return *this; }
  MPoly& operator-=(const MPoly& o) { for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i]; return *this; }
  MPoly& operator*=(double v) { for (double& x : c_) x *= v; return *this; }
  friend MPoly operator+(MPoly a, const MPoly& b) { a += b; return a; }
  friend MPoly operator-(MPoly a, const MPoly& b) { a -= b; return a; }
  friend MPoly operator*(MPoly a, double b) { a *= b; return a; }
  friend MPoly operator*(double b, MPoly a) { a *= b; return a; }
  friend MPoly operator-(MPoly a) { for (double& x : a.c_) x = -x; return a; }

  friend MPoly operator*(const MPoly& a, const MPoly& b) {
    MPoly r(a.nvars(), a.max_degree());
    const auto& prod = a.basis_->prod;
    for (std::size_t i = 0; i < a.c_.size(); ++i) {
      if (a.c_[i] == 0.0) continue;
      for (std::size_t j = 0; j < b.c_.size(); ++j) {
        std::size_t k = prod[i][j];
        if (k != MonomialBasis::npos && b.c_[j] != 0.0) r.c_[k] += a.c_[i] * b.c_[j];
      }
    }
    return r;
  }

  double eval(const std::vector<double>& x) const {
    double v = 0.0;
    for (std::size_t r = 0; r < c_.size(); ++r) {
      if (c_[r] == 0.0) continue;
      double m = c_[r];
      for (std::size_t j = 0; j < nvars(); ++j)
        for (int d = 0; d < basis_->exponents[r][j]; ++d) m *= x[j];
      v += m;
    }
    return v;
  }

  /// Substitute args[j] for variable j (truncated composition).
  MPoly compose(const std::vector<MPoly>& args) const {
    assert(args.size() == nvars());
    const std::size_t m = args.empty() ? 0 : args[0].nvars();
    const std::size_t K = args.empty() ? max_degree() : args[0].max_degree();
    // cache powers of each argument up to max_degree
    std::vector<std::vector<MPoly>> pw(nvars());
    for (std::size_t j = 0; j < nvars(); ++j) {
      pw[j].push_back(MPoly::constant(m, K, 1.0));
      for (std::size_t d = 1; d <= max_degree(); ++d) pw[j].push_back(pw[j].back() * args[j]);
    }
    MPoly r(m, K);
    for (std::size_t rk = 0; rk < c_.size(); ++rk) {
      if (c_[rk] == 0.0) continue;
      MPoly t = MPoly::constant(m, K, c_[rk]);
      for (std::size_t j = 0; j < nvars(); ++j) {
        int d = basis_->exponents[rk][j];
        if (d > 0) t = t * pw[j][d];
      }
      r += t;
    }
    return r;
  }

 private:
  std::shared_ptr<const MonomialBasis> basis_;
  std::vector<double> c_;
};

/// Inverse of a polynomial map G: R^m -> R^m with G(0)=0 and invertible
/// linear part.  Returns S with G(S(x)) = x + O(|x|^{K+1}).
std::vector<MPoly> invert_poly_map(const std::vector<MPoly>& G);

inline std::vector<std::vector<double>> mpoly_linear_part(const std::vector<MPoly>& G) {
  const std::size_t m = G.size();
  std::vector<std::vector<double>> A(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<int> e(m, 0);
    for (std::size_t j = 0; j < m; ++j) {
      e[j] = 1;
      A[i][j] = G[i].coeff(e);
      e[j] = 0;
    }
  }
  return A;
}

inline std::vector<MPoly> invert_poly_map(const std::vector<MPoly>& G) {
  const std::size_t m = G.size();
  const std::size_t K = G[0].max_degree();
  auto A = mpoly_linear_part(G);
  // invert A by Gauss elimination
  std::vector<std::vector<double>> Ai(m, std::vector<double>(m, 0.0));
  {
    auto M = A;
    for (std::size_t i = 0; i < m; ++i) Ai[i][i] = 1.0;
    for (std::size_t col = 0; col < m; ++col) {
      std::size_t piv = col;
      for (std::size_t r2 = col + 1; r2 < m; ++r2)
        if (std::abs(M[r2][col]) > std::abs(M[piv][col])) piv = r2;
      if (std::abs(M[piv][col]) < 1e-14) throw std::domain_error("polynomial map has singular linear part");
      std::swap(M[piv], M[col]);
      std::swap(Ai[piv], Ai[col]);
      double d = M[col][col];
      for (std::size_t j = 0; j < m; ++j) { M[col][j] /= d; Ai[col][j] /= d; }
      for (std::size_t r2 = 0; r2 < m; ++r2) {
        if (r2 == col) continue;
        double f = M[r2][col];
        if (f == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) { M[r2][j] -= f * M[col][j]; Ai[r2][j] -= f * Ai[col][j]; }
      }
    }
  }
  // fixed point S = A^{-1} (x - Ghat(S)), Ghat = G - A z; converges order by order
  std::vector<MPoly> S(m), X(m);
  for (std::size_t i = 0; i < m; ++i) X[i] = MPoly::variable(m, K, i);
  S = X;  // seed; corrected below
  std::vector<MPoly> S0(m);
  for (std::size_t i = 0; i < m; ++i) {
    S0[i] = MPoly(m, K);
    for (std::size_t j = 0; j < m; ++j) S0[i] += Ai[i][j] * X[j];
  }
  S = S0;
  for (std::size_t it = 1; it < K; ++it) {
    std::vector<MPoly> GS(m), next(m), ghat(m);
    for (std::size_t i = 0; i < m; ++i) GS[i] = G[i].compose(S);
    for (std::size_t i = 0; i < m; ++i) {
      ghat[i] = GS[i];
      for (std::size_t j = 0; j < m; ++j) ghat[i] -= A[i][j] * S[j];
    }
    for (std::size_t i = 0; i < m; ++i) {
      next[i] = MPoly(m, K);
      for (std::size_t j = 0; j < m; ++j) next[i] += Ai[i][j] * (X[j] - ghat[j]);
    }
    S = next;
  }
  return S;
}

}  // namespace podex
