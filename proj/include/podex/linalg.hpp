#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace podex {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;  // row major

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }
inline Vec operator+(Vec a, const Vec& b) { for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i]; return a; }
inline Vec operator-(Vec a, const Vec& b) { for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i]; return a; }
inline Vec operator*(double s, Vec a) { for (double& x : a) x *= s; return a; }
inline Vec& operator+=(Vec& a, const Vec& b) { for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i]; return a; }
inline Vec& operator-=(Vec& a, const Vec& b) { for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i]; return a; }

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Vec matvec(const Mat& A, const Vec& x) {
  Vec y(A.size(), 0.0);
  for (std::size_t i = 0; i < A.size(); ++i) y[i] = dot(A[i], x);
  return y;
}

inline Mat transpose(const Mat& A) {
  Mat T = zeros(A.empty() ? 0 : A[0].size(), A.size());
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < A[i].size(); ++j) T[j][i] = A[i][j];
  return T;
}

inline Mat matmul(const Mat& A, const Mat& B) {
  Mat C = zeros(A.size(), B[0].size());
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t k = 0; k < B.size(); ++k) {
      double a = A[i][k];
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < B[0].size(); ++j) C[i][j] += a * B[k][j];
    }
  return C;
}

/// Solve A x = b by partial-pivoted Gaussian elimination (square A).
inline Vec solve(Mat A, Vec b) {
  const std::size_t n = A.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    if (std::abs(A[piv][c]) < 1e-300) throw std::domain_error("singular linear system");
    std::swap(A[piv], A[c]);
    std::swap(b[piv], b[c]);
    for (std::size_t r = c + 1; r < n; ++r) {
      double f = A[r][c] / A[c][c];
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) A[r][j] -= f * A[c][j];
      b[r] -= f * b[c];
    }
  }
  Vec x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= A[i][j] * x[j];
    x[i] = s / A[i][i];
  }
  return x;
}

/// Singular values of A (rows x cols) by one-sided Jacobi on columns,
/// descending order.
inline Vec singular_values(Mat A) {
  const std::size_t rows = A.size();
  const std::size_t cols = rows == 0 ? 0 : A[0].size();
  // work on columns: U = A, orthogonalize columns of U
  Mat U = transpose(A);  // U[j] = column j, length rows
  (void)rows;
  bool changed = true;
  for (int sweep = 0; sweep < 60 && changed; ++sweep) {
    changed = false;
    for (std::size_t p = 0; p < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double app = dot(U[p], U[p]), aqq = dot(U[q], U[q]), apq = dot(U[p], U[q]);
        if (std::abs(apq) <= 1e-30 || std::abs(apq) < 1e-17 * std::sqrt(app * aqq)) continue;
        changed = true;
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (std::size_t i = 0; i < U[p].size(); ++i) {
          double up = U[p][i], uq = U[q][i];
          U[p][i] = c * up - s * uq;
          U[q][i] = s * up + c * uq;
        }
      }
  }
  Vec sv(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) sv[j] = norm(U[j]);
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

/// Least-squares solution of A x = b (rows >= cols) via normal equations
/// with Tikhonov floor; adequate for the small well-scaled systems here.
inline Vec lstsq(const Mat& A, const Vec& b, double reg = 0.0) {
  Mat At = transpose(A);
  Mat AtA = matmul(At, A);
  for (std::size_t i = 0; i < AtA.size(); ++i) AtA[i][i] += reg;
  Vec Atb = matvec(At, b);
  return solve(AtA, Atb);
}

/// Orthonormal basis of the orthogonal complement of span(v) in R^m.
inline Mat orthogonal_complement(const Vec& v) {
  const std::size_t m = v.size();
  Mat basis;
  Vec u = (1.0 / norm(v)) * v;
  for (std::size_t i = 0; i < m && basis.size() < m - 1; ++i) {
    Vec e(m, 0.0);
    e[i] = 1.0;
    e -= dot(e, u) * u;
    for (const Vec& w : basis) e -= dot(e, w) * w;
    double nn = norm(e);
    if (nn > 1e-8) basis.push_back((1.0 / nn) * e);
  }
  return basis;
}

}  // namespace podex
