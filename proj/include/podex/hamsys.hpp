#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "podex/expr.hpp"
#include "podex/linalg.hpp"
#include "podex/series.hpp"

namespace podex {

struct Tolerances {
  double level_tol = 1e-10;
  double submersion_tol = 1e-8;
  double capture_radius = 1e-2;
  int k_max_derivative = 8;
};

/// A point of T*Q in chart coordinates: base q and covector p = sum p_i dq_i.
struct PhasePoint {
  Vec q;
  Vec p;

  std::size_t n() const { return q.size(); }
  Vec flat() const {
    Vec x = q;
    x.insert(x.end(), p.begin(), p.end());
    return x;
  }
  static PhasePoint from_flat(std::span<const double> x) {
    const std::size_t n = x.size() / 2;
    return {Vec(x.begin(), x.begin() + n), Vec(x.begin() + n, x.end())};
  }
};

inline double phase_distance(const PhasePoint& a, const PhasePoint& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.q.size(); ++i) s += (a.q[i] - b.q[i]) * (a.q[i] - b.q[i]);
  for (std::size_t i = 0; i < a.p.size(); ++i) s += (a.p[i] - b.p[i]) * (a.p[i] - b.p[i]);
  return std::sqrt(s);
}

/// Abstract Hamiltonian on T*R^n.  The flow, jet and homopode machinery only
/// needs values and first derivatives, pointwise and on truncated series.
class HamiltonianField {
 public:
  virtual ~HamiltonianField() = default;
  virtual std::size_t n() const = 0;
  /// H at x; x ordered (q1..qn, p1..pn).
  virtual double value_flat(std::span<const double> x) const = 0;
  /// Gradient (dH/dq, dH/dp), length 2n.
  virtual Vec gradient_flat(std::span<const double> x) const = 0;
  /// Value and gradient evaluated on a series-valued phase point.
  virtual Series value_series(std::span<const Series> x) const = 0;
  virtual std::vector<Series> gradient_series(std::span<const Series> x) const = 0;

  double value(const PhasePoint& x) const { return value_flat(x.flat()); }
  Vec gradient(const PhasePoint& x) const { return gradient_flat(x.flat()); }
};

/// Hamiltonian vector field in (q, p) order: q̇_i = dH/dp_i, ṗ_i = -dH/dq_i.
inline Vec ham_vector_field_flat(const HamiltonianField& H, std::span<const double> x) {
  const std::size_t n = H.n();
  Vec g = H.gradient_flat(x);
  Vec xh(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    xh[i] = g[n + i];
    xh[n + i] = -g[i];
  }
  return xh;
}

inline Vec ham_vector_field(const HamiltonianField& H, const PhasePoint& x) {
  return ham_vector_field_flat(H, x.flat());
}

/// Expression-defined Hamiltonian with exact symbolic derivatives of any
/// order.  Variables: q1..qn at 0..n-1, p1..pn at n..2n-1.
class ExprHamiltonian : public HamiltonianField {
 public:
  ExprHamiltonian(Expr expr, std::size_t n, std::string name = "")
      : expr_(std::move(expr)), n_(n), name_(std::move(name)) {
    grad_.reserve(2 * n_);
    for (std::size_t i = 0; i < 2 * n_; ++i) grad_.push_back(expr_.diff(int(i)));
  }

  static ExprHamiltonian parse(const std::string& text, std::size_t n, std::string name = "") {
    return ExprHamiltonian(parse_expr(text, phase_vocab(n)), n, std::move(name));
  }

  std::size_t n() const override { return n_; }
  const Expr& expr() const { return expr_; }
  const std::string& name() const { return name_; }

  double value_flat(std::span<const double> x) const override { return expr_.eval<double>(x); }

  Vec gradient_flat(std::span<const double> x) const override {
    // one memo across all partials: they share most of their subtrees
    std::unordered_map<const Expr::Node*, double> memo;
    Vec g(2 * n_);
    for (std::size_t i = 0; i < 2 * n_; ++i) g[i] = grad_[i].eval_shared<double>(x, memo);
    return g;
  }

  Series value_series(std::span<const Series> x) const override { return expr_.eval<Series>(x); }

  std::vector<Series> gradient_series(std::span<const Series> x) const override {
    std::unordered_map<const Expr::Node*, Series> memo;
    std::vector<Series> g;
    g.reserve(2 * n_);
    for (std::size_t i = 0; i < 2 * n_; ++i) g.push_back(grad_[i].eval_shared<Series>(x, memo));
    return g;
  }

  /// Exact mixed partial for the given multi-index over (q1..qn, p1..pn).
  const Expr& partial(const std::vector<int>& multi_index) const {
    auto it = partials_.find(multi_index);
    if (it != partials_.end()) return it->second;
    // peel one derivative off the highest active variable
    std::vector<int> mi = multi_index;
    int var = -1;
    for (std::size_t i = 0; i < mi.size(); ++i)
      if (mi[i] > 0) var = int(i);
    if (var < 0) return expr_;
    mi[std::size_t(var)] -= 1;
    Expr d = partial(mi).diff(var);
    return partials_.emplace(multi_index, std::move(d)).first->second;
  }

  double eval_partial(const std::vector<int>& multi_index, const PhasePoint& x) const {
    return partial(multi_index).eval(x.flat());
  }

  /// Fiberwise Hessian (d/dp_i d/dp_j H) at x.
  Mat fiber_hessian(const PhasePoint& x) const {
    Mat h = zeros(n_, n_);
    Vec xf = x.flat();
    std::vector<int> mi(2 * n_, 0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i; j < n_; ++j) {
        mi.assign(2 * n_, 0);
        mi[n_ + i] += 1;
        mi[n_ + j] += 1;
        h[i][j] = h[j][i] = partial(mi).eval(xf);
      }
    return h;
  }

  /// Optional per-axis base periods (0 = non-periodic); wrapping applies to q
  /// only, never p.
  std::vector<double> q_period;

 private:
  Expr expr_;
  std::size_t n_;
  std::string name_;
  std::vector<Expr> grad_;
  mutable std::map<std::vector<int>, Expr> partials_;
};

/// Full derivative table of H up to `order`: multi-index over (q,p) -> value.
/// Deterministic iteration order (lexicographic multi-indices).
inline std::map<std::vector<int>, double> eval_ham(const ExprHamiltonian& H, const PhasePoint& x,
                                                   int order,
                                                   const Tolerances& tol = Tolerances{}) {
  if (order > tol.k_max_derivative)
    throw std::invalid_argument("requested derivative order exceeds k_max_derivative");
  std::map<std::vector<int>, double> out;
  const std::size_t m = 2 * H.n();
  Vec xf = x.flat();
  std::vector<int> mi(m, 0);
  // enumerate all multi-indices with |mi| <= order
  std::vector<std::vector<int>> todo{mi};
  std::map<std::vector<int>, bool> seen{{mi, true}};
  for (std::size_t head = 0; head < todo.size(); ++head) {
    std::vector<int> cur = todo[head];
    int deg = 0;
    for (int d : cur) deg += d;
    out[cur] = H.partial(cur).eval(xf);
    if (deg == order) continue;
    for (std::size_t v = 0; v < m; ++v) {
      cur[v] += 1;
      if (!seen.count(cur)) {
        seen[cur] = true;
        todo.push_back(cur);
      }
      cur[v] -= 1;
    }
  }
  return out;
}

/// A phase point certified to lie on Sigma = H^{-1}(0) with submersive base
/// projection.
struct LevelPoint {
  PhasePoint point;
  double energy_residual = 0.0;
  Vec xh;             // X_H, 2n entries (q̇, ṗ)
  Vec base_velocity;  // dπ_Q X_H = dH/dp, n entries
};

enum class CertifyStatus { Ok, OffLevel, VerticalTangency };

struct CertifyResult {
  CertifyStatus status = CertifyStatus::OffLevel;
  std::optional<LevelPoint> point;
  double residual = 0.0;

  bool ok() const { return status == CertifyStatus::Ok; }
  const LevelPoint& operator*() const { return *point; }
  const LevelPoint* operator->() const { return &*point; }
};

/// Project x onto Sigma by Newton along the gradient, then certify energy
/// residual and submersivity.
inline CertifyResult certify_level_point(const HamiltonianField& H, PhasePoint x,
                                         const Tolerances& tol = Tolerances{}) {
  CertifyResult res;
  Vec xf = x.flat();
  double h = H.value_flat(xf);
  if (std::abs(h) > tol.capture_radius) {
    res.status = CertifyStatus::OffLevel;
    res.residual = std::abs(h);
    return res;
  }
  for (int it = 0; it < 30 && std::abs(h) > tol.level_tol; ++it) {
    Vec g = H.gradient_flat(xf);
    double g2 = dot(g, g);
    if (g2 < 1e-300) break;
    double step = h / g2;
    for (std::size_t i = 0; i < xf.size(); ++i) xf[i] -= step * g[i];
    h = H.value_flat(xf);
  }
  if (std::abs(h) > tol.level_tol) {
    res.status = CertifyStatus::OffLevel;
    res.residual = std::abs(h);
    return res;
  }
  LevelPoint lp;
  lp.point = PhasePoint::from_flat(xf);
  lp.energy_residual = std::abs(h);
  lp.xh = ham_vector_field_flat(H, xf);
  lp.base_velocity = Vec(lp.xh.begin(), lp.xh.begin() + std::ptrdiff_t(H.n()));
  if (norm(lp.base_velocity) <= tol.submersion_tol) {
    res.status = CertifyStatus::VerticalTangency;
    res.residual = std::abs(h);
    return res;
  }
  res.status = CertifyStatus::Ok;
  res.residual = std::abs(h);
  res.point = std::move(lp);
  return res;
}

}  // namespace podex
