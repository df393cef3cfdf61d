#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "podex/hamsys.hpp"
#include "podex/linalg.hpp"
#include "podex/mpoly.hpp"
#include "podex/subjets.hpp"

namespace podex {

class ContactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ContactConfig {
  double ray_tol = 1e-6;   // lower bound on ray transversality |d_pH . dir|
  double rho_min = 1e-6;   // rays must meet Sigma away from the pole
  int grid = 3;            // certificate samples per chart dimension
  int ray_samples = 16;    // samples along each ray for the crossing count
  double h_min = 0.1;      // positivity floor for constructed h
};

enum class ChartRejection {
  None,
  CenterOffLevel,
  PoleInFiberTangent,  // ray at the center tangent to the fiber slice
  RayTangency,
  MultipleCrossing,
};

inline std::string chart_rejection_name(ChartRejection r) {
  switch (r) {
    case ChartRejection::None: return "none";
    case ChartRejection::CenterOffLevel: return "center-off-level";
    case ChartRejection::PoleInFiberTangent: return "pole-in-fiber-tangent";
    case ChartRejection::RayTangency: return "ray-tangency";
    case ChartRejection::MultipleCrossing: return "multiple-crossing";
  }
  return "?";
}

using SVec = std::vector<Series>;
using SMat = std::vector<std::vector<Series>>;

/// Solve A(t) x(t) = b(t) over truncated series; pivots on constant terms.
inline SVec solve_series(SMat A, SVec b) {
  const std::size_t m = A.size();
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < m; ++r)
      if (std::abs(A[r][c][0]) > std::abs(A[piv][c][0])) piv = r;
    if (std::abs(A[piv][c][0]) < 1e-300) throw ContactError("singular series linear system");
    std::swap(A[piv], A[c]);
    std::swap(b[piv], b[c]);
    for (std::size_t r = c + 1; r < m; ++r) {
      if (std::abs(A[r][c][0]) == 0.0) {
        bool nonzero = false;
        for (std::size_t i = 0; i <= A[r][c].order() && !nonzero; ++i)
          nonzero = A[r][c][i] != 0.0;
        if (!nonzero) continue;
      }
      Series f = A[r][c] / A[c][c];
      for (std::size_t j = c; j < m; ++j) A[r][j] -= f * A[c][j];
      b[r] -= f * b[c];
    }
  }
  SVec x(m);
  for (std::size_t i = m; i-- > 0;) {
    Series s = b[i];
    for (std::size_t j = i + 1; j < m; ++j) s -= A[i][j] * x[j];
    x[i] = s / A[i][i];
  }
  return x;
}

/// Pointwise geometry of a radial chart at one chart point, templated over
/// the scalar (double for points, Series for curves of points).
template <class T>
struct ChartData {
  std::vector<T> D;                 // unit ray direction, n entries
  std::vector<T> p;                 // covector P + rho D
  T rho{};
  std::vector<T> a;                 // Liouville coefficients (rho D, 0), m entries
  std::vector<std::vector<T>> dp;   // m x n, d p / d zeta_i
  std::vector<std::vector<T>> M;    // m x m, d-alpha matrix M_ij = d_i a_j - d_j a_i
};

/// Chart of Sigma around a center point: rays from the constant covector P,
/// coordinates zeta = (q_1..q_n, u_1..u_{n-1}) with u a chart of ray
/// directions around the center ray.  The Liouville form (p - P) dq pulls
/// back to a = (rho(zeta) dir(u), 0).
class RadialChart {
 public:
  RadialChart(const ExprHamiltonian& H, PhasePoint center, Vec P, Vec q_half, Vec u_half,
              ContactConfig cfg = ContactConfig{}, Tolerances tol = Tolerances{})
      : H_(&H), center_(std::move(center)), P_(std::move(P)), q_half_(std::move(q_half)),
        u_half_(std::move(u_half)), cfg_(cfg), tol_(tol) {
    validate();
  }

  std::size_t n() const { return H_->n(); }
  std::size_t m() const { return 2 * H_->n() - 1; }
  bool valid() const { return rejection_ == ChartRejection::None; }
  ChartRejection rejection() const { return rejection_; }
  const ExprHamiltonian& ham() const { return *H_; }
  const PhasePoint& center() const { return center_; }
  const Vec& pole() const { return P_; }
  const Vec& q_half() const { return q_half_; }
  const Vec& u_half() const { return u_half_; }
  /// Chart coordinates of the center point (u = 0 there).
  Vec center_zeta() const {
    Vec z = center_.q;
    z.resize(m(), 0.0);
    return z;
  }

  template <class T>
  ChartData<T> analyze(const std::vector<T>& zeta, bool want_forms = true) const {
    const std::size_t nn = n();
    ChartData<T> out;
    const T like = zeta[0] * 0.0;
    // ray direction D(u) = (d0 + sum u_j e_j)/|.|
    std::vector<T> w(nn);
    for (std::size_t k = 0; k < nn; ++k) {
      w[k] = like + d0_[k];
      for (std::size_t j = 0; j + 1 < nn; ++j) w[k] += zeta[nn + j] * E_[j][k];
    }
    T w2 = like;
    for (std::size_t k = 0; k < nn; ++k) w2 += w[k] * w[k];
    using std::sqrt;
    T nw = sqrt(w2);
    out.D.resize(nn);
    for (std::size_t k = 0; k < nn; ++k) out.D[k] = w[k] / nw;
    std::vector<T> q(zeta.begin(), zeta.begin() + std::ptrdiff_t(nn));
    out.rho = solve_rho(q, out.D, like);
    out.p.resize(nn);
    for (std::size_t k = 0; k < nn; ++k) out.p[k] = out.rho * out.D[k] + P_[k];
    out.a.assign(m(), like);
    for (std::size_t k = 0; k < nn; ++k) out.a[k] = out.rho * out.D[k];
    if (!want_forms) return out;

    std::vector<T> x(q);
    x.insert(x.end(), out.p.begin(), out.p.end());
    std::vector<T> g = grad(x, like);
    T den = like;
    for (std::size_t k = 0; k < nn; ++k) den += g[nn + k] * out.D[k];
    // implicit derivatives of rho
    std::vector<T> rho_z(m(), like);
    std::vector<std::vector<T>> Dp(nn - 1, std::vector<T>(nn, like));  // dD/du_j
    for (std::size_t i = 0; i < nn; ++i) rho_z[i] = -(g[i] / den);
    for (std::size_t j = 0; j + 1 < nn; ++j) {
      T de = like;
      for (std::size_t k = 0; k < nn; ++k) de += out.D[k] * E_[j][k];
      for (std::size_t k = 0; k < nn; ++k) Dp[j][k] = (E_[j][k] - de * out.D[k]) / nw;
      T gd = like;
      for (std::size_t k = 0; k < nn; ++k) gd += g[nn + k] * Dp[j][k];
      rho_z[nn + j] = -(out.rho * gd / den);
    }
    // dp[i][k] = d p_k / d zeta_i = d a_k / d zeta_i for k <= n
    out.dp.assign(m(), std::vector<T>(nn, like));
    for (std::size_t i = 0; i < nn; ++i)
      for (std::size_t k = 0; k < nn; ++k) out.dp[i][k] = rho_z[i] * out.D[k];
    for (std::size_t j = 0; j + 1 < nn; ++j)
      for (std::size_t k = 0; k < nn; ++k)
        out.dp[nn + j][k] = rho_z[nn + j] * out.D[k] + out.rho * Dp[j][k];
    out.M.assign(m(), std::vector<T>(m(), like));
    for (std::size_t i = 0; i < m(); ++i)
      for (std::size_t k = 0; k < nn; ++k) {
        // a_k depends on zeta_i, a_{n..} vanish identically
        out.M[i][k] += out.dp[i][k];
        out.M[k][i] -= out.dp[i][k];
      }
    return out;
  }

  /// Embedded phase point of a chart point.
  Vec embed(const Vec& zeta) const {
    ChartData<double> d = analyze(zeta, false);
    Vec x(zeta.begin(), zeta.begin() + std::ptrdiff_t(n()));
    x.insert(x.end(), d.p.begin(), d.p.end());
    return x;
  }

  /// Push a chart tangent vector to a phase tangent vector at zeta.
  Vec push_tangent(const ChartData<double>& d, const Vec& zeta, const Vec& v) const {
    (void)zeta;
    const std::size_t nn = n();
    Vec out(2 * nn, 0.0);
    for (std::size_t i = 0; i < nn; ++i) out[i] = v[i];
    for (std::size_t i = 0; i < m(); ++i)
      for (std::size_t k = 0; k < nn; ++k) out[nn + k] += v[i] * d.dp[i][k];
    return out;
  }

 private:
  template <class T>
  std::vector<T> grad(const std::vector<T>& x, const T&) const {
    if constexpr (std::is_same_v<T, double>) {
      return H_->gradient_flat(x);
    } else {
      return H_->gradient_series(x);
    }
  }

  double solve_rho(const Vec& q, const Vec& D, double) const {
    const std::size_t nn = n();
    double rho = rho0_;
    Vec x(2 * nn);
    for (int it = 0; it < 60; ++it) {
      for (std::size_t k = 0; k < nn; ++k) { x[k] = q[k]; x[nn + k] = P_[k] + rho * D[k]; }
      double f = H_->value_flat(x);
      Vec g = H_->gradient_flat(x);
      double df = 0.0;
      for (std::size_t k = 0; k < nn; ++k) df += g[nn + k] * D[k];
      if (std::abs(df) < cfg_.ray_tol) throw ContactError("ray tangent to level set");
      double step = f / df;
      rho -= step;
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(rho))) break;
    }
    return rho;
  }

  Series solve_rho(const SVec& q, const SVec& D, const Series& like) const {
    const std::size_t nn = n();
    Vec q0(nn), D0(nn);
    for (std::size_t k = 0; k < nn; ++k) { q0[k] = q[k][0]; D0[k] = D[k][0]; }
    Series rho = like + solve_rho(q0, D0, 0.0);
    int iters = 1;
    while ((std::size_t(1) << iters) < like.order() + 1) ++iters;
    for (int it = 0; it <= iters; ++it) {  // Newton doubles correct orders
      SVec x(2 * nn, like);
      for (std::size_t k = 0; k < nn; ++k) { x[k] = q[k]; x[nn + k] = rho * D[k] + P_[k]; }
      Series f = H_->expr().eval<Series>(std::span<const Series>(x));
      SVec g = H_->gradient_series(x);
      Series df = like;
      for (std::size_t k = 0; k < nn; ++k) df += g[nn + k] * D[k];
      rho -= f / df;
    }
    return rho;
  }

  void validate() {
    CertifyResult cr = certify_level_point(*H_, center_, tol_);
    if (!cr.ok()) { rejection_ = ChartRejection::CenterOffLevel; return; }
    center_ = cr->point;
    const std::size_t nn = n();
    Vec d0 = center_.p;
    for (std::size_t k = 0; k < nn; ++k) d0[k] -= P_[k];
    rho0_ = norm(d0);
    if (rho0_ < cfg_.rho_min) { rejection_ = ChartRejection::PoleInFiberTangent; return; }
    d0_ = (1.0 / rho0_) * d0;
    Vec g = H_->gradient(center_);
    Vec gp(g.begin() + std::ptrdiff_t(nn), g.end());
    if (std::abs(dot(gp, d0_)) < cfg_.ray_tol * std::max(1.0, norm(gp))) {
      rejection_ = ChartRejection::PoleInFiberTangent;
      return;
    }
    E_ = orthogonal_complement(d0_);
    // sampled certificates over the box
    Vec zeta(m());
    std::vector<int> idx(m(), 0);
    const int G = cfg_.grid;
    while (true) {
      for (std::size_t i = 0; i < nn; ++i)
        zeta[i] = center_.q[i] + q_half_[i] * (G == 1 ? 0.0 : -1.0 + 2.0 * idx[i] / double(G - 1));
      for (std::size_t j = 0; j + 1 < nn; ++j)
        zeta[nn + j] = u_half_[j] * (G == 1 ? 0.0 : -1.0 + 2.0 * idx[nn + j] / double(G - 1));
      if (!certify_sample(zeta)) return;
      std::size_t c = 0;
      while (c < idx.size() && ++idx[c] == G) idx[c++] = 0;
      if (c == idx.size()) break;
    }
  }

  bool certify_sample(const Vec& zeta) {
    const std::size_t nn = n();
    ChartData<double> d;
    try {
      d = analyze(zeta, true);
    } catch (const ContactError&) {
      rejection_ = ChartRejection::RayTangency;
      return false;
    }
    if (d.rho < cfg_.rho_min) { rejection_ = ChartRejection::RayTangency; return false; }
    Vec x(zeta.begin(), zeta.begin() + std::ptrdiff_t(nn));
    x.insert(x.end(), d.p.begin(), d.p.end());
    Vec g = H_->gradient_flat(x);
    double den = 0.0;
    for (std::size_t k = 0; k < nn; ++k) den += g[nn + k] * d.D[k];
    if (std::abs(den) < cfg_.ray_tol) { rejection_ = ChartRejection::RayTangency; return false; }
    // single crossing: count sign changes of H along the ray segment
    int crossings = 0;
    double prev = 0.0;
    Vec xr(2 * nn);
    for (std::size_t k = 0; k < nn; ++k) xr[k] = zeta[k];
    for (int s = 0; s <= cfg_.ray_samples; ++s) {
      double rr = d.rho * (0.05 + 1.9 * double(s) / double(cfg_.ray_samples));
      for (std::size_t k = 0; k < nn; ++k) xr[nn + k] = P_[k] + rr * d.D[k];
      double h = H_->value_flat(xr);
      if (s > 0 && h * prev < 0.0) ++crossings;
      prev = h;
    }
    if (crossings > 1) { rejection_ = ChartRejection::MultipleCrossing; return false; }
    return true;
  }

  const ExprHamiltonian* H_;
  PhasePoint center_;
  Vec P_;
  Vec q_half_, u_half_;
  ContactConfig cfg_;
  Tolerances tol_;
  Vec d0_;      // unit ray direction at the center
  double rho0_ = 0.0;
  Mat E_;       // (n-1) x n orthonormal basis of the direction chart
  ChartRejection rejection_ = ChartRejection::None;
};

/// Contact data at a chart point: Reeb-type vector R with alpha(R) = h and
/// d-alpha(R, .) = -dh on the hyperplane xi = ker alpha.
struct ContactFrame {
  Vec zeta;
  Vec a;        // alpha coefficients
  Mat M;        // d-alpha matrix
  Mat xi;       // rows: basis of ker alpha, m-1 vectors
  Vec R;        // the solved field at zeta (chart components)
  double alpha_R = 0.0;
  double xh_angle = 0.0;  // angle between the pushed field and X_H (parallelism check)
};

/// Solve alpha(R_h) = h, d-alpha(R_h, W_j) = -dh(W_j) on a xi-basis W_j.
inline ContactFrame contact_ham_field(const RadialChart& chart, const Expr& h, const Vec& zeta) {
  const std::size_t m = chart.m();
  ChartData<double> d = chart.analyze(zeta, true);
  ContactFrame fr;
  fr.zeta = zeta;
  fr.a = d.a;
  fr.M = d.M;
  fr.xi = orthogonal_complement(d.a);
  Mat A = zeros(m, m);
  Vec b(m, 0.0);
  A[0] = d.a;
  b[0] = h.eval(std::span<const double>(zeta));
  Vec dh(m);
  for (std::size_t i = 0; i < m; ++i) dh[i] = h.diff(int(i)).eval(std::span<const double>(zeta));
  for (std::size_t j = 0; j + 1 < m; ++j) {
    // row_i = sum_k M[i][k] W_j[k] gives the equation R . (M W_j) = -dh . W_j
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += d.M[i][k] * fr.xi[j][k];
      A[j + 1][i] = s;
    }
    b[j + 1] = -dot(dh, fr.xi[j]);
  }
  try {
    fr.R = solve(A, b);
  } catch (const std::domain_error&) {
    throw ContactError("singular contact system (chart invariant violated)");
  }
  fr.alpha_R = dot(fr.a, fr.R);
  Vec v = chart.push_tangent(d, zeta, fr.R);
  Vec x(zeta.begin(), zeta.begin() + std::ptrdiff_t(chart.n()));
  x.insert(x.end(), d.p.begin(), d.p.end());
  Vec xh = ham_vector_field_flat(chart.ham(), x);
  double c = std::abs(dot(v, xh)) / (norm(v) * norm(xh));
  fr.xh_angle = std::acos(std::min(1.0, c));
  return fr;
}

inline ContactFrame reeb_field(const RadialChart& chart, const Vec& zeta) {
  return contact_ham_field(chart, Expr::constant(1.0), zeta);
}

/// Taylor series (to `order`) of the R_h orbit through zeta0, by Picard
/// iteration with the linear system solved over series.
inline SVec rh_orbit_series(const RadialChart& chart, const Expr& h, const Vec& zeta0,
                            std::size_t order) {
  const std::size_t m = chart.m();
  std::vector<Expr> dh(m);
  for (std::size_t i = 0; i < m; ++i) dh[i] = h.diff(int(i));
  SVec zeta(m, Series(order));
  for (std::size_t i = 0; i < m; ++i) zeta[i].at(0) = zeta0[i];
  Mat xi0 = orthogonal_complement(chart.analyze(zeta0, false).a);
  for (std::size_t j = 0; j < order; ++j) {
    ChartData<Series> d = chart.analyze(zeta, true);
    const Series like = zeta[0] * 0.0;
    // xi-basis along the curve: project the constant basis off a(t)
    Series a2 = like;
    for (std::size_t i = 0; i < m; ++i) a2 += d.a[i] * d.a[i];
    SMat A(m, SVec(m, like));
    SVec b(m, like);
    A[0] = d.a;
    b[0] = h.eval<Series>(std::span<const Series>(zeta));
    SVec dhv(m, like);
    for (std::size_t i = 0; i < m; ++i) dhv[i] = dh[i].eval<Series>(std::span<const Series>(zeta));
    for (std::size_t w = 0; w + 1 < m; ++w) {
      SVec W(m, like);
      Series proj = like;
      for (std::size_t i = 0; i < m; ++i) proj += d.a[i] * xi0[w][i];
      proj = proj / a2;
      for (std::size_t i = 0; i < m; ++i) W[i] = xi0[w][i] - proj * d.a[i];
      for (std::size_t i = 0; i < m; ++i) {
        Series s = like;
        for (std::size_t k = 0; k < m; ++k) s += d.M[i][k] * W[k];
        A[w + 1][i] = s;
        b[w + 1] -= dhv[i] * W[i];
      }
    }
    SVec F = solve_series(A, b);
    for (std::size_t i = 0; i < m; ++i) zeta[i].at(j + 1) = F[i][j] / double(j + 1);
  }
  return zeta;
}

/// k-jet (graph form) of the R_h orbit through zeta0.
inline CurveJet rh_orbit_jet(const RadialChart& chart, const Expr& h, const Vec& zeta0, int k,
                             int axis, const JetConfig& jcfg = JetConfig{}) {
  SVec zeta = rh_orbit_series(chart, h, zeta0, std::size_t(k) + 1);
  return graph_jet_from_series(zeta, axis, k, jcfg);
}

struct RealizedJetHam {
  Expr h;           // expression in chart coordinates x1..xm
  Vec base;         // chart coordinates of the marked point
  Vec q_half, u_half;  // validity box (possibly shrunk)
  double h_base = 0.0;
  bool box_shrunk = false;
};

namespace detail {

inline Expr expr_monomial(const std::vector<Expr>& vars, const std::vector<int>& e, double c) {
  Expr t = Expr::constant(c);
  for (std::size_t i = 0; i < vars.size(); ++i)
    for (int d = 0; d < e[i]; ++d) t = t * vars[i];
  return t;
}

}  // namespace detail

/// The jet-realization construction: given a curve jet Psi in chart
/// coordinates transverse to xi, build a local contact Hamiltonian h whose
/// R_h orbit through the marked point realizes Psi to order k.
///
/// Steps: canonical polynomial representative psi(t); 1-jet of h along psi
/// from h(psi) = alpha(psi'), dh|_xi = -i_{psi'} d-alpha|_xi and the
/// autonomy condition dh(psi') = d/dt alpha(psi'); fiberwise-affine
/// extension along straight lines in the xi directions; change to chart
/// coordinates by truncated inversion of the extension map.
inline RealizedJetHam realize_jet_hamiltonian(const RadialChart& chart, const CurveJet& psi_jet,
                                              int k, const ContactConfig& cfg = ContactConfig{}) {
  const std::size_t m = chart.m();
  if (psi_jet.ambient_dim() != m)
    throw ContactError("jet ambient dimension does not match chart");
  const std::size_t ord = std::size_t(k) + 1;  // h is determined by its (k+1)-jet
  // canonical polynomial representative, parametrized by the axis coordinate
  SVec psi(m, Series(ord));
  Vec base(m);
  {
    std::size_t out = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (int(i) == psi_jet.axis) {
        psi[i].at(0) = psi_jet.base;
        psi[i].at(1) = 1.0;
        base[i] = psi_jet.base;
        continue;
      }
      double fact = 1.0;
      for (int r = 0; r <= psi_jet.k && std::size_t(r) <= ord; ++r) {
        if (r > 0) fact *= double(r);
        psi[i].at(std::size_t(r)) = psi_jet.coeffs[std::size_t(r)][out] / fact;
      }
      base[i] = psi_jet.coeffs[0][out];
      ++out;
    }
  }
  auto dt = [ord](const Series& s) {
    Series d(ord);
    for (std::size_t i = 0; i + 1 <= ord; ++i) d.at(i) = s[i + 1] * double(i + 1);
    return d;
  };
  auto alpha_of_velocity = [&](const SVec& curve) {
    ChartData<Series> d = chart.analyze(curve, true);
    Series c = curve[0] * 0.0;
    for (std::size_t i = 0; i < m; ++i) c += d.a[i] * dt(curve[i]);
    return std::pair(std::move(d), std::move(c));
  };
  auto [data, c] = alpha_of_velocity(psi);
  if (c[0] < 0.0) {
    // traverse the representative the other way; the unparametrized jet is
    // unchanged and alpha(psi') becomes positive
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t r = 1; r <= ord; r += 2) psi[i].at(r) = -psi[i][r];
    std::tie(data, c) = alpha_of_velocity(psi);
  }
  if (std::abs(c[0]) < 1e-10)
    throw ContactError("target jet tangent to the contact hyperplane (alpha(psi') = 0)");

  SVec dpsi(m);
  for (std::size_t i = 0; i < m; ++i) dpsi[i] = dt(psi[i]);
  const Series like = psi[0] * 0.0;
  // xi-basis along psi
  Vec a0(m);
  for (std::size_t i = 0; i < m; ++i) a0[i] = data.a[i][0];
  Mat xi0 = orthogonal_complement(a0);
  Series a2 = like;
  for (std::size_t i = 0; i < m; ++i) a2 += data.a[i] * data.a[i];
  SMat W(m - 1, SVec(m, like));
  for (std::size_t w = 0; w + 1 < m; ++w) {
    Series proj = like;
    for (std::size_t i = 0; i < m; ++i) proj += data.a[i] * xi0[w][i];
    proj = proj / a2;
    for (std::size_t i = 0; i < m; ++i) W[w][i] = xi0[w][i] - proj * data.a[i];
  }
  // 1-jet of h along psi: solve for the covector w(t)
  SMat A(m, SVec(m, like));
  SVec b(m, like);
  A[0] = dpsi;
  b[0] = dt(c);  // autonomy condition dh(psi') = d/dt alpha(psi')
  for (std::size_t w = 0; w + 1 < m; ++w) {
    A[w + 1] = W[w];
    Series s = like;  // d-alpha(psi', W_w)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < m; ++kk) s += dpsi[i] * data.M[i][kk] * W[w][kk];
    b[w + 1] = -s;
  }
  SVec wcov = solve_series(A, b);
  // fiberwise-affine extension h~(t, v) = c(t) + sum_j (w . W_j)(t) v_j
  SVec slope(m - 1, like);
  for (std::size_t w = 0; w + 1 < m; ++w)
    for (std::size_t i = 0; i < m; ++i) slope[w] += wcov[i] * W[w][i];
  // extension map G(t, v) = psi(t) + sum_j W_j(t) v_j, inverted to order k+1
  const std::size_t K = ord;
  std::vector<MPoly> G(m);
  MPoly tvar = MPoly::variable(m, K, 0);
  std::vector<MPoly> tpow(K + 1);
  tpow[0] = MPoly::constant(m, K, 1.0);
  for (std::size_t d = 1; d <= K; ++d) tpow[d] = tpow[d - 1] * tvar;
  for (std::size_t i = 0; i < m; ++i) {
    G[i] = MPoly(m, K);
    for (std::size_t d = 0; d <= K; ++d) G[i] += (psi[i][d] - (d == 0 ? base[i] : 0.0)) * tpow[d];
    for (std::size_t w = 0; w + 1 < m; ++w) {
      MPoly vw = MPoly::variable(m, K, w + 1);
      MPoly wt(m, K);
      for (std::size_t d = 0; d + 1 <= K; ++d) wt += W[w][i][d] * tpow[d];
      G[i] += wt * vw;
    }
  }
  std::vector<MPoly> S = invert_poly_map(G);
  MPoly htilde(m, K);
  for (std::size_t d = 0; d <= K; ++d) htilde += c[d] * tpow[d];
  for (std::size_t w = 0; w + 1 < m; ++w) {
    MPoly vw = MPoly::variable(m, K, w + 1);
    MPoly st(m, K);
    for (std::size_t d = 0; d + 1 <= K; ++d) st += slope[w][d] * tpow[d];
    htilde += st * vw;
  }
  MPoly hpoly = htilde.compose(S);
  // express in chart coordinates (shifted to the marked point)
  std::vector<Expr> shifted(m);
  for (std::size_t i = 0; i < m; ++i)
    shifted[i] = Expr::variable(int(i), "x" + std::to_string(i + 1)) - base[i];
  Expr h = Expr::constant(0.0);
  for (std::size_t r = 0; r < hpoly.size(); ++r) {
    if (hpoly.raw(r) == 0.0) continue;
    h = h + detail::expr_monomial(shifted, hpoly.basis().exponents[r], hpoly.raw(r));
  }
  RealizedJetHam out;
  out.base = base;
  out.h_base = c[0];
  out.q_half = chart.q_half();
  out.u_half = chart.u_half();
  // positivity on the validity box; shrink once, then fail
  const std::size_t nn = chart.n();
  auto min_on_box = [&](const Vec& qh, const Vec& uh) {
    double mn = 1e300;
    Vec z(m);
    std::vector<int> idx(m, 0);
    const int G3 = 3;
    while (true) {
      for (std::size_t i = 0; i < nn; ++i)
        z[i] = base[i] + qh[i] * (-1.0 + double(idx[i]));
      for (std::size_t j = 0; j + 1 < nn; ++j)
        z[nn + j] = base[nn + j] + uh[j] * (-1.0 + double(idx[nn + j]));
      mn = std::min(mn, h.eval(std::span<const double>(z)));
      std::size_t cI = 0;
      while (cI < idx.size() && ++idx[cI] == G3) idx[cI++] = 0;
      if (cI == idx.size()) break;
    }
    return mn;
  };
  if (min_on_box(out.q_half, out.u_half) < cfg.h_min) {
    out.q_half = 0.5 * out.q_half;
    out.u_half = 0.5 * out.u_half;
    out.box_shrunk = true;
    if (min_on_box(out.q_half, out.u_half) < cfg.h_min)
      throw ContactError("constructed h not positive on the validity box");
  }
  out.h = std::move(h);
  return out;
}

struct SubmersivityReport {
  double min_gain = 0.0;   // smallest singular value of the sampled differential
  int used_directions = 0;
  int excluded_directions = 0;
};

/// Sampled differential of (coefficients of the (k+1)-jet of h) -> (k-jet of
/// the R_h orbit): finite differences along monomial perturbations of h.
/// A positive min_gain is numerical evidence of submersivity.
inline SubmersivityReport jet_map_submersivity_check(const RadialChart& chart, const Expr& h,
                                                     const Vec& zeta0, int k, int n_directions,
                                                     int axis = 0,
                                                     const JetConfig& jcfg = JetConfig{}) {
  const std::size_t m = chart.m();
  std::vector<Expr> shifted(m);
  for (std::size_t i = 0; i < m; ++i)
    shifted[i] = Expr::variable(int(i), "x" + std::to_string(i + 1)) - zeta0[i];
  auto flatten = [&](const CurveJet& j) {
    Vec f;
    for (int r = 1; r <= j.k; ++r)
      f.insert(f.end(), j.coeffs[std::size_t(r)].begin(), j.coeffs[std::size_t(r)].end());
    return f;
  };
  CurveJet j0 = rh_orbit_jet(chart, h, zeta0, k, axis, jcfg);
  Vec f0 = flatten(j0);
  const double delta = 1e-5;
  auto basis = MonomialBasis::get(m, std::size_t(k) + 1);
  Mat cols;  // each entry: one direction's jet response
  SubmersivityReport rep;
  for (std::size_t r = 0; r < basis->exponents.size() && int(cols.size()) < n_directions; ++r) {
    Expr pert = h + detail::expr_monomial(shifted, basis->exponents[r], delta);
    CurveJet j1 = rh_orbit_jet(chart, pert, zeta0, k, axis, jcfg);
    Vec f1 = flatten(j1);
    Vec col(f0.size());
    for (std::size_t i = 0; i < f0.size(); ++i) col[i] = (f1[i] - f0[i]) / delta;
    if (norm(col) < 1e-9) {
      ++rep.excluded_directions;  // perturbation invisible to the orbit germ
      continue;
    }
    cols.push_back(std::move(col));
  }
  rep.used_directions = int(cols.size());
  if (cols.size() < f0.size()) return rep;  // not enough directions to span
  Mat A = transpose(cols);  // rows: jet coords, cols: directions
  Vec sv = singular_values(A);
  rep.min_gain = sv[f0.size() - 1];
  return rep;
}

/// Test-side helpers for the Liouville-form identities in full phase
/// coordinates: lambda_P = (p - P) dq, Y_P the radial vertical field,
/// omega the standard symplectic matrix (omega(X, Y) = X^T Omega Y).
inline Vec liouville_coeffs(const Vec& P, std::span<const double> x) {
  const std::size_t n = P.size();
  Vec a(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i] = x[n + i] - P[i];
  return a;
}

inline Vec radial_vertical_field(const Vec& P, std::span<const double> x) {
  const std::size_t n = P.size();
  Vec y(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) y[n + i] = x[n + i] - P[i];
  return y;
}

inline Mat symplectic_matrix(std::size_t n) {
  Mat W = zeros(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    W[n + i][i] = 1.0;   // omega = sum dp_i ^ dq_i
    W[i][n + i] = -1.0;
  }
  return W;
}

}  // namespace podex
