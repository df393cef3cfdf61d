#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "podex/hamsys.hpp"

namespace podex {

struct FlowConfig {
  int taylor_order = 12;
  double local_tol = 1e-14;   // per-step truncation target
  double drift_tol = 1e-9;    // orbit-level energy drift bound
  double chord_tol = 1e-8;
  double min_step = 1e-12;
  double max_step = 1.0;
  int projection_iters = 5;
  int shoot_max_iter = 60;
};

/// Taylor coefficients of t -> (q(t), p(t)) through x to the given order,
/// by the Picard recurrence c_{j+1} = F_j / (j+1).
inline std::vector<Series> phase_taylor(const HamiltonianField& H, std::span<const double> x,
                                        std::size_t order) {
  const std::size_t n = H.n();
  std::vector<Series> s(2 * n, Series(order));
  for (std::size_t i = 0; i < 2 * n; ++i) s[i].at(0) = x[i];
  for (std::size_t j = 0; j < order; ++j) {
    std::vector<Series> g = H.gradient_series(s);
    for (std::size_t i = 0; i < n; ++i) {
      s[i].at(j + 1) = g[n + i][j] / double(j + 1);       // q̇ = dH/dp
      s[n + i].at(j + 1) = -g[i][j] / double(j + 1);      // ṗ = -dH/dq
    }
  }
  return s;
}

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One accepted integration step with its Taylor polynomial (dense output).
struct FlowStep {
  double t0 = 0.0;
  double h = 0.0;
  std::vector<Series> poly;  // 2n series in local time
};

/// Densely sampled orbit on Sigma over a finite window.
class Orbit {
 public:
  std::vector<std::pair<double, LevelPoint>> samples;
  std::vector<FlowStep> steps;
  double t0 = 0.0, t1 = 0.0;
  double max_drift = 0.0;

  std::size_t n() const { return samples.empty() ? 0 : samples.front().second.point.n(); }

  /// Dense evaluation of the full phase point at any t in the window.
  Vec eval_flat(double t) const {
    const FlowStep& st = step_at(t);
    Vec x(st.poly.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.poly[i].eval(t - st.t0);
    return x;
  }
  PhasePoint eval(double t) const { return PhasePoint::from_flat(eval_flat(t)); }
  Vec base(double t) const {
    Vec x = eval_flat(t);
    return Vec(x.begin(), x.begin() + std::ptrdiff_t(x.size() / 2));
  }

 private:
  const FlowStep& step_at(double t) const {
    if (steps.empty()) throw FlowError("empty orbit");
    auto start = [](const FlowStep& s) { return std::min(s.t0, s.t0 + s.h); };
    std::size_t lo = 0, hi = steps.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi + 1) / 2;
      if (start(steps[mid]) <= t + 1e-15) lo = mid;
      else hi = mid - 1;
    }
    return steps[lo];
  }
};

namespace detail {

inline void project_to_level(const HamiltonianField& H, Vec& xf, int iters, double level_tol) {
  for (int it = 0; it < iters; ++it) {
    double h = H.value_flat(xf);
    if (std::abs(h) <= level_tol * 0.01) break;
    Vec g = H.gradient_flat(xf);
    double g2 = dot(g, g);
    if (g2 < 1e-300) break;
    double step = h / g2;
    for (std::size_t i = 0; i < xf.size(); ++i) xf[i] -= step * g[i];
  }
}

inline double taylor_step_size(const std::vector<Series>& s, int order, double tol, double hmax) {
  auto coeff_norm = [&](int j) {
    double m = 0.0;
    for (const Series& si : s) m = std::max(m, std::abs(si[std::size_t(j)]));
    return m;
  };
  double h = hmax;
  for (int j = order - 1; j <= order; ++j) {
    double c = coeff_norm(j);
    if (c > 0.0) h = std::min(h, std::pow(tol / c, 1.0 / double(j)));
  }
  return 0.8 * h;
}

}  // namespace detail

/// Integrate the Hamiltonian flow from a certified point over [0, T]
/// (T may be negative).  Adaptive Taylor steps; after each accepted step the
/// point is Newton-projected back onto Sigma.
inline Orbit integrate(const HamiltonianField& H, const LevelPoint& x0, double T,
                       const FlowConfig& cfg = FlowConfig{}, const Tolerances& tol = Tolerances{}) {
  Orbit orbit;
  orbit.t0 = std::min(0.0, T);
  orbit.t1 = std::max(0.0, T);
  const double dir = T >= 0.0 ? 1.0 : -1.0;
  Vec xf = x0.point.flat();
  double t = 0.0;
  orbit.samples.push_back({0.0, x0});
  while (std::abs(t) < std::abs(T) - 1e-14) {
    std::vector<Series> s = phase_taylor(H, xf, std::size_t(cfg.taylor_order));
    double h = detail::taylor_step_size(s, cfg.taylor_order, cfg.local_tol, cfg.max_step);
    if (h < cfg.min_step) throw FlowError("step size underflow (blow-up?)");
    h = std::min(h, std::abs(T) - std::abs(t));
    double hs = dir * h;
    FlowStep st;
    st.t0 = t;
    st.h = hs;
    st.poly = s;
    orbit.steps.push_back(st);
    for (std::size_t i = 0; i < xf.size(); ++i) xf[i] = s[i].eval(hs);
    detail::project_to_level(H, xf, cfg.projection_iters, tol.level_tol);
    t += hs;
    CertifyResult cr = certify_level_point(H, PhasePoint::from_flat(xf), tol);
    if (cr.status == CertifyStatus::VerticalTangency)
      throw FlowError("vertical tangency: submersivity lost along orbit");
    if (!cr.ok()) throw FlowError("level projection failed mid-orbit");
    orbit.samples.push_back({t, *cr});
    orbit.max_drift = std::max(orbit.max_drift, cr->energy_residual);
    xf = cr->point.flat();
  }
  if (dir < 0) {
    // keep samples time ordered
    std::reverse(orbit.samples.begin(), orbit.samples.end());
    std::reverse(orbit.steps.begin(), orbit.steps.end());
  }
  if (orbit.max_drift > cfg.drift_tol) throw FlowError("energy drift exceeds drift_tol");
  return orbit;
}

inline void orbit_to_csv(const Orbit& o, std::ostream& os) {
  const std::size_t n = o.n();
  os << "t";
  for (std::size_t i = 1; i <= n; ++i) os << ",q" << i;
  for (std::size_t i = 1; i <= n; ++i) os << ",p" << i;
  os << ",energy_residual\n";
  os.precision(17);
  for (const auto& [t, lp] : o.samples) {
    os << t;
    for (double v : lp.point.q) os << ',' << v;
    for (double v : lp.point.p) os << ',' << v;
    os << ',' << lp.energy_residual << '\n';
  }
}

inline std::string orbit_to_csv(const Orbit& o) {
  std::ostringstream os;
  orbit_to_csv(o, os);
  return os.str();
}

/// A flow line connecting the fibers over q_a and q_b.
struct Chord {
  Orbit orbit;
  Vec q_a, q_b;
  double duration = 0.0;
  double residual = 0.0;
  bool converged = false;
  bool singular_jacobian = false;  // conjugate-point suspicion, diagnostics only
  int iterations = 0;
};

/// Newton shooting on (fiber covector, duration) from the fiber over q_a to
/// the fiber over q_b.
inline Chord shoot_chord(const HamiltonianField& H, const Vec& q_a, const Vec& q_b, Vec p_guess,
                         double T_guess, const FlowConfig& cfg = FlowConfig{},
                         const Tolerances& tol = Tolerances{}) {
  const std::size_t n = H.n();
  Chord chord;
  chord.q_a = q_a;
  chord.q_b = q_b;
  Vec p = p_guess;
  double T = T_guess;

  auto on_fiber = [&](Vec pp) -> std::optional<LevelPoint> {
    // Newton along the fiber gradient keeps q fixed at q_a
    PhasePoint x{q_a, pp};
    for (int it = 0; it < 30; ++it) {
      Vec xf = x.flat();
      double h = H.value_flat(xf);
      if (std::abs(h) <= tol.level_tol) break;
      Vec g = H.gradient_flat(xf);
      Vec gp(g.begin() + std::ptrdiff_t(n), g.end());
      double g2 = dot(gp, gp);
      if (g2 < 1e-300) return std::nullopt;
      double step = h / g2;
      for (std::size_t i = 0; i < n; ++i) x.p[i] -= step * gp[i];
    }
    CertifyResult cr = certify_level_point(H, x, tol);
    if (!cr.ok()) return std::nullopt;
    return *cr;
  };

  auto residual_of = [&](const Vec& pp, double TT, Orbit* out) -> std::optional<Vec> {
    auto lp = on_fiber(pp);
    if (!lp) return std::nullopt;
    Orbit o = integrate(H, *lp, TT, cfg, tol);
    Vec qb = o.base(TT);
    Vec r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = qb[i] - q_b[i];
    if (out) *out = std::move(o);
    return r;
  };

  double res_norm = 1e300;
  for (int it = 0; it < cfg.shoot_max_iter; ++it) {
    chord.iterations = it;
    Orbit o;
    auto r0 = residual_of(p, T, &o);
    if (!r0) break;
    res_norm = norm(*r0);
    if (res_norm <= cfg.chord_tol) {
      chord.orbit = std::move(o);
      chord.duration = T;
      chord.residual = res_norm;
      chord.converged = true;
      return chord;
    }
    // unknowns: fiber-tangent directions of p (n-1) and duration
    auto lp = on_fiber(p);
    if (!lp) break;
    Vec g = H.gradient(lp->point);
    Vec gp(g.begin() + std::ptrdiff_t(n), g.end());
    Mat fiber_basis = orthogonal_complement(gp);  // (n-1) x n
    const std::size_t m = fiber_basis.size() + 1;
    Mat J = zeros(n, m);
    const double fd = 1e-7;
    for (std::size_t c = 0; c < fiber_basis.size(); ++c) {
      Vec pp = lp->point.p;
      for (std::size_t i = 0; i < n; ++i) pp[i] += fd * fiber_basis[c][i];
      auto r1 = residual_of(pp, T, nullptr);
      if (!r1) return chord;
      for (std::size_t i = 0; i < n; ++i) J[i][c] = ((*r1)[i] - (*r0)[i]) / fd;
    }
    {
      auto r1 = residual_of(lp->point.p, T + fd, nullptr);
      if (!r1) return chord;
      for (std::size_t i = 0; i < n; ++i) J[i][m - 1] = ((*r1)[i] - (*r0)[i]) / fd;
    }
    Vec sv = singular_values(J);
    if (sv.front() > 0.0 && sv.back() / sv.front() < 1e-10) chord.singular_jacobian = true;
    Vec step;
    try {
      step = lstsq(J, *r0, 1e-14);
    } catch (const std::domain_error&) {
      chord.singular_jacobian = true;
      break;
    }
    // damped update
    double damp = 1.0;
    for (int bt = 0; bt < 8; ++bt) {
      Vec pp = lp->point.p;
      for (std::size_t c = 0; c < fiber_basis.size(); ++c)
        for (std::size_t i = 0; i < n; ++i) pp[i] -= damp * step[c] * fiber_basis[c][i];
      double TT = T - damp * step[m - 1];
      auto r1 = residual_of(pp, TT, nullptr);
      if (r1 && norm(*r1) < res_norm) {
        p = pp;
        T = TT;
        break;
      }
      damp *= 0.5;
      if (bt == 7) { it = cfg.shoot_max_iter; }  // stalled
    }
  }
  chord.residual = res_norm;
  chord.duration = T;
  chord.converged = false;
  return chord;
}

}  // namespace podex
