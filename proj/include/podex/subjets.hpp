#pragma once

#include <climits>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "podex/flow.hpp"
#include "podex/hamsys.hpp"
#include "podex/series.hpp"

namespace podex {

struct JetConfig {
  double axis_margin_frac = 0.2;  // required |dq_axis(v)| relative to |v|
  double jet_tol = 1e-7;
  int k_max = 6;
};

class ChartMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// k-jet of a curve germ in R^m written as a graph y(x) over one coordinate
/// axis.  coeffs[r] holds the r-th derivative y^(r) of the graph map at the
/// marked point, each a vector of the m-1 non-axis components (ascending
/// original index, axis skipped).
struct CurveJet {
  int axis = 0;          // graph coordinate index, 0-based
  double base = 0.0;     // value of the axis coordinate at the marked point
  std::vector<Vec> coeffs;  // size k+1, entries of size m-1
  int k = 0;
  int orientation = +1;  // sign of dx_axis(velocity)
  double axis_margin = 0.0;  // |dx_axis(v)| / |v| at the marked point

  std::size_t ambient_dim() const { return coeffs.empty() ? 0 : coeffs[0].size() + 1; }
  /// Coordinate count of J^k(M,1): 1 + (m-1)(k+1).
  std::size_t coordinate_count() const { return 1 + (ambient_dim() - 1) * std::size_t(k + 1); }
};

inline constexpr int kTangencyTop = INT_MAX;  // all compared orders agree

/// Jet of a parametrized curve germ given componentwise as truncated series
/// in t, projected to graph coordinates over `axis` by series reversion.
inline CurveJet graph_jet_from_series(const std::vector<Series>& comps, int axis, int k,
                                      const JetConfig& cfg = JetConfig{}) {
  const std::size_t m = comps.size();
  Vec vel(m);
  double vnorm = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    vel[i] = comps[i][1];
    vnorm += vel[i] * vel[i];
  }
  vnorm = std::sqrt(vnorm);
  double margin = vnorm > 0.0 ? std::abs(vel[std::size_t(axis)]) / vnorm : 0.0;
  if (margin < cfg.axis_margin_frac)
    throw ChartMismatchError("axis margin violation: curve not graph-like over requested axis");
  // u(t) = x_axis(t) - x_axis(0); invert and compose
  Series u = comps[std::size_t(axis)];
  double base = u[0];
  u -= base;
  Series tau = revert(u);
  CurveJet jet;
  jet.axis = axis;
  jet.base = base;
  jet.k = k;
  jet.orientation = vel[std::size_t(axis)] >= 0.0 ? +1 : -1;
  jet.axis_margin = margin;
  jet.coeffs.assign(std::size_t(k) + 1, Vec(m - 1, 0.0));
  double factorial = 1.0;
  std::vector<Series> graphs;
  std::size_t out = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (int(i) == axis) continue;
    Series yi = comps[i];
    double y0 = yi[0];
    yi -= y0;
    Series g = compose(yi, tau);
    g += y0;
    factorial = 1.0;
    for (int r = 0; r <= k; ++r) {
      if (r > 0) factorial *= double(r);
      jet.coeffs[std::size_t(r)][out] = g[std::size_t(r)] * factorial;
    }
    ++out;
  }
  return jet;
}

/// Taylor coefficients of the orbit through a certified level point.
inline std::vector<Series> orbit_taylor(const HamiltonianField& H, const LevelPoint& x0,
                                        std::size_t order) {
  return phase_taylor(H, x0.point.flat(), order);
}

/// Pick the divided-coordinate axis: max |base-velocity| component, lowest
/// index tie-break.
inline int select_axis(const Vec& base_velocity) {
  int axis = 0;
  double best = std::abs(base_velocity[0]);
  for (std::size_t i = 1; i < base_velocity.size(); ++i)
    if (std::abs(base_velocity[i]) > best + 0.0) {
      best = std::abs(base_velocity[i]);
      axis = int(i);
    }
  return axis;
}

/// k-jet of the base-projected orbit through x0 in divided coordinates.
inline CurveJet project_jet(const HamiltonianField& H, const LevelPoint& x0, int k,
                            const JetConfig& cfg = JetConfig{}, int forced_axis = -1) {
  const std::size_t n = H.n();
  std::vector<Series> s = orbit_taylor(H, x0, std::size_t(k) + 1);
  std::vector<Series> q(s.begin(), s.begin() + std::ptrdiff_t(n));
  int axis = forced_axis >= 0 ? forced_axis : select_axis(x0.base_velocity);
  return graph_jet_from_series(q, axis, k, cfg);
}

/// Re-express a graph jet over a different axis (the jet is a polynomial
/// germ, so this is exact up to order k).
inline CurveJet reproject_jet(const CurveJet& jet, int new_axis, const JetConfig& cfg = JetConfig{}) {
  if (new_axis == jet.axis) return jet;
  const std::size_t m = jet.ambient_dim();
  const std::size_t K = std::size_t(jet.k) + 1;
  std::vector<Series> comps(m, Series(K));
  // parametrize by the old axis coordinate
  std::size_t out = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (int(i) == jet.axis) {
      comps[i].at(0) = jet.base;
      comps[i].at(1) = 1.0;
      continue;
    }
    double factorial = 1.0;
    for (int r = 0; r <= jet.k; ++r) {
      if (r > 0) factorial *= double(r);
      comps[i].at(std::size_t(r)) = jet.coeffs[std::size_t(r)][out] / factorial;
    }
    ++out;
  }
  CurveJet rj = graph_jet_from_series(comps, new_axis, jet.k, cfg);
  if (jet.orientation < 0) rj.orientation = -rj.orientation;
  return rj;
}

/// Relative scale for comparing r-th coefficients.
inline double jet_scale(const CurveJet& a, const CurveJet& b, int r) {
  double s = 1.0;
  for (double v : a.coeffs[std::size_t(r)]) s = std::max(s, std::abs(v));
  for (double v : b.coeffs[std::size_t(r)]) s = std::max(s, std::abs(v));
  return s;
}

/// Smallest order at which the two jets disagree: -1 if the transverse
/// values at the marked point already differ (no intersection), r in
/// [1, k_max] for an order-r transverse intersection, kTangencyTop if all
/// compared orders agree.
inline int tangency_order(const CurveJet& j1, const CurveJet& j2, int k_max, double jet_tol) {
  if (j1.axis != j2.axis) throw ChartMismatchError("tangency_order: jets on different axes");
  k_max = std::min({k_max, j1.k, j2.k});
  for (int r = 0; r <= k_max; ++r) {
    double gap = 0.0;
    for (std::size_t c = 0; c < j1.coeffs[std::size_t(r)].size(); ++c)
      gap = std::max(gap, std::abs(j1.coeffs[std::size_t(r)][c] - j2.coeffs[std::size_t(r)][c]));
    if (gap > jet_tol * jet_scale(j1, j2, r)) return r == 0 ? -1 : r;
  }
  return kTangencyTop;
}

struct IsolationResult {
  double eps = 0.0;
  bool small_eps_warning = false;
};

/// Conservative Taylor-remainder radius within which the two graphs do not
/// meet again.  `deriv_bound` bounds the (r+1)-st derivative of either graph
/// over the window; `window` bounds |x - base|.
inline IsolationResult isolation_radius(const CurveJet& j1, const CurveJet& j2, int r,
                                        double deriv_bound, double window,
                                        double jet_tol = 1e-7) {
  if (j1.axis != j2.axis) throw ChartMismatchError("isolation_radius: jets on different axes");
  IsolationResult out;
  const int rr = std::max(r, 0);  // r = -1 (order-0 transverse) handled like r = 0
  auto gap = [&](int j) {
    double g = 0.0;
    for (std::size_t c = 0; c < j1.coeffs[std::size_t(j)].size(); ++c)
      g = std::max(g, std::abs(j1.coeffs[std::size_t(j)][c] - j2.coeffs[std::size_t(j)][c]));
    if (j < rr) {
      // orders below the first disagreement agree to tolerance; what is left
      // is numerical noise of an exact intersection
      g = std::max(0.0, g - jet_tol * jet_scale(j1, j2, j));
    }
    return g;
  };
  double lead = gap(rr);
  if (lead <= 0.0) return out;
  double fact = 1.0;
  for (int j = 1; j <= rr; ++j) fact *= double(j);
  double rem_fact = fact * double(rr + 1);
  // lower bound L(x) = lead x^rr / rr! - sum_{j<rr} gap_j x^j / j! - 2 M x^{rr+1}/(rr+1)!
  auto lower = [&](double x) {
    double v = lead * std::pow(x, rr) / fact;
    double jf = 1.0;
    for (int j = 0; j < rr; ++j) {
      if (j > 0) jf *= double(j);
      v -= gap(j) * std::pow(x, j) / jf;
    }
    v -= 2.0 * deriv_bound * std::pow(x, rr + 1) / rem_fact;
    return v;
  };
  // shrink from the window until the bound is positive on (0, eps]
  double eps = window;
  for (int it = 0; it < 200 && eps > 1e-300; ++it) {
    bool ok = true;
    for (int g = 1; g <= 32; ++g)
      if (lower(eps * double(g) / 32.0) <= 0.0) { ok = false; break; }
    if (ok) break;
    eps *= 0.5;
  }
  out.eps = eps;
  // the bound degenerates as the graph direction leaves the chart axis
  out.small_eps_warning = std::min(j1.axis_margin, j2.axis_margin) < 0.05 || eps < 1e-10;
  return out;
}

}  // namespace podex
