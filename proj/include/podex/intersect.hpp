#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "podex/flow.hpp"
#include "podex/subjets.hpp"

namespace podex {

/// A located crossing of two base-projected orbits.
struct BaseIntersection {
  double t_a = 0.0, t_b = 0.0;  // orbit times at the crossing
  Vec q;                        // common base point
  double gap = 0.0;             // |q_a(t_a) - q_b(t_b)| after refinement
  int order = 0;                // tangency_order of the two graph jets
  IsolationResult isolation;    // isolation certificate at that order
};

namespace detail {

inline Vec orbit_base(const Orbit& o, double t) {
  PhasePoint x = o.eval(t);
  return x.q;
}

inline Vec orbit_base_velocity(const HamiltonianField& H, const Orbit& o, double t) {
  PhasePoint x = o.eval(t);
  Vec xh = ham_vector_field(H, x);
  return Vec(xh.begin(), xh.begin() + std::ptrdiff_t(H.n()));
}

}  // namespace detail

/// Locate transverse crossings of the base projections of two orbits by a
/// coarse distance grid followed by Gauss-Newton on (t, s).  Each crossing is
/// certified with the jet machinery: tangency order of the two graph germs
/// and a Taylor-remainder isolation radius.
inline std::vector<BaseIntersection> find_base_intersections(
    const HamiltonianField& H, const Orbit& a, const Orbit& b, int k,
    const JetConfig& jcfg = JetConfig{}, const Tolerances& tol = Tolerances{},
    int grid = 200, double capture = 0.25, double min_param_sep = 1e-6) {
  std::vector<BaseIntersection> out;
  const std::size_t n = H.n();
  auto clamp_a = [&](double t) { return std::min(a.t1, std::max(a.t0, t)); };
  auto clamp_b = [&](double t) { return std::min(b.t1, std::max(b.t0, t)); };

  const double ha = (a.t1 - a.t0) / grid, hb = (b.t1 - b.t0) / grid;
  std::vector<Vec> qa(std::size_t(grid) + 1), qb(std::size_t(grid) + 1);
  for (int i = 0; i <= grid; ++i) {
    qa[std::size_t(i)] = detail::orbit_base(a, a.t0 + i * ha);
    qb[std::size_t(i)] = detail::orbit_base(b, b.t0 + i * hb);
  }

  auto refine = [&](double t, double s) -> std::optional<std::pair<double, double>> {
    for (int it = 0; it < 60; ++it) {
      Vec pa = detail::orbit_base(a, t), pb = detail::orbit_base(b, s);
      Vec r(n);
      double rn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = pa[i] - pb[i];
        rn += r[i] * r[i];
      }
      rn = std::sqrt(rn);
      if (rn < 1e-12) return std::make_pair(t, s);
      Vec va = detail::orbit_base_velocity(H, a, t), vb = detail::orbit_base_velocity(H, b, s);
      Mat J(n, Vec(2));
      for (std::size_t i = 0; i < n; ++i) {
        J[i][0] = va[i];
        J[i][1] = -vb[i];
      }
      Vec step = lstsq(J, r);
      double sn = norm(step);
      if (sn > 0.5) {
        step[0] *= 0.5 / sn;
        step[1] *= 0.5 / sn;
      }
      t = clamp_a(t - step[0]);
      s = clamp_b(s - step[1]);
      if (sn < 1e-14) break;
    }
    Vec pa = detail::orbit_base(a, t), pb = detail::orbit_base(b, s);
    Vec d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] - pb[i];
    if (norm(d) < 1e-9) return std::make_pair(t, s);
    return std::nullopt;
  };

  for (int i = 0; i <= grid; ++i)
    for (int j = 0; j <= grid; ++j) {
      Vec d(n);
      for (std::size_t c = 0; c < n; ++c) d[c] = qa[std::size_t(i)][c] - qb[std::size_t(j)][c];
      if (norm(d) > capture) continue;
      auto hit = refine(a.t0 + i * ha, b.t0 + j * hb);
      if (!hit) continue;
      auto [t, s] = *hit;
      bool dup = false;
      for (const BaseIntersection& bi : out)
        if (std::abs(bi.t_a - t) < min_param_sep && std::abs(bi.t_b - s) < min_param_sep) {
          dup = true;
          break;
        }
      if (dup) continue;

      BaseIntersection bi;
      bi.t_a = t;
      bi.t_b = s;
      Vec pa = detail::orbit_base(a, t), pb = detail::orbit_base(b, s);
      bi.q = pa;
      Vec gapv(n);
      for (std::size_t c = 0; c < n; ++c) gapv[c] = pa[c] - pb[c];
      bi.gap = norm(gapv);

      CertifyResult ca = certify_level_point(H, a.eval(t), tol);
      CertifyResult cb = certify_level_point(H, b.eval(s), tol);
      if (ca.ok() && cb.ok()) {
        // compare the germs in a rotated linear chart whose first axis
        // bisects the two velocity directions, so both are graph-like over
        // it (margin >= cos 45 deg) even for perpendicular crossings
        Vec ua = ca->base_velocity, ub = cb->base_velocity;
        double na = norm(ua), nb = norm(ub);
        for (std::size_t c = 0; c < n; ++c) {
          ua[c] /= na;
          ub[c] /= nb;
        }
        if (dot(ua, ub) < 0.0)
          for (std::size_t c = 0; c < n; ++c) ub[c] = -ub[c];
        Vec axis_dir(n);
        for (std::size_t c = 0; c < n; ++c) axis_dir[c] = ua[c] + ub[c];
        double nd = norm(axis_dir);
        for (std::size_t c = 0; c < n; ++c) axis_dir[c] /= nd;
        Mat frame{axis_dir};
        for (Vec& row : orthogonal_complement(axis_dir)) frame.push_back(std::move(row));

        auto frame_jet = [&](const LevelPoint& lp) {
          std::vector<Series> ser = phase_taylor(H, lp.point.flat(), std::size_t(k) + 1);
          std::vector<Series> rot(n, Series(std::size_t(k) + 1));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) rot[i] += frame[i][j] * ser[j];
          return graph_jet_from_series(rot, 0, k, jcfg);
        };
        try {
          CurveJet j1 = frame_jet(*ca);
          CurveJet j2 = frame_jet(*cb);
          bi.order = tangency_order(j1, j2, k, jcfg.jet_tol);
          // crude derivative bound from the top coefficients of both germs
          double bound = 1.0;
          for (const Vec& cs : {j1.coeffs.back(), j2.coeffs.back()})
            for (double v : cs) bound = std::max(bound, std::abs(v));
          bi.isolation = isolation_radius(j1, j2, bi.order == kTangencyTop ? k : bi.order,
                                          10.0 * bound, 0.5, jcfg.jet_tol);
        } catch (const ChartMismatchError&) {
          bi.order = 0;  // germs not graph-comparable; report the bare crossing
        }
      }
      out.push_back(std::move(bi));
    }
  std::sort(out.begin(), out.end(), [](const BaseIntersection& x, const BaseIntersection& y) {
    return x.t_a != y.t_a ? x.t_a < y.t_a : x.t_b < y.t_b;
  });
  return out;
}

}  // namespace podex
