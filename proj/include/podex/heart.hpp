#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "podex/homopode.hpp"

namespace podex {

/// Fiberwise q-independent Hamiltonian on T*R^2 whose zero-level fiber is a
/// dimpled closed curve r(phi) = 1 - dimple*sin(phi) (polar in the p-plane),
/// star-shaped about p = 0.  For 0.5 < dimple < 1 the curve has exactly two
/// inflection points; dimple = 0 gives the round unit circle (control case).
struct HeartModel {
  double dimple = 0.7;
  std::shared_ptr<ExprHamiltonian> H;
  Vec q0{0.0, 0.0};  // the fiber under study

  explicit HeartModel(double dimple_ = 0.7) : dimple(dimple_) {
    std::string d = std::to_string(dimple_);
    std::string r = "sqrt(p1^2+p2^2)";
    H = std::make_shared<ExprHamiltonian>(
        ExprHamiltonian::parse(r + " - 1 + " + d + "*p2/" + r, 2, "heart"));
  }

  /// Radial coordinate of the fiber curve at p-angle phi.
  double radius(double phi) const { return 1.0 - dimple * std::sin(phi); }

  PhasePoint fiber_point(double phi) const {
    double r = radius(phi);
    return {q0, {r * std::cos(phi), r * std::sin(phi)}};
  }

  /// Angle of the fiber normal d_vH at p(phi); the base velocity of the
  /// orbit through (q0, p(phi)) points in this direction.
  double normal_angle(double phi) const {
    Vec g = H->gradient_flat(fiber_point(phi).flat());
    return std::atan2(g[3], g[2]);
  }
};

struct FiberComponent {
  Flavor flavor = Flavor::Undefined;
  int winding1 = 0, winding2 = 0;  // homology class on the (phi1, phi2) torus
  std::size_t cell_count = 0;
  bool touches_diagonal = false;
  std::vector<std::array<double, 2>> points;  // cell centers, plot-ready
};

struct FiberScanReport {
  int grid = 0;
  std::vector<FiberComponent> components;
  int iso_components = 0;
  int anti_components = 0;
  std::vector<double> inflection_angles;
  std::vector<int> inflection_orders;
  int solver_checked = 0;
  int solver_agreed = 0;  // flavor confirmations from solve_homopodal at k=1
};

namespace detail {

inline double wrap_angle(double x) { return std::atan2(std::sin(x), std::cos(x)); }

/// 8-connected components of a cell mask on the N x N torus grid.
inline std::vector<std::vector<std::size_t>> torus_cell_components(const std::vector<char>& mask,
                                                                   int N) {
  std::vector<std::vector<std::size_t>> comps;
  std::vector<char> seen(mask.size(), 0);
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask[s] || seen[s]) continue;
    std::vector<std::size_t> comp, stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      std::size_t c = stack.back();
      stack.pop_back();
      comp.push_back(c);
      int i = int(c) / N, j = int(c) % N;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          std::size_t nb = std::size_t(((i + di + N) % N) * N + ((j + dj + N) % N));
          if (mask[nb] && !seen[nb]) {
            seen[nb] = 1;
            stack.push_back(nb);
          }
        }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

}  // namespace detail

/// Fiberwise homopodal scan at k = 1 on the heart torus.  Two fiber angles
/// are homopodal iff their normal angles agree (iso) or are opposite (anti).
/// The iso locus is traced as the zero set of the divided difference
/// A(phi1, phi2) = wrap(psi(phi1) - psi(phi2)) / wrap(phi1 - phi2), which
/// extends smoothly to psi' on the diagonal, so the component that touches
/// the diagonal at the inflection points is kept whole; the diagonal itself
/// (a trivial zero of the numerator only) is excluded.  Components come from
/// cell adjacency on the grid, windings from signed level crossings along
/// grid lines.
inline FiberScanReport heart_fiber_scan(const HeartModel& model, int grid = 360,
                                        const HomopodeConfig& cfg = HomopodeConfig{},
                                        const Tolerances& tol = Tolerances{}) {
  const int N = grid;
  const double step = 2.0 * M_PI / N;
  FiberScanReport rep;
  rep.grid = N;

  std::vector<double> psi(std::size_t(N), 0.0);
  for (int i = 0; i < N; ++i) psi[std::size_t(i)] = model.normal_angle(i * step);

  auto g = [&](int i, int j) {
    return detail::wrap_angle(psi[std::size_t(i % N)] - psi[std::size_t(j % N)]);
  };
  // sign of the divided difference A; on the diagonal the limit is psi'
  auto sign_A = [&](int i, int j) -> int {
    i %= N;
    j %= N;
    if (i == j) {
      double d = detail::wrap_angle(psi[std::size_t((i + 1) % N)] - psi[std::size_t((i - 1 + N) % N)]);
      return d >= 0.0 ? +1 : -1;
    }
    double dphi = detail::wrap_angle((i - j) * step);
    return (g(i, j) >= 0.0 ? +1 : -1) * (dphi >= 0.0 ? +1 : -1);
  };
  // exclude the wrap branch cuts of either factor (far from both loci)
  auto bad = [&](int i, int j) {
    double dphi = std::abs(detail::wrap_angle((i - j) * step));
    double dpsi = std::abs(g(i, j));
    return dphi > 2.6 || dpsi > 2.6;
  };
  // does g pass the value pi (mod 2pi) between two nodes?
  auto crosses_pi = [&](double ga, double gb) {
    double d = detail::wrap_angle(gb - ga);
    double h0 = detail::wrap_angle(ga - M_PI);
    return (h0 <= 0.0 && 0.0 <= h0 + d) || (h0 + d <= 0.0 && 0.0 <= h0);
  };

  std::vector<char> iso_mask(std::size_t(N) * std::size_t(N), 0);
  std::vector<char> anti_mask(std::size_t(N) * std::size_t(N), 0);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const int i1 = (i + 1) % N, j1 = (j + 1) % N;
      if (!(bad(i, j) || bad(i1, j) || bad(i, j1) || bad(i1, j1))) {
        int s00 = sign_A(i, j), s10 = sign_A(i1, j), s01 = sign_A(i, j1), s11 = sign_A(i1, j1);
        int lo = std::min({s00, s10, s01, s11}), hi = std::max({s00, s10, s01, s11});
        if (lo < 0 && hi > 0) iso_mask[std::size_t(i * N + j)] = 1;
      }
      double g00 = g(i, j), g10 = g(i1, j), g01 = g(i, j1), g11 = g(i1, j1);
      int cr = int(crosses_pi(g00, g10)) + int(crosses_pi(g10, g11)) + int(crosses_pi(g11, g01)) +
               int(crosses_pi(g01, g00));
      if (cr >= 2) anti_mask[std::size_t(i * N + j)] = 1;
    }

  // signed crossings of the locus with the grid line {phi1 = i0*step}
  // (a phi2-cycle) give the phi1-winding; rows give the phi2-winding.
  // Iso crossings carry the direction of A's sign change, anti crossings the
  // direction in which g passes pi; both are orientation-consistent along a
  // component, so the absolute sum is the winding magnitude.
  auto windings = [&](const std::vector<char>& mask, const std::vector<std::size_t>& comp,
                      bool anti) {
    std::vector<char> in(mask.size(), 0);
    for (std::size_t c : comp) in[c] = 1;
    auto cell_in = [&](int ci, int cj) { return in[std::size_t(((ci + N) % N) * N + (cj + N) % N)] != 0; };
    auto best_count = [&](bool column) {
      // majority vote over several parallel lines to dodge tangencies
      std::vector<int> counts;
      for (int l = 0; l < N; l += std::max(1, N / 16)) {
        int sum = 0;
        bool touched = false;
        for (int m = 0; m < N; ++m) {
          int ia = column ? l : m, ja = column ? m : l;
          int ib = column ? l : m + 1, jb = column ? m + 1 : l;
          // node edge (ia,ja)-(ib,jb) lies on the line; adjacent cells:
          bool adj = column ? (cell_in(l - 1, m) || cell_in(l, m)) : (cell_in(m, l - 1) || cell_in(m, l));
          if (!adj) continue;
          touched = true;
          if (anti) {
            double ga = g(ia, ja), gb = g(ib, jb);
            if (crosses_pi(ga, gb)) sum += detail::wrap_angle(gb - ga) >= 0.0 ? +1 : -1;
          } else {
            if (bad(ia, ja) || bad(ib, jb)) continue;
            int sa = sign_A(ia, ja), sb = sign_A(ib, jb);
            if (sa != sb) sum += sb > sa ? +1 : -1;
          }
        }
        if (touched) counts.push_back(std::abs(sum));
      }
      if (counts.empty()) return 0;
      std::sort(counts.begin(), counts.end());
      return counts[counts.size() / 2];
    };
    return std::array<int, 2>{best_count(true), best_count(false)};
  };

  auto emit = [&](const std::vector<char>& mask, Flavor flavor) {
    for (auto& comp : detail::torus_cell_components(mask, N)) {
      FiberComponent fc;
      fc.flavor = flavor;
      fc.cell_count = comp.size();
      std::sort(comp.begin(), comp.end());
      for (std::size_t c : comp) {
        int i = int(c) / N, j = int(c) % N;
        int dd = std::min((i - j + N) % N, (j - i + N) % N);
        if (dd <= 1) fc.touches_diagonal = true;
        fc.points.push_back({(i + 0.5) * step, (j + 0.5) * step});
      }
      auto w = windings(mask, comp, flavor == Flavor::Anti);
      fc.winding1 = w[0];
      fc.winding2 = w[1];
      if (flavor == Flavor::Iso) ++rep.iso_components;
      else ++rep.anti_components;
      rep.components.push_back(std::move(fc));
    }
  };
  emit(iso_mask, Flavor::Iso);
  emit(anti_mask, Flavor::Anti);

  // inflection angles: zeros of psi' on the fiber, refined by bisection
  auto dpsi = [&](double phi) {
    const double h = 1e-5;
    return detail::wrap_angle(model.normal_angle(phi + h) - model.normal_angle(phi - h)) / (2.0 * h);
  };
  const int M = 720;
  for (int i = 0; i < M; ++i) {
    double a = i * 2.0 * M_PI / M, b = (i + 1) * 2.0 * M_PI / M;
    double fa = dpsi(a), fb = dpsi(b);
    if (fa == 0.0 || fa * fb >= 0.0) continue;
    for (int it = 0; it < 60; ++it) {
      double m = 0.5 * (a + b), fm = dpsi(m);
      if (fa * fm <= 0.0) { b = m; fb = fm; }
      else { a = m; fa = fm; }
    }
    double phi = 0.5 * (a + b);
    rep.inflection_angles.push_back(phi);
    CertifyResult cr = certify_level_point(*model.H, model.fiber_point(phi), tol);
    rep.inflection_orders.push_back(cr.ok() ? inflection_order(*model.H, *cr, cfg) : -1);
  }

  // spot-check flavors with the order-1 homopodal solver on a few cells of
  // each component (skipping the near-diagonal band, where the solver's
  // collapse guard triggers by design)
  for (const FiberComponent& fc : rep.components) {
    int tried = 0;
    for (std::size_t s = 0; s < fc.points.size() && tried < 3; s += std::max<std::size_t>(1, fc.points.size() / 5)) {
      double phi1 = fc.points[s][0], phi2 = fc.points[s][1];
      if (std::abs(detail::wrap_angle(phi1 - phi2)) < 0.3) continue;
      CertifyResult a = certify_level_point(*model.H, model.fiber_point(phi1), tol);
      CertifyResult b = certify_level_point(*model.H, model.fiber_point(phi2), tol);
      if (!a.ok() || !b.ok()) continue;
      ++tried;
      SolveReport sr = solve_homopodal(*model.H, *a, *b, 1, cfg, tol);
      if (sr.status != SolveStatus::Converged) continue;
      ++rep.solver_checked;
      if (sr.pair->flavor == fc.flavor) ++rep.solver_agreed;
    }
  }
  return rep;
}

}  // namespace podex
