#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "podex/linalg.hpp"
#include "podex/subjets.hpp"

namespace podex {

struct HomopodeConfig {
  double solve_tol = 1e-9;
  double diag_margin = 1e-3;
  double rank_tol = 1e-6;
  double ambiguity_factor = 10.0;
  double dedup_eps = 1e-4;
  double fd_step = 1e-6;
  int gn_max_iter = 40;
  int max_jacobian_refresh = 4;  // finite-difference Jacobian budget per solve
  int stagnation_limit = 6;      // give up after this many <10% improvements in a row
  JetConfig jet;
};

enum class Flavor { Iso, Anti, Undefined };

inline std::string flavor_name(Flavor f) {
  switch (f) {
    case Flavor::Iso: return "iso";
    case Flavor::Anti: return "anti";
    default: return "undefined";
  }
}

struct HomopodalPair {
  LevelPoint x1, x2;
  int k = 0;
  Flavor flavor = Flavor::Undefined;
  double residual_norm = 0.0;
  std::optional<int> est_dim;    // empty = not yet estimated
  bool rank_ambiguous = false;
};

/// Residual whose zero set (off the diagonal) is the order-k homopodal set:
/// base-point difference in R^n followed by aligned jet-coefficient
/// differences of orders 1..k in R^{k(n-1)}.  Output dimension kn+n-k.
inline Vec homopodal_residual(const HamiltonianField& H, const LevelPoint& x1,
                              const LevelPoint& x2, int k,
                              const HomopodeConfig& cfg = HomopodeConfig{},
                              const CurveJet* j1_pre = nullptr,
                              const CurveJet* j2raw_pre = nullptr) {
  const std::size_t n = H.n();
  CurveJet j1 = j1_pre ? *j1_pre : project_jet(H, x1, k, cfg.jet);
  JetConfig relaxed = cfg.jet;
  relaxed.axis_margin_frac = 0.02;  // alignment chart; reject only near-vertical
  CurveJet j2raw = j2raw_pre ? *j2raw_pre : project_jet(H, x2, k, relaxed, /*forced_axis=*/-1);
  CurveJet j2 = j2raw.axis == j1.axis ? j2raw : reproject_jet(j2raw, j1.axis, relaxed);
  Vec r;
  r.reserve(n + std::size_t(k) * (n - 1));
  for (std::size_t i = 0; i < n; ++i) r.push_back(x1.point.q[i] - x2.point.q[i]);
  for (int ord = 1; ord <= k; ++ord)
    for (std::size_t c = 0; c < n - 1; ++c)
      r.push_back(j1.coeffs[std::size_t(ord)][c] - j2.coeffs[std::size_t(ord)][c]);
  return r;
}

namespace detail {

/// Orthonormal basis of ker dH at a level point: local coordinates of Sigma.
inline Mat level_tangent_basis(const HamiltonianField& H, const LevelPoint& x) {
  Vec g = H.gradient(x.point);
  return orthogonal_complement(g);  // (2n-1) x 2n
}

inline std::optional<LevelPoint> move_on_level(const HamiltonianField& H, const LevelPoint& x,
                                               const Mat& basis, const Vec& delta,
                                               const Tolerances& tol) {
  Vec xf = x.point.flat();
  for (std::size_t b = 0; b < basis.size(); ++b)
    for (std::size_t i = 0; i < xf.size(); ++i) xf[i] += delta[b] * basis[b][i];
  CertifyResult cr = certify_level_point(H, PhasePoint::from_flat(xf), tol);
  if (!cr.ok()) return std::nullopt;
  return *cr;
}

}  // namespace detail

enum class SolveStatus { Converged, NoConvergence, CollapseToDiagonal, ChartMismatch };

struct SolveReport {
  SolveStatus status = SolveStatus::NoConvergence;
  std::optional<HomopodalPair> pair;
  std::vector<double> residual_history;
  int iterations = 0;
};

/// Least-squares direction scalar for dπ_Q X_H(x1) = s dπ_Q X_H(x2); fails
/// if the base velocities are not parallel within align_tol (relative).
inline std::optional<Flavor> classify_flavor(const LevelPoint& x1, const LevelPoint& x2,
                                             double align_tol = 1e-6) {
  const Vec& v1 = x1.base_velocity;
  const Vec& v2 = x2.base_velocity;
  double s = dot(v1, v2) / dot(v2, v2);
  Vec mis = v1 - s * Vec(v2);
  if (norm(mis) > align_tol * std::max(1.0, norm(v1))) return std::nullopt;
  return s > 0.0 ? Flavor::Iso : Flavor::Anti;
}

/// Finite-difference Jacobian of the homopodal residual over the on-level
/// local coordinates of the pair (dimension residual x 2(2n-1)).
inline std::optional<Mat> homopodal_jacobian(const HamiltonianField& H, const LevelPoint& x1,
                                             const LevelPoint& x2, int k, const Vec& r0,
                                             const HomopodeConfig& cfg, const Tolerances& tol,
                                             double fd_step) {
  const std::size_t nloc = 2 * H.n() - 1;
  Mat b1 = detail::level_tangent_basis(H, x1);
  Mat b2 = detail::level_tangent_basis(H, x2);
  Mat J = zeros(r0.size(), 2 * nloc);
  // the unperturbed side's jet is the same for every column on the other
  // side, so compute each of them once
  CurveJet j1_fix, j2raw_fix;
  JetConfig relaxed = cfg.jet;
  relaxed.axis_margin_frac = 0.02;
  try {
    j1_fix = project_jet(H, x1, k, cfg.jet);
    j2raw_fix = project_jet(H, x2, k, relaxed, /*forced_axis=*/-1);
  } catch (const ChartMismatchError&) {
    return std::nullopt;
  }
  for (std::size_t c = 0; c < 2 * nloc; ++c) {
    Vec d(nloc, 0.0);
    d[c % nloc] = fd_step;
    std::optional<LevelPoint> y1 = c < nloc ? detail::move_on_level(H, x1, b1, d, tol)
                                            : std::optional<LevelPoint>(x1);
    std::optional<LevelPoint> y2 = c < nloc ? std::optional<LevelPoint>(x2)
                                            : detail::move_on_level(H, x2, b2, d, tol);
    if (!y1 || !y2) return std::nullopt;
    Vec r1;
    try {
      r1 = homopodal_residual(H, *y1, *y2, k, cfg, c < nloc ? nullptr : &j1_fix,
                              c < nloc ? &j2raw_fix : nullptr);
    } catch (const ChartMismatchError&) {
      return std::nullopt;
    }
    for (std::size_t i = 0; i < r0.size(); ++i) J[i][c] = (r1[i] - r0[i]) / fd_step;
  }
  return J;
}

/// Damped Gauss-Newton on the homopodal residual over Sigma x Sigma local
/// coordinates.  Both points stay certified on Sigma throughout.
inline SolveReport solve_homopodal(const HamiltonianField& H, LevelPoint x1, LevelPoint x2, int k,
                                   const HomopodeConfig& cfg = HomopodeConfig{},
                                   const Tolerances& tol = Tolerances{}) {
  SolveReport rep;
  const std::size_t nloc = 2 * H.n() - 1;
  Vec r0;
  try {
    r0 = homopodal_residual(H, x1, x2, k, cfg);
  } catch (const ChartMismatchError&) {
    rep.status = SolveStatus::ChartMismatch;
    return rep;
  }
  double rn = norm(r0);
  rep.residual_history.push_back(rn);
  // Broyden-accelerated: the finite-difference Jacobian is by far the most
  // expensive step, so reuse it across iterations with rank-1 secant updates
  // and refresh it only when the search direction stops making progress
  Mat J;
  bool have_j = false, fresh_j = false;
  int stagnant = 0, refreshes = 0;
  for (int it = 0; it < cfg.gn_max_iter; ++it) {
    rep.iterations = it;
    if (phase_distance(x1.point, x2.point) < cfg.diag_margin) {
      rep.status = SolveStatus::CollapseToDiagonal;
      return rep;
    }
    if (rn <= cfg.solve_tol) {
      HomopodalPair pair;
      pair.x1 = x1;
      pair.x2 = x2;
      pair.k = k;
      pair.residual_norm = rn;
      if (k >= 1) {
        auto fl = classify_flavor(x1, x2);
        pair.flavor = fl.value_or(Flavor::Undefined);
      }
      rep.status = SolveStatus::Converged;
      rep.pair = std::move(pair);
      return rep;
    }
    if (!have_j) {
      if (++refreshes > cfg.max_jacobian_refresh) break;  // repeated stalls: no root here
      auto Jn = homopodal_jacobian(H, x1, x2, k, r0, cfg, tol, cfg.fd_step);
      if (!Jn) break;
      J = std::move(*Jn);
      have_j = fresh_j = true;
    }
    Vec step;
    try {
      step = lstsq(J, r0, 1e-12);
    } catch (const std::domain_error&) {
      if (fresh_j) break;
      have_j = false;
      continue;
    }
    bool accepted = false;
    double damp = 1.0;
    for (int bt = 0; bt < 6; ++bt) {
      Vec d1(step.begin(), step.begin() + std::ptrdiff_t(nloc));
      Vec d2(step.begin() + std::ptrdiff_t(nloc), step.end());
      for (double& v : d1) v *= -damp;
      for (double& v : d2) v *= -damp;
      auto y1 = detail::move_on_level(H, x1, detail::level_tangent_basis(H, x1), d1, tol);
      auto y2 = detail::move_on_level(H, x2, detail::level_tangent_basis(H, x2), d2, tol);
      if (y1 && y2) {
        Vec r1;
        bool valid = true;
        try {
          r1 = homopodal_residual(H, *y1, *y2, k, cfg);
        } catch (const ChartMismatchError&) {
          valid = false;
        }
        if (valid && norm(r1) < rn) {
          // secant update J += (dr - J s) s^T / (s.s) with the applied step
          Vec s(step.size());
          for (std::size_t i = 0; i < s.size(); ++i) s[i] = -damp * step[i];
          double ss = dot(s, s);
          if (ss > 0.0) {
            for (std::size_t i = 0; i < J.size(); ++i) {
              double ji = 0.0;
              for (std::size_t c = 0; c < s.size(); ++c) ji += J[i][c] * s[c];
              double coef = (r1[i] - r0[i] - ji) / ss;
              for (std::size_t c = 0; c < s.size(); ++c) J[i][c] += coef * s[c];
            }
          }
          fresh_j = false;
          stagnant = norm(r1) > 0.9 * rn ? stagnant + 1 : 0;
          x1 = *y1;
          x2 = *y2;
          r0 = r1;
          rn = norm(r1);
          rep.residual_history.push_back(rn);
          accepted = true;
          break;
        }
      }
      damp *= 0.5;
    }
    if (!accepted) {
      if (fresh_j) break;  // stalled with an exact Jacobian
      have_j = false;      // stale secant model: refresh and retry
      continue;
    }
    if (stagnant >= cfg.stagnation_limit) break;  // least-squares plateau, no root here
  }
  if (rn <= cfg.solve_tol && phase_distance(x1.point, x2.point) >= cfg.diag_margin) {
    HomopodalPair pair;
    pair.x1 = x1;
    pair.x2 = x2;
    pair.k = k;
    pair.residual_norm = rn;
    if (k >= 1) pair.flavor = classify_flavor(x1, x2).value_or(Flavor::Undefined);
    rep.status = SolveStatus::Converged;
    rep.pair = std::move(pair);
  }
  return rep;
}

/// Numerical local dimension of the homopodal set at a converged pair:
/// 2(2n-1) minus the numerical rank of the residual Jacobian.
inline void estimate_local_dimension(const HamiltonianField& H, HomopodalPair& pair,
                                     const HomopodeConfig& cfg = HomopodeConfig{},
                                     const Tolerances& tol = Tolerances{}) {
  Vec r0 = homopodal_residual(H, pair.x1, pair.x2, pair.k, cfg);
  auto J = homopodal_jacobian(H, pair.x1, pair.x2, pair.k, r0, cfg, tol, cfg.fd_step);
  if (!J) {
    pair.rank_ambiguous = true;
    return;
  }
  Vec sv = singular_values(*J);
  double smax = sv.front();
  double thr = cfg.rank_tol * smax;
  int rank = 0;
  bool ambiguous = false;
  for (double s : sv) {
    if (s > thr) ++rank;
    if (s > thr / cfg.ambiguity_factor && s < thr * cfg.ambiguity_factor) ambiguous = true;
  }
  pair.est_dim = int(2 * (2 * H.n() - 1)) - rank;
  pair.rank_ambiguous = ambiguous;
}

/// dim(ker d_v^2 H ∩ T Sigma) in the fiber: order of the inflection point.
inline int inflection_order(const ExprHamiltonian& H, const LevelPoint& x,
                            const HomopodeConfig& cfg = HomopodeConfig{}) {
  const std::size_t n = H.n();
  Vec g = H.gradient(x.point);
  Vec dvh(g.begin() + std::ptrdiff_t(n), g.end());  // fiber gradient
  Mat V = orthogonal_complement(dvh);               // fiber tangent of Sigma, (n-1) x n
  Mat A = H.fiber_hessian(x.point);
  // restricted bilinear form B = V A V^T
  Mat B = zeros(V.size(), V.size());
  for (std::size_t i = 0; i < V.size(); ++i) {
    Vec Av = matvec(A, V[i]);
    for (std::size_t j = 0; j < V.size(); ++j) B[i][j] = dot(Av, V[j]);
  }
  double scale = 0.0;
  for (const Vec& row : A) for (double v : row) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return int(n - 1);
  Vec sv = singular_values(B);
  int order = 0;
  for (double s : sv)
    if (s <= cfg.rank_tol * scale) ++order;
  return order;
}

/// Halton low-discrepancy sequence in [0,1)^d; `seed` offsets the index so
/// scans are reproducible and decorrelated.
class HaltonSequence {
 public:
  explicit HaltonSequence(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), index_(seed + 17) {}
  Vec next() {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43};
    Vec x(dim_);
    ++index_;
    for (std::size_t d = 0; d < dim_; ++d) {
      std::uint64_t i = index_;
      double f = 1.0, v = 0.0;
      int b = primes[d % (sizeof(primes) / sizeof(primes[0]))];
      while (i > 0) {
        f /= b;
        v += f * double(i % std::uint64_t(b));
        i /= std::uint64_t(b);
      }
      x[d] = v;
    }
    return x;
  }

 private:
  std::size_t dim_;
  std::uint64_t index_;
};

struct ScanBox {
  Vec q_lo, q_hi;  // base box
  Vec p_lo, p_hi;  // covector box (seeds are projected onto Sigma)
};

struct ScanConfig {
  ScanBox box;
  int budget = 1000;
  std::uint64_t seed = 0;
  bool estimate_dims = true;
};

struct ScanReport {
  std::vector<HomopodalPair> pairs;
  int seeds_tried = 0;
  int not_converged = 0;
  int collapsed_to_diagonal = 0;
  int rejected_seeds = 0;
  int k = 0;
};

/// Quasi-random search for off-diagonal order-k homopodal pairs.  Converged
/// pairs are deduplicated by phase-distance clustering and sorted
/// lexicographically so the report does not depend on evaluation order.
inline ScanReport scan_homopodal(const HamiltonianField& H, int k, const ScanConfig& scfg,
                                 const HomopodeConfig& cfg = HomopodeConfig{},
                                 const Tolerances& tol = Tolerances{}) {
  const std::size_t n = H.n();
  ScanReport rep;
  rep.k = k;
  HaltonSequence seq(4 * n, scfg.seed);
  Tolerances seed_tol = tol;
  seed_tol.capture_radius = 1e9;  // seeds may start far from Sigma
  auto sample_point = [&](std::span<const double> u) -> std::optional<LevelPoint> {
    PhasePoint x;
    x.q.resize(n);
    x.p.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      x.q[i] = scfg.box.q_lo[i] + u[i] * (scfg.box.q_hi[i] - scfg.box.q_lo[i]);
      x.p[i] = scfg.box.p_lo[i] + u[n + i] * (scfg.box.p_hi[i] - scfg.box.p_lo[i]);
    }
    CertifyResult cr = certify_level_point(H, x, seed_tol);
    if (!cr.ok()) return std::nullopt;
    return *cr;
  };
  for (int s = 0; s < scfg.budget; ++s) {
    Vec u = seq.next();
    ++rep.seeds_tried;
    auto x1 = sample_point(std::span<const double>(u).subspan(0, 2 * n));
    auto x2 = sample_point(std::span<const double>(u).subspan(2 * n, 2 * n));
    if (!x1 || !x2 || phase_distance(x1->point, x2->point) < cfg.diag_margin) {
      ++rep.rejected_seeds;
      continue;
    }
    SolveReport sr = solve_homopodal(H, *x1, *x2, k, cfg, tol);
    if (sr.status == SolveStatus::Converged) {
      bool duplicate = false;
      for (const HomopodalPair& p : rep.pairs) {
        double d12 = phase_distance(p.x1.point, sr.pair->x1.point) +
                     phase_distance(p.x2.point, sr.pair->x2.point);
        double d21 = phase_distance(p.x1.point, sr.pair->x2.point) +
                     phase_distance(p.x2.point, sr.pair->x1.point);
        if (std::min(d12, d21) < cfg.dedup_eps) { duplicate = true; break; }
      }
      if (!duplicate) {
        if (scfg.estimate_dims) estimate_local_dimension(H, *sr.pair, cfg, tol);
        rep.pairs.push_back(*sr.pair);
      }
    } else if (sr.status == SolveStatus::CollapseToDiagonal) {
      ++rep.collapsed_to_diagonal;
    } else {
      ++rep.not_converged;
    }
  }
  std::sort(rep.pairs.begin(), rep.pairs.end(), [](const HomopodalPair& a, const HomopodalPair& b) {
    Vec fa = a.x1.point.flat(), fb = b.x1.point.flat();
    return fa < fb;
  });
  return rep;
}

}  // namespace podex
