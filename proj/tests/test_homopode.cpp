#include <catch_amalgamated.hpp>

#include <cmath>

#include "podex/homopode.hpp"

using namespace podex;

namespace {

LevelPoint certified(const ExprHamiltonian& H, PhasePoint x) {
  Tolerances tol;
  tol.capture_radius = 0.2;  // seeds below are only roughly on the level set
  CertifyResult cr = certify_level_point(H, std::move(x), tol);
  REQUIRE(cr.ok());
  return *cr;
}

LevelPoint velocity_stub(Vec v) {
  LevelPoint lp;
  lp.base_velocity = std::move(v);
  return lp;
}

}  // namespace

TEST_CASE("residual has dimension kn + n - k and vanishes on antipodal pairs") {
  // a reversible (p-even) metric: (q, p) and (q, -p) trace the same base
  // curve, so they are homopodal to every order
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1))*(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint a = certified(H, {{0.3, -0.1}, {0.8, 0.5}});
  LevelPoint b = certified(H, {{0.3, -0.1}, {-0.8, -0.5}});
  for (int k = 1; k <= 4; ++k) {
    Vec r = homopodal_residual(H, a, b, k);
    CHECK(r.size() == 2 + std::size_t(k) * 1);
    CHECK(norm(r) <= 1e-6);
  }
  auto H3 = ExprHamiltonian::parse("(p1^2 + p2^2 + p3^2)/2 - 1/2", 3);
  LevelPoint a3 = certified(H3, {{0.0, 0.0, 0.0}, {0.6, 0.48, 0.64}});
  LevelPoint b3 = certified(H3, {{0.0, 0.0, 0.0}, {-0.6, -0.48, -0.64}});
  Vec r3 = homopodal_residual(H3, a3, b3, 2);
  CHECK(r3.size() == 3 + 2 * 2);
  CHECK(norm(r3) <= 1e-7);
}

TEST_CASE("residual separates base points and directions") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint a = certified(H, {{0.0, 0.0}, {1.0, 0.0}});
  LevelPoint off_base = certified(H, {{0.4, 0.0}, {-1.0, 0.0}});
  Vec r1 = homopodal_residual(H, a, off_base, 1);
  CHECK(std::abs(r1[0]) == Catch::Approx(0.4));
  LevelPoint off_dir = certified(H, {{0.0, 0.0}, {0.8, 0.6}});
  Vec r2 = homopodal_residual(H, a, off_dir, 1);
  CHECK(std::abs(r2[2]) == Catch::Approx(0.75));  // slope gap 0 vs 0.6/0.8
}

TEST_CASE("flavor classification keys on the base-velocity direction") {
  LevelPoint a = velocity_stub({0.8, 0.6});
  CHECK(classify_flavor(a, velocity_stub({0.4, 0.3})) == Flavor::Iso);
  CHECK(classify_flavor(a, velocity_stub({-0.8, -0.6})) == Flavor::Anti);
  CHECK_FALSE(classify_flavor(a, velocity_stub({0.6, 0.8})).has_value());
}

TEST_CASE("solver converges from a perturbed antipodal seed") {
  auto H = ExprHamiltonian::parse("(1 + 0.2*sin(q1 + q2))*(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint s1 = certified(H, {{0.30, -0.10}, {0.80, 0.50}});
  LevelPoint s2 = certified(H, {{0.34, -0.05}, {-0.76, -0.55}});
  SolveReport rep = solve_homopodal(H, s1, s2, 2);
  REQUIRE(rep.status == SolveStatus::Converged);
  const HomopodalPair& p = *rep.pair;
  CHECK(p.residual_norm <= 1e-9);
  // independent of the residual: base points coincide, velocities anti-align
  CHECK(norm(p.x1.point.q - p.x2.point.q) <= 1e-7);
  const Vec &v1 = p.x1.base_velocity, &v2 = p.x2.base_velocity;
  double cosang = dot(v1, v2) / (norm(v1) * norm(v2));
  CHECK(cosang == Catch::Approx(-1.0).margin(1e-7));
  CHECK(p.flavor == Flavor::Anti);
  // both endpoints remain certified on the level set
  CHECK(p.x1.energy_residual <= 1e-10);
  CHECK(p.x2.energy_residual <= 1e-10);
  // residual history is monotonically improving at the accepted steps
  for (std::size_t i = 1; i < rep.residual_history.size(); ++i)
    CHECK(rep.residual_history[i] < rep.residual_history[i - 1]);
}

TEST_CASE("solver reports diagonal collapse for nearly equal seeds") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint s1 = certified(H, {{0.1, 0.2}, {1.0, 0.0}});
  LevelPoint s2 = certified(H, {{0.1, 0.2}, {0.9999, 0.0001}});
  SolveReport rep = solve_homopodal(H, s1, s2, 1);
  CHECK(rep.status == SolveStatus::CollapseToDiagonal);
}

TEST_CASE("jacobian refresh budget is honored") {
  auto H = ExprHamiltonian::parse("(1 + 0.2*sin(q1 + q2))*(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint s1 = certified(H, {{0.30, -0.10}, {0.80, 0.50}});
  LevelPoint s2 = certified(H, {{0.34, -0.05}, {-0.76, -0.55}});
  HomopodeConfig starved;
  starved.max_jacobian_refresh = 0;
  SolveReport rep = solve_homopodal(H, s1, s2, 2, starved);
  CHECK(rep.status == SolveStatus::NoConvergence);
}

TEST_CASE("antipodal pairs of a reversible metric sit on a 2n-1 dimensional set") {
  // the antipodal involution embeds all of Sigma (dim 3) into the order-k
  // homopodal set for every k, so the estimated dimension stays 3
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1))*(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint a = certified(H, {{0.3, -0.1}, {0.8, 0.5}});
  LevelPoint b = certified(H, {{0.3, -0.1}, {-0.8, -0.5}});
  SolveReport rep = solve_homopodal(H, a, b, 1);
  REQUIRE(rep.status == SolveStatus::Converged);
  for (int k : {1, 2}) {
    HomopodalPair pair = *rep.pair;
    pair.k = k;
    estimate_local_dimension(H, pair);
    REQUIRE(pair.est_dim.has_value());
    CHECK(*pair.est_dim == 3);
  }
}

TEST_CASE("inflection order is the fiber kernel dimension") {
  auto flat = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint a = certified(flat, {{0.0, 0.0}, {1.0, 0.0}});
  CHECK(inflection_order(flat, a) == 0);
  // quartic fiber direction: d^2H/dp2^2 = 3 p2^2 vanishes at p2 = 0
  auto quartic = ExprHamiltonian::parse("p1^2/2 + p2^4/4 - 1/2", 2);
  LevelPoint b = certified(quartic, {{0.0, 0.0}, {1.0, 0.0}});
  CHECK(inflection_order(quartic, b) == 1);
}

TEST_CASE("halton sequence is deterministic, in range, and seed-offset") {
  HaltonSequence h1(3, 0), h2(3, 0), h3(3, 5);
  Vec a = h1.next();
  CHECK(a[0] == Catch::Approx(0.28125));  // base-2 radical inverse of 18
  CHECK(h2.next() == a);
  for (int i = 0; i < 50; ++i) {
    Vec x = h1.next(), y = h2.next();
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(x[d] >= 0.0);
      CHECK(x[d] < 1.0);
    }
    CHECK(x == y);
  }
  CHECK(h3.next() != a);
}

TEST_CASE("scans find deduplicated antipodal pairs and are reproducible") {
  auto H = ExprHamiltonian::parse("(1 + 0.2*sin(q1 + q2))*(p1^2 + p2^2)/2 - 1/2", 2);
  ScanConfig sc;
  sc.box.q_lo = {-0.5, -0.5};
  sc.box.q_hi = {0.5, 0.5};
  sc.box.p_lo = {-1.2, -1.2};
  sc.box.p_hi = {1.2, 1.2};
  sc.budget = 60;
  sc.seed = 3;
  ScanReport rep = scan_homopodal(H, 1, sc);
  CHECK(rep.seeds_tried == 60);
  CHECK(rep.seeds_tried >= rep.rejected_seeds + rep.not_converged + rep.collapsed_to_diagonal);
  REQUIRE(!rep.pairs.empty());
  for (const HomopodalPair& p : rep.pairs) {
    CHECK(p.residual_norm <= 1e-9);
    CHECK(norm(p.x1.point.q - p.x2.point.q) <= 1e-7);
    CHECK(p.flavor != Flavor::Undefined);
    REQUIRE(p.est_dim.has_value());
    CHECK(*p.est_dim == 3);
  }
  // deduplication: no two reported pairs within dedup_eps, counting the swap
  for (std::size_t i = 0; i < rep.pairs.size(); ++i)
    for (std::size_t j = i + 1; j < rep.pairs.size(); ++j) {
      const auto &a = rep.pairs[i], &b = rep.pairs[j];
      double d12 = phase_distance(a.x1.point, b.x1.point) + phase_distance(a.x2.point, b.x2.point);
      double d21 = phase_distance(a.x1.point, b.x2.point) + phase_distance(a.x2.point, b.x1.point);
      CHECK(std::min(d12, d21) >= 1e-4);
    }
  // pairs arrive sorted by the first point's coordinates
  for (std::size_t i = 1; i < rep.pairs.size(); ++i)
    CHECK(rep.pairs[i - 1].x1.point.flat() <= rep.pairs[i].x1.point.flat());
  // byte-for-byte reproducibility of a rerun
  ScanReport again = scan_homopodal(H, 1, sc);
  REQUIRE(again.pairs.size() == rep.pairs.size());
  for (std::size_t i = 0; i < rep.pairs.size(); ++i)
    CHECK(phase_distance(again.pairs[i].x1.point, rep.pairs[i].x1.point) == 0.0);
}
