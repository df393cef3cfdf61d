#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "podex/flow.hpp"
#include "podex/hamsys.hpp"

using namespace podex;

TEST_CASE("certify accepts on-level submersive points and reports residual") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  CertifyResult cr = certify_level_point(H, {{0.3, -0.2}, {1.0, 0.0}});
  REQUIRE(cr.ok());
  CHECK(cr->energy_residual <= 1e-10);
  CHECK(cr->base_velocity[0] == Catch::Approx(1.0));
  CHECK(cr->xh[0] == Catch::Approx(1.0));
  CHECK(cr->xh[2] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("certify projects nearby points onto the level set") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  // |p| = 1.001: inside capture radius, off level by ~1e-3
  CertifyResult cr = certify_level_point(H, {{0.0, 0.0}, {1.001, 0.0}});
  REQUIRE(cr.ok());
  double p2 = cr->point.p[0] * cr->point.p[0] + cr->point.p[1] * cr->point.p[1];
  CHECK(std::abs(p2 - 1.0) <= 1e-9);
  // q untouched up to the gradient direction (flat metric: gradient is fiber-only)
  CHECK(cr->point.q[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("certify rejects far points and vertical tangencies") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  CertifyResult far = certify_level_point(H, {{0.0, 0.0}, {3.0, 0.0}});
  CHECK(far.status == CertifyStatus::OffLevel);
  CHECK(far.residual == Catch::Approx(4.0));

  // dH/dp = 0 at p = 0 although the point is exactly on the level set
  auto W = ExprHamiltonian::parse("p1^2/2 + q1^2/2 - 1/2", 1);
  CertifyResult vt = certify_level_point(W, {{1.0}, {0.0}});
  CHECK(vt.status == CertifyStatus::VerticalTangency);
}

TEST_CASE("derivative tables match hand-computed partials") {
  // H = q1^2 p1 + 3 q1 p1^2
  auto H = ExprHamiltonian::parse("q1^2*p1 + 3*q1*p1^2", 1);
  PhasePoint x{{2.0}, {0.5}};
  auto tab = eval_ham(H, x, 3);
  CHECK(tab.at({0, 0}) == Catch::Approx(2.0 + 1.5));          // 4*0.5 + 3*2*0.25
  CHECK(tab.at({1, 0}) == Catch::Approx(2.0 * 2.0 * 0.5 + 3.0 * 0.25));
  CHECK(tab.at({0, 1}) == Catch::Approx(4.0 + 6.0 * 2.0 * 0.5));
  CHECK(tab.at({1, 1}) == Catch::Approx(2.0 * 2.0 + 6.0 * 0.5));
  CHECK(tab.at({2, 0}) == Catch::Approx(2.0 * 0.5));
  CHECK(tab.at({0, 2}) == Catch::Approx(6.0 * 2.0));
  CHECK(tab.at({2, 1}) == Catch::Approx(2.0));
  CHECK(tab.at({1, 2}) == Catch::Approx(6.0));
  CHECK(tab.at({3, 0}) == 0.0);
  CHECK_THROWS_AS(eval_ham(H, x, 9), std::invalid_argument);  // beyond k_max_derivative
}

TEST_CASE("fiber hessian of a conformal metric is the conformal factor") {
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1))*(p1^2 + p2^2)/2 - 1/2", 2);
  PhasePoint x{{0.7, -0.1}, {0.4, 0.9}};
  Mat h = H.fiber_hessian(x);
  double g = 1.0 + 0.3 * std::sin(0.7);
  CHECK(h[0][0] == Catch::Approx(g));
  CHECK(h[1][1] == Catch::Approx(g));
  CHECK(h[0][1] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("phase taylor matches the hand recurrence for the pendulum") {
  // H = p^2/2 + cos q - E: qdot = p, pdot = sin q, qddot = sin q.
  double q0 = 0.8, p0 = 0.3;
  auto H = ExprHamiltonian::parse("p1^2/2 + cos(q1) - 1", 1);
  Vec x{q0, p0};
  auto s = phase_taylor(H, x, 4);
  CHECK(s[0][0] == Catch::Approx(q0));
  CHECK(s[0][1] == Catch::Approx(p0));
  CHECK(s[0][2] == Catch::Approx(std::sin(q0) / 2.0));
  CHECK(s[0][3] == Catch::Approx(std::cos(q0) * p0 / 6.0));
  CHECK(s[1][1] == Catch::Approx(std::sin(q0)));
  CHECK(s[1][2] == Catch::Approx(std::cos(q0) * p0 / 2.0));
}

TEST_CASE("integrated harmonic orbit matches the closed form everywhere") {
  auto H = ExprHamiltonian::parse("(p1^2 + q1^2)/2 - 1/2", 1);
  CertifyResult cr = certify_level_point(H, {{0.0}, {1.0}});
  REQUIRE(cr.ok());
  Orbit o = integrate(H, *cr, 7.0);
  CHECK(o.max_drift <= 1e-9);
  for (double t : {0.0, 0.37, 1.5, 3.1, 5.9, 6.99}) {
    PhasePoint x = o.eval(t);
    CHECK(x.q[0] == Catch::Approx(std::sin(t)).margin(1e-9));
    CHECK(x.p[0] == Catch::Approx(std::cos(t)).margin(1e-9));
  }
  // samples are certified and time-ordered
  for (std::size_t i = 1; i < o.samples.size(); ++i) {
    CHECK(o.samples[i].first > o.samples[i - 1].first);
    CHECK(o.samples[i].second.energy_residual <= 1e-10);
  }
}

TEST_CASE("backward integration is the time reverse of forward integration") {
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1))*(p1^2 + p2^2)/2 - 1/2", 2);
  CertifyResult cr = certify_level_point(H, {{0.2, 0.1}, {0.95, 0.2}});
  REQUIRE(cr.ok());
  Orbit fwd = integrate(H, *cr, 2.0);
  PhasePoint end = fwd.eval(2.0);
  CertifyResult ce = certify_level_point(H, end);
  REQUIRE(ce.ok());
  Orbit bwd = integrate(H, *ce, -2.0);
  PhasePoint back = bwd.eval(-2.0);
  CHECK(phase_distance(back, cr->point) <= 1e-7);
  CHECK(bwd.t0 == Catch::Approx(-2.0));
  CHECK(bwd.samples.front().first < bwd.samples.back().first);
}

TEST_CASE("finite-time blow-up raises a flow error instead of looping") {
  // H = q^2 p on its zero level through (1, 0): qdot = q^2 blows up at t = 1
  auto H = ExprHamiltonian::parse("q1^2*p1", 1);
  CertifyResult cr = certify_level_point(H, {{1.0}, {0.0}});
  REQUIRE(cr.ok());
  CHECK_THROWS_AS(integrate(H, *cr, 2.0), FlowError);
}

TEST_CASE("orbit csv carries the documented header and all samples") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  CertifyResult cr = certify_level_point(H, {{0.0, 0.0}, {1.0, 0.0}});
  REQUIRE(cr.ok());
  Orbit o = integrate(H, *cr, 1.0);
  std::string csv = orbit_to_csv(o);
  CHECK(csv.rfind("t,q1,q2,p1,p2,energy_residual\n", 0) == 0);
  std::size_t lines = std::size_t(std::count(csv.begin(), csv.end(), '\n'));
  CHECK(lines == o.samples.size() + 1);
}

TEST_CASE("chords of the flat metric are unit-speed straight lines") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  Vec qa{0.0, 0.0}, qb{0.6, -0.8};  // distance exactly 1
  Chord c = shoot_chord(H, qa, qb, Vec{1.0, 0.0}, 0.7);
  REQUIRE(c.converged);
  CHECK(c.duration == Catch::Approx(1.0).margin(1e-6));
  Vec mid = c.orbit.base(c.duration / 2.0);
  CHECK(mid[0] == Catch::Approx(0.3).margin(1e-6));
  CHECK(mid[1] == Catch::Approx(-0.4).margin(1e-6));
  PhasePoint x0 = c.orbit.eval(0.0);
  CHECK(x0.p[0] == Catch::Approx(0.6).margin(1e-6));
  CHECK(x0.p[1] == Catch::Approx(-0.8).margin(1e-6));
}

TEST_CASE("chords on a curved metric land on the target fiber") {
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1) + 0.2*sin(q1 + q2))*(p1^2 + p2^2)/2 - 1/2", 2);
  Vec qa{0.1, -0.2}, qb{0.9, 0.5};
  Vec dir{qb[0] - qa[0], qb[1] - qa[1]};
  double d = norm(dir);
  Chord c = shoot_chord(H, qa, qb, Vec{dir[0] / d, dir[1] / d}, d);
  REQUIRE(c.converged);
  Vec qe = c.orbit.base(c.duration);
  CHECK(qe[0] == Catch::Approx(qb[0]).margin(1e-7));
  CHECK(qe[1] == Catch::Approx(qb[1]).margin(1e-7));
  CHECK(c.orbit.max_drift <= 1e-9);
}

TEST_CASE("series gradient agrees with pointwise gradient along a path") {
  auto H = ExprHamiltonian::parse("sqrt(1 + p1^2 + p2^2)*exp(0.1*sin(q1)) - 1.2", 2);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Series> path;
  for (int i = 0; i < 4; ++i) {
    Series s(4, u(rng));
    s.at(1) = u(rng);
    s.at(2) = u(rng);
    path.push_back(s);
  }
  auto gs = H.gradient_series(path);
  for (double t : {-0.1, 0.0, 0.15}) {
    Vec x(4);
    for (int i = 0; i < 4; ++i) x[std::size_t(i)] = path[std::size_t(i)].eval(t);
    Vec g = H.gradient_flat(x);
    for (int i = 0; i < 4; ++i)
      CHECK(gs[std::size_t(i)].eval(t) == Catch::Approx(g[std::size_t(i)]).margin(1e-5));
  }
}
