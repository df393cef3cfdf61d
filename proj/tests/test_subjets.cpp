#include <catch_amalgamated.hpp>

#include <cmath>

#include "podex/subjets.hpp"

using namespace podex;

namespace {

LevelPoint certified(const ExprHamiltonian& H, PhasePoint x) {
  CertifyResult cr = certify_level_point(H, std::move(x));
  REQUIRE(cr.ok());
  return *cr;
}

CurveJet line_jet(int axis, double base, std::vector<Vec> coeffs, int k) {
  CurveJet j;
  j.axis = axis;
  j.base = base;
  j.coeffs = std::move(coeffs);
  j.k = k;
  j.orientation = +1;
  j.axis_margin = 1.0;
  return j;
}

}  // namespace

TEST_CASE("graph jet of a uniformly accelerated orbit matches the closed form") {
  // H = |p|^2/2 + q1 - 1/2: base curve q1 = 0.6 t - t^2/2, q2 = 0.8 t.
  // Over the q2 axis: q1(x) = 0.75 x - x^2 / 1.28.
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 + q1 - 1/2", 2);
  LevelPoint lp = certified(H, {{0.0, 0.0}, {0.6, 0.8}});
  CurveJet j = project_jet(H, lp, 4);
  CHECK(j.axis == 1);  // |0.8| > |0.6|
  CHECK(j.base == Catch::Approx(0.0).margin(1e-12));
  CHECK(j.orientation == 1);
  CHECK(j.ambient_dim() == 2);
  CHECK(j.coordinate_count() == 1 + 1 * 5);
  CHECK(j.coeffs[0][0] == Catch::Approx(0.0).margin(1e-10));
  CHECK(j.coeffs[1][0] == Catch::Approx(0.75).margin(1e-9));
  CHECK(j.coeffs[2][0] == Catch::Approx(-2.0 / 1.28).margin(1e-8));
  CHECK(j.coeffs[3][0] == Catch::Approx(0.0).margin(1e-7));
  CHECK(j.coeffs[4][0] == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("flat-metric orbits project to straight-line jets") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2 + p3^2)/2 - 1/2", 3);
  LevelPoint lp = certified(H, {{0.1, -0.2, 0.3}, {0.9, 0.3, -0.3082763}});
  CurveJet j = project_jet(H, lp, 5);
  CHECK(j.axis == 0);
  for (int r = 2; r <= 5; ++r)
    for (double c : j.coeffs[std::size_t(r)]) CHECK(std::abs(c) <= 1e-8);
  CHECK(j.coeffs[1][0] == Catch::Approx(0.3 / 0.9).margin(1e-9));
}

TEST_CASE("axis selection takes the largest velocity with lowest-index ties") {
  CHECK(select_axis({0.2, -0.9, 0.5}) == 1);
  CHECK(select_axis({0.7, -0.7}) == 0);
  CHECK(select_axis({0.0, 0.3, 0.3}) == 1);
}

TEST_CASE("graph projection refuses an axis the curve is not graph-like over") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint lp = certified(H, {{0.0, 0.0}, {0.999, 0.0447}});
  CHECK_THROWS_AS(project_jet(H, lp, 3, JetConfig{}, 1), ChartMismatchError);
  CHECK_NOTHROW(project_jet(H, lp, 3, JetConfig{}, 0));
}

TEST_CASE("orientation tracks the sign of the axis velocity") {
  auto H = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint fwd = certified(H, {{0.0, 0.0}, {0.8, 0.6}});
  LevelPoint rev = certified(H, {{0.0, 0.0}, {-0.8, -0.6}});
  CHECK(project_jet(H, fwd, 2).orientation == 1);
  CHECK(project_jet(H, rev, 2).orientation == -1);
}

TEST_CASE("reprojection to another axis is exact for polynomial germs") {
  auto H = ExprHamiltonian::parse("(1 + 0.3*sin(q1))*(p1^2 + p2^2)/2 - 1/2", 2);
  LevelPoint lp = certified(H, {{0.4, -0.1}, {0.7, 0.65}});
  CurveJet j0 = project_jet(H, lp, 4, JetConfig{}, 0);
  CurveJet j1 = project_jet(H, lp, 4, JetConfig{}, 1);
  CurveJet j0to1 = reproject_jet(j0, 1);
  CHECK(j0to1.axis == 1);
  CHECK(j0to1.base == Catch::Approx(j1.base).margin(1e-10));
  for (int r = 0; r <= 4; ++r)
    CHECK(j0to1.coeffs[std::size_t(r)][0] ==
          Catch::Approx(j1.coeffs[std::size_t(r)][0]).margin(1e-6 * jet_scale(j1, j1, r)));
  // roundtrip back to the original axis
  CurveJet back = reproject_jet(j0to1, 0);
  for (int r = 0; r <= 4; ++r)
    CHECK(back.coeffs[std::size_t(r)][0] ==
          Catch::Approx(j0.coeffs[std::size_t(r)][0]).margin(1e-6 * jet_scale(j0, j0, r)));
}

TEST_CASE("tangency order counts matched derivatives") {
  // all jets: graphs over axis 0 in the plane, k = 4
  auto J = [](double y, double dy, double d2, double d3) {
    return line_jet(0, 0.0, {Vec{y}, Vec{dy}, Vec{d2}, Vec{d3}, Vec{0.0}}, 4);
  };
  CurveJet base = J(0.0, 0.5, 1.0, -2.0);
  CHECK(tangency_order(base, J(0.3, 0.5, 1.0, -2.0), 4, 1e-7) == -1);  // disjoint
  CHECK(tangency_order(base, J(0.0, 0.9, 1.0, -2.0), 4, 1e-7) == 1);   // transverse
  CHECK(tangency_order(base, J(0.0, 0.5, 1.4, -2.0), 4, 1e-7) == 2);
  CHECK(tangency_order(base, J(0.0, 0.5, 1.0, -1.0), 4, 1e-7) == 3);
  CHECK(tangency_order(base, base, 4, 1e-7) == kTangencyTop);
  // k_max truncates what is compared
  CHECK(tangency_order(base, J(0.0, 0.5, 1.0, -1.0), 2, 1e-7) == kTangencyTop);
  CurveJet other_axis = line_jet(1, 0.0, base.coeffs, 4);
  CHECK_THROWS_AS(tangency_order(base, other_axis, 4, 1e-7), ChartMismatchError);
}

TEST_CASE("tangency order is tolerance-relative, not absolute") {
  // coefficients of size 1e4 differing by 1e-4 are equal at rtol 1e-7
  CurveJet a = line_jet(0, 0.0, {Vec{0.0}, Vec{1e4}, Vec{0.0}}, 2);
  CurveJet b = line_jet(0, 0.0, {Vec{0.0}, Vec{1e4 + 1e-4}, Vec{1.0}}, 2);
  CHECK(tangency_order(a, b, 2, 1e-7) == 2);
}

TEST_CASE("cross-Hamiltonian jets meet at exactly second order when built to") {
  // same point, same unit velocity; flat line vs curved-metric orbit
  auto Hf = ExprHamiltonian::parse("(p1^2 + p2^2)/2 - 1/2", 2);
  auto Hc = ExprHamiltonian::parse("(1 + 0.4*sin(q2))*(p1^2 + p2^2)/2 - 1/2", 2);
  Vec q0{0.0, 0.0};
  LevelPoint lf = certified(Hf, {q0, {1.0, 0.0}});
  LevelPoint lc = certified(Hc, {q0, {1.0, 0.0}});
  CurveJet jf = project_jet(Hf, lf, 4, JetConfig{}, 0);
  CurveJet jc = project_jet(Hc, lc, 4, JetConfig{}, 0);
  int ord = tangency_order(jf, jc, 4, 1e-7);
  CHECK(ord == 2);
}

TEST_CASE("isolation radius separates transverse lines over the whole window") {
  CurveJet a = line_jet(0, 0.0, {Vec{0.0}, Vec{0.0}, Vec{0.0}}, 2);
  CurveJet b = line_jet(0, 0.0, {Vec{0.0}, Vec{0.5}, Vec{0.0}}, 2);
  IsolationResult iso = isolation_radius(a, b, 1, 0.0, 0.4);
  CHECK(iso.eps == Catch::Approx(0.4));
  CHECK_FALSE(iso.small_eps_warning);
}

TEST_CASE("isolation radius shrinks with the remainder bound and stays valid") {
  // y = 0 vs y = x^2: order-2 contact, generous third-derivative bound
  CurveJet a = line_jet(0, 0.0, {Vec{0.0}, Vec{0.0}, Vec{0.0}}, 2);
  CurveJet b = line_jet(0, 0.0, {Vec{0.0}, Vec{0.0}, Vec{2.0}}, 2);
  double M = 3.0;
  IsolationResult iso = isolation_radius(a, b, 2, M, 1.0);
  CHECK(iso.eps > 0.0);
  // oracle: any pair of graphs with matching 2-jets and third derivative
  // bounded by M differs by at least x^2 - 2 M |x|^3 / 6 > 0 on (0, eps]
  for (int g = 1; g <= 10000; ++g) {
    double x = iso.eps * double(g) / 10000.0;
    CHECK(x * x - 2.0 * M * x * x * x / 6.0 > 0.0);
  }
  IsolationResult tighter = isolation_radius(a, b, 2, 10.0 * M, 1.0);
  CHECK(tighter.eps < iso.eps);
}

TEST_CASE("isolation radius warns when the chart margin degenerates") {
  CurveJet a = line_jet(0, 0.0, {Vec{0.0}, Vec{0.0}}, 1);
  CurveJet b = line_jet(0, 0.0, {Vec{0.0}, Vec{0.3}}, 1);
  a.axis_margin = b.axis_margin = 0.01;
  IsolationResult iso = isolation_radius(a, b, 1, 0.0, 0.5);
  CHECK(iso.small_eps_warning);
}
