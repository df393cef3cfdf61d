#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "podex/expr.hpp"
#include "podex/linalg.hpp"
#include "podex/mpoly.hpp"
#include "podex/series.hpp"

using namespace podex;

namespace {

Series random_series(std::mt19937& rng, std::size_t order, double a0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Series s(order, a0);
  for (std::size_t i = 1; i <= order; ++i) s.at(i) = u(rng);
  return s;
}

}  // namespace

TEST_CASE("series arithmetic against hand-expanded coefficients") {
  // (1 + t)^2 = 1 + 2t + t^2
  Series a = Series::identity(4, 1.0);
  Series sq = a * a;
  CHECK(sq[0] == Catch::Approx(1.0));
  CHECK(sq[1] == Catch::Approx(2.0));
  CHECK(sq[2] == Catch::Approx(1.0));
  CHECK(sq[3] == 0.0);

  // 1/(1 - t) = 1 + t + t^2 + ...
  Series inv = 1.0 / (1.0 - Series::identity(5, 0.0));
  for (std::size_t i = 0; i <= 5; ++i) CHECK(inv[i] == Catch::Approx(1.0));

  // exp(t) coefficients 1/i!
  Series e = exp(Series::identity(6, 0.0));
  double fact = 1.0;
  for (std::size_t i = 1; i <= 6; ++i) {
    fact *= double(i);
    CHECK(e[i] == Catch::Approx(1.0 / fact).margin(1e-15));
  }
}

TEST_CASE("series transcendental identities on random inputs") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    Series a = random_series(rng, 6, 0.3);

    Series s, c;
    sincos(a, s, c);
    Series one = s * s + c * c;
    CHECK(one[0] == Catch::Approx(1.0).margin(1e-13));
    for (std::size_t i = 1; i <= 6; ++i) CHECK(one[i] == Catch::Approx(0.0).margin(1e-12));

    // log(exp(a)) = a
    Series le = log(exp(a));
    for (std::size_t i = 0; i <= 6; ++i) CHECK(le[i] == Catch::Approx(a[i]).margin(1e-12));

    // sqrt(a)^2 = a for positive constant term
    Series a_pos = a;
    a_pos.at(0) = 1.7;
    Series r = sqrt(a_pos);
    Series r2 = r * r;
    for (std::size_t i = 0; i <= 6; ++i) CHECK(r2[i] == Catch::Approx(a_pos[i]).margin(1e-12));
  }
}

TEST_CASE("series derivative matches coefficient shift") {
  std::mt19937 rng(7);
  Series a = random_series(rng, 6, 0.2);
  Series d = exp(a).derivative();
  Series ref = a.derivative() * exp(a);  // chain rule
  for (std::size_t i = 0; i + 1 <= 5; ++i) CHECK(d[i] == Catch::Approx(ref[i]).margin(1e-12));
}

TEST_CASE("series composition and reversion are mutually inverse") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Series b = random_series(rng, 6, 0.0);
    b.at(1) = 1.0 + 0.5 * std::abs(b[1]);  // invertible linear coefficient
    Series binv = revert(b);
    Series id = compose(b, binv);
    CHECK(id[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(id[1] == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t i = 2; i <= 6; ++i) CHECK(id[i] == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("series truncation consistency across orders") {
  std::mt19937 rng(3);
  Series a6 = random_series(rng, 8, 0.4);
  Series a_small(6);
  for (std::size_t i = 0; i <= 6; ++i) a_small.at(i) = a6[i];
  Series big = exp(a6), small = exp(a_small);
  for (std::size_t i = 0; i <= 6; ++i) CHECK(small[i] == Catch::Approx(big[i]).margin(1e-13));
}

namespace {
void set_coeff(MPoly& p, const std::vector<int>& e, double v) {
  p.raw(p.basis().rank.at(e)) = v;
}
}  // namespace

TEST_CASE("multivariate polynomials evaluate and multiply correctly") {
  // f = 1 + 2 x0 + 3 x1^2 over 2 vars
  MPoly f(2, 4);
  set_coeff(f, {0, 0}, 1.0);
  set_coeff(f, {1, 0}, 2.0);
  set_coeff(f, {0, 2}, 3.0);
  std::vector<double> x{0.5, -1.0};
  CHECK(f.eval(x) == Catch::Approx(1.0 + 1.0 + 3.0));
  MPoly f2 = f * f;
  CHECK(f2.eval(x) == Catch::Approx(25.0));
}

TEST_CASE("polynomial map inversion composes to the identity") {
  // G(x) = (x0 + 0.1 x1^2, x1 - 0.2 x0 x1)
  std::vector<MPoly> G;
  MPoly g0(2, 4), g1(2, 4);
  set_coeff(g0, {1, 0}, 1.0);
  set_coeff(g0, {0, 2}, 0.1);
  set_coeff(g1, {0, 1}, 1.0);
  set_coeff(g1, {1, 1}, -0.2);
  G.push_back(g0);
  G.push_back(g1);
  std::vector<MPoly> Gi = invert_poly_map(G);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x{u(rng), u(rng)};
    std::vector<double> y(2), z(2);
    for (int i = 0; i < 2; ++i) y[std::size_t(i)] = G[std::size_t(i)].eval(x);
    for (int i = 0; i < 2; ++i) z[std::size_t(i)] = Gi[std::size_t(i)].eval(y);
    CHECK(z[0] == Catch::Approx(x[0]).margin(1e-8));
    CHECK(z[1] == Catch::Approx(x[1]).margin(1e-8));
  }
}

TEST_CASE("expression parsing evaluates the documented grammar") {
  auto vocab = phase_vocab(2);
  Expr e = parse_expr("(p1^2 + p2^2)/2 - 1/2", vocab);
  Vec x{0.0, 0.0, 1.0, 0.0};  // q1 q2 p1 p2
  CHECK(e.eval(x) == Catch::Approx(0.0).margin(1e-15));

  Expr trig = parse_expr("sin(q1)*p1 + cos(q2)", vocab);
  Vec y{0.5, 0.25, 2.0, 0.0};
  CHECK(trig.eval(y) == Catch::Approx(std::sin(0.5) * 2.0 + std::cos(0.25)));
}

TEST_CASE("parse errors carry the offending position") {
  auto vocab = phase_vocab(2);
  try {
    parse_expr("p1 + + q1", vocab);
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.position() == 5);
  }
  CHECK_THROWS_AS(parse_expr("p3 + 1", vocab), ParseError);   // unknown variable
  CHECK_THROWS_AS(parse_expr("sin(q1", vocab), ParseError);   // unbalanced paren
  CHECK_THROWS_AS(parse_expr("q1 + 1 x", vocab), ParseError); // trailing input
}

TEST_CASE("evaluation domain errors name the offending subexpression") {
  auto vocab = phase_vocab(1);
  Expr e = parse_expr("log(q1)", vocab);
  Vec x{-1.0, 0.0};
  try {
    e.eval(x);
    FAIL("expected EvalDomainError");
  } catch (const EvalDomainError& err) {
    CHECK(std::string(err.what()).find("log") != std::string::npos);
  }
  Expr s = parse_expr("sqrt(p1 - 2)", vocab);
  Vec y{0.0, 1.0};
  CHECK_THROWS_AS(s.eval(y), EvalDomainError);
}

TEST_CASE("symbolic differentiation matches central finite differences") {
  auto vocab = phase_vocab(2);
  std::vector<Expr> corpus{
      parse_expr("(p1^2 + p2^2)/2 - 1/2", vocab),
      parse_expr("sin(q1)*p1 + cos(q2)*p2^2", vocab),
      parse_expr("sqrt(p1^2 + p2^2 + 1) + exp(0.1*q1*p2)", vocab),
      parse_expr("log(2 + sin(q1 + q2))*p1", vocab),
  };
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const double h = 1e-5;
  for (const Expr& e : corpus) {
    for (int var = 0; var < 4; ++var) {
      Expr d = e.diff(var);
      for (int trial = 0; trial < 10; ++trial) {
        Vec x{u(rng), u(rng), u(rng), u(rng)};
        Vec xp = x, xm = x;
        xp[std::size_t(var)] += h;
        xm[std::size_t(var)] -= h;
        double fd = (e.eval(xp) - e.eval(xm)) / (2.0 * h);
        double ex = d.eval(x);
        CHECK(std::abs(ex - fd) <= 1e-5 * std::max(1.0, std::abs(ex)));
      }
    }
  }
}

TEST_CASE("higher-order derivatives stay exact under iterated diff") {
  // each order is validated by finite differences of the exact previous order
  auto vocab = phase_vocab(1);
  Expr e = parse_expr("exp(0.3*q1)*sin(p1) + q1^3*p1", vocab);
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  const double h = 1e-5;
  Expr d = e;
  for (int order = 1; order <= 4; ++order) {
    Expr dn = d.diff(0);
    for (int trial = 0; trial < 10; ++trial) {
      Vec x{u(rng), u(rng)};
      Vec xp = x, xm = x;
      xp[0] += h;
      xm[0] -= h;
      double fd = (d.eval(xp) - d.eval(xm)) / (2.0 * h);
      double ex = dn.eval(x);
      CHECK(std::abs(ex - fd) <= 1e-5 * std::max(1.0, std::abs(ex)));
    }
    d = dn;
  }
}

TEST_CASE("cexp cutoff atom is flat at zero and matches exp(-1/u)") {
  auto vocab = chart_vocab(1);
  Expr e = parse_expr("cexp(x1)", vocab);
  Vec neg{-0.5};
  Vec zero{0.0};
  Vec pos{2.0};
  CHECK(e.eval(neg) == 0.0);
  CHECK(e.eval(zero) == 0.0);
  CHECK(e.eval(pos) == Catch::Approx(std::exp(-0.5)));
  // derivative vanishes from the left and is continuous through 0
  Expr d = e.diff(0);
  CHECK(d.eval(neg) == 0.0);
  CHECK(d.eval(zero) == 0.0);
  Vec tiny{1e-3};
  CHECK(std::abs(d.eval(tiny)) < 1e-100);  // exp(-1000) underflows to ~0
}

TEST_CASE("series evaluation of expressions matches scalar evaluation along a path") {
  auto vocab = phase_vocab(1);
  Expr e = parse_expr("sin(q1)*p1 + exp(0.2*p1)", vocab);
  // path q1(t) = 0.3 + t, p1(t) = 1 - 2t
  std::vector<Series> in{Series(5, 0.3), Series(5, 1.0)};
  in[0].at(1) = 1.0;
  in[1].at(1) = -2.0;
  Series out = e.eval<Series>(std::span<const Series>(in));
  for (double t : {-0.05, 0.0, 0.02, 0.07}) {
    Vec x{0.3 + t, 1.0 - 2.0 * t};
    CHECK(out.eval(t) == Catch::Approx(e.eval(x)).margin(1e-7));
  }
}

TEST_CASE("shared-memo evaluation equals independent evaluation") {
  auto vocab = phase_vocab(2);
  Expr e = parse_expr("sin(q1)*(p1^2 + p2^2) + cos(q1)", vocab);
  Expr d0 = e.diff(0), d2 = e.diff(2);
  Vec x{0.4, -0.1, 0.8, 0.3};
  std::unordered_map<const Expr::Node*, double> memo;
  double a = d0.eval_shared<double>(x, memo);
  double b = d2.eval_shared<double>(x, memo);
  CHECK(a == d0.eval(x));
  CHECK(b == d2.eval(x));
}
