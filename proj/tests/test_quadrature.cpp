#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "momex/quadrature.hpp"

using namespace momex;
using momex::testing::close;

namespace {
const double kSqrtPi = 1.7724538509055160273;

double quad_monomial(const Rule1d& r, int k) {
  std::vector<double> terms(r.nodes.size());
  for (std::size_t i = 0; i < r.nodes.size(); i++)
    terms[i] = r.weights[i] * std::pow(r.nodes[i], k);
  return momex::testing::compensated_sum(terms);
}
}  // namespace

TEST_CASE("gauss_hermite: small sizes in closed form") {
  Rule1d r1 = gauss_hermite(1);
  REQUIRE(r1.nodes.size() == 1);
  CHECK(r1.nodes[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(r1.weights[0] == doctest::Approx(kSqrtPi).epsilon(1e-14));

  Rule1d r2 = gauss_hermite(2);
  REQUIRE(r2.nodes.size() == 2);
  double lo = std::min(r2.nodes[0], r2.nodes[1]);
  double hi = std::max(r2.nodes[0], r2.nodes[1]);
  CHECK(lo == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(hi == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r2.weights[0] == doctest::Approx(kSqrtPi / 2).epsilon(1e-14));
  CHECK(r2.weights[1] == doctest::Approx(kSqrtPi / 2).epsilon(1e-14));

  CHECK(quad_monomial(gauss_hermite(10), 4) ==
        doctest::Approx(0.75 * kSqrtPi).epsilon(1e-13));
}

TEST_CASE("gauss_laguerre: small sizes in closed form") {
  Rule1d r1 = gauss_laguerre(1);
  REQUIRE(r1.nodes.size() == 1);
  CHECK(r1.nodes[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r1.weights[0] == doctest::Approx(1.0).epsilon(1e-14));

  CHECK(quad_monomial(gauss_laguerre(5), 1) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(quad_monomial(gauss_laguerre(8), 3) == doctest::Approx(6.0).epsilon(1e-11));
}

TEST_CASE("exactness: degree <= 2n-1 against recurrence moments") {
  for (int n = 1; n <= 20; n++) {
    Rule1d gh = gauss_hermite(n);
    Rule1d gl = gauss_laguerre(n);
    for (int k = 0; k <= 2 * n - 1; k++) {
      double gh_exact = hermite_moment(k);
      double gl_exact = laguerre_moment(k);
      CHECK(std::abs(quad_monomial(gh, k) - gh_exact) <=
            1e-10 * std::max(1.0, std::abs(gh_exact)));
      CHECK(std::abs(quad_monomial(gl, k) - gl_exact) <=
            1e-10 * std::max(1.0, std::abs(gl_exact)));
    }
  }
}

TEST_CASE("size bounds are enforced") {
  CHECK_THROWS_AS(gauss_hermite(0), std::invalid_argument);
  CHECK_THROWS_AS(gauss_laguerre(101), std::invalid_argument);
}

namespace {
JumpDistribution scalar_dist(JumpMarginal m) {
  JumpDistribution d;
  d.marginals = {m};
  return d;
}
}  // namespace

TEST_CASE("jump_rule: degenerate normal rule is a point mass at the mean") {
  auto rule = jump_rule(scalar_dist(JumpMarginal::normal(-0.05, 0.2)), 1);
  REQUIRE(rule.size() == 1);
  CHECK(rule.nodes[0][0] == doctest::Approx(-0.05).epsilon(1e-14));
  CHECK(rule.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("jump_rule: Laplace second moment") {
  auto rule = jump_rule(scalar_dist(JumpMarginal::double_exponential(1.0)), 3);
  double m2 = integrate(rule, [](const std::vector<double>& c) { return c[0] * c[0]; });
  CHECK(m2 == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(rule.weight_sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("jump_rule: lognormal mean of a small normal jump") {
  auto rule = jump_rule(scalar_dist(JumpMarginal::normal(0.0, 0.015)), 10);
  double m = integrate(rule, [](const std::vector<double>& c) { return std::exp(c[0]); });
  CHECK(close(m, std::exp(0.015 * 0.015 / 2), 1e-12));
}

TEST_CASE("jump_rule: exponential marginal integrates its mean exactly") {
  auto rule = jump_rule(scalar_dist(JumpMarginal::exponential(0.03)), 6);
  double m1 = integrate(rule, [](const std::vector<double>& c) { return c[0]; });
  CHECK(m1 == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(rule.weight_sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("jump_rule: tensor product over two coordinates") {
  JumpDistribution d;
  d.marginals = {JumpMarginal::normal(-0.02, 0.03), JumpMarginal::exponential(0.05),
                 JumpMarginal::none()};
  auto rule = jump_rule(d, 4);
  CHECK(rule.size() == 16);
  CHECK(rule.weight_sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& node : rule.nodes) {
    REQUIRE(node.size() == 3);
    CHECK(node[2] == 0.0);
  }
  // independent marginals: E[c0 c1] = E[c0] E[c1]
  double m01 = integrate(rule, [](const std::vector<double>& c) { return c[0] * c[1]; });
  CHECK(close(m01, -0.02 * 0.05, 1e-12));
}

TEST_CASE("jump_rule: refinement differences shrink monotonically") {
  auto dist = scalar_dist(JumpMarginal::normal(0.0, 0.3));
  auto value = [&](int n) {
    return integrate(jump_rule(dist, n),
                     [](const std::vector<double>& c) { return std::exp(c[0]); });
  };
  double v2 = value(2), v4 = value(4), v8 = value(8), v16 = value(16);
  double d24 = std::abs(v2 - v4), d48 = std::abs(v4 - v8), d816 = std::abs(v8 - v16);
  CHECK(d24 > d48);
  CHECK(d48 >= d816);
  CHECK(close(v16, std::exp(0.3 * 0.3 / 2), 1e-13));
}

TEST_CASE("monte_carlo_rule: determinism and CLT-scale accuracy") {
  auto dist = scalar_dist(JumpMarginal::normal(0.0, 1.0));
  auto r1 = monte_carlo_rule(dist, 1, 42);
  REQUIRE(r1.size() == 1);
  CHECK(r1.weights[0] == 1.0);

  auto a = monte_carlo_rule(dist, 1000, 7);
  auto b = monte_carlo_rule(dist, 1000, 7);
  CHECK(a.nodes == b.nodes);
  CHECK(a.weights == b.weights);
  auto c = monte_carlo_rule(dist, 1000, 8);
  CHECK(a.nodes != c.nodes);

  const int S = 100000;
  auto big = monte_carlo_rule(dist, S, 123);
  double mean = integrate(big, [](const std::vector<double>& v) { return v[0]; });
  CHECK(std::abs(mean) <= 3.0 / std::sqrt(static_cast<double>(S)));
  double var = integrate(big, [](const std::vector<double>& v) { return v[0] * v[0]; });
  CHECK(std::abs(var - 1.0) <= 5.0 / std::sqrt(static_cast<double>(S)));
}
