#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "momex/expr.hpp"

using namespace momex;
using momex::testing::close;
using momex::testing::RandomExpr;

TEST_CASE("evaluate: direct arithmetic") {
  Expr e = pow(Expr::state(0), 2.0) + Expr::time();
  CHECK(evaluate(e, {{2.0}, 0.5}) == doctest::Approx(4.5).epsilon(1e-15));
}

TEST_CASE("evaluate: normal builtins") {
  CHECK(evaluate(normal_cdf(Expr::constant(0.0)), {{}, 0.0}) ==
        doctest::Approx(0.5).epsilon(1e-15));
  // (1/sqrt(2 pi)) exp(-1/2), computed from the long-double constants
  long double ref = 0.3989422804014326779L * std::exp(-0.5L);
  CHECK(evaluate(normal_pdf(Expr::constant(1.0)), {{}, 0.0}) ==
        doctest::Approx(static_cast<double>(ref)).epsilon(1e-14));
  CHECK(static_cast<double>(ref) == doctest::Approx(0.2419707245191434).epsilon(1e-12));
}

TEST_CASE("evaluate: domain errors carry the node kind") {
  CHECK_THROWS_AS(evaluate(log(Expr::constant(-1.0)), {{}, 0.0}), EvalError);
  CHECK_THROWS_AS(evaluate(sqrt(Expr::constant(-2.0)), {{}, 0.0}), EvalError);
  Expr div = Expr::constant(1.0) / Expr::state(0);
  try {
    evaluate(div, {{0.0}, 0.0});
    CHECK(false);
  } catch (const EvalError& e) {
    CHECK(e.node_kind() == ExprKind::Div);
  }
  // referencing a state variable absent from the point
  CHECK_THROWS_AS(evaluate(Expr::state(3), {{1.0}, 0.0}), EvalError);
}

TEST_CASE("hash consing shares structurally identical subtrees") {
  Expr a = Expr::state(0) + Expr::constant(1.0);
  Expr b = Expr::state(0) + Expr::constant(1.0);
  CHECK(a.same(b));
  CHECK(a.id() == b.id());
  Expr c = a * a;
  CHECK(c.child(0).same(c.child(1)));
}

TEST_CASE("DAG sharing: node evaluations bounded by distinct node count") {
  // chain of squarings: 2^10-deep tree, 12 distinct nodes
  Expr e = Expr::state(0) + Expr::constant(1.0);
  for (int i = 0; i < 10; i++) e = e * e;
  CHECK(e.dag_size() == 13);
  EvalStats stats;
  evaluate(e, {{0.5}, 0.0}, &stats);
  CHECK(stats.node_evals <= e.dag_size());
}

TEST_CASE("differentiate: power rule and cdf/pdf rules") {
  Expr x = Expr::state(0);
  Expr d = differentiate(pow(x, 2.0), Var::state(0));
  CHECK(d.same(simplify(2.0 * x)));

  Expr dc = differentiate(normal_cdf(x), Var::state(0));
  CHECK(dc.same(normal_pdf(x)));

  // d normpdf(z) = -z normpdf(z)
  Expr dp = differentiate(normal_pdf(x), Var::state(0));
  for (double z : {-1.3, 0.2, 2.4}) {
    double want = -z * evaluate(normal_pdf(x), {{z}, 0.0});
    CHECK(close(evaluate(dp, {{z}, 0.0}), want, 1e-14));
  }
}

TEST_CASE("differentiate: abs is rejected") {
  CHECK_THROWS_AS(differentiate(abs(Expr::state(0)), Var::state(0)),
                  std::invalid_argument);
}

TEST_CASE("differentiate: finite-difference oracle on random expressions") {
  RandomExpr gen(1234, 2);
  int checked = 0;
  for (int trial = 0; trial < 60; trial++) {
    Expr e = gen.gen(4);
    Expr d = differentiate(e, Var::state(0));
    EvalPoint p = gen.point(1.5);
    const double h = 1e-5;
    EvalPoint pp = p, pm = p;
    pp.x[0] += h;
    pm.x[0] -= h;
    double fd = (evaluate(e, pp) - evaluate(e, pm)) / (2 * h);
    double sym = evaluate(d, p);
    // central difference has O(h^2 f''') truncation; scale tolerance by the
    // magnitude of nearby values
    double scale = std::max({1.0, std::abs(evaluate(e, p)), std::abs(sym)});
    CHECK(std::abs(fd - sym) <= 1e-6 * scale * 10);
    checked++;
  }
  CHECK(checked == 60);
}

TEST_CASE("differentiate: linearity") {
  RandomExpr gen(99, 2);
  for (int trial = 0; trial < 30; trial++) {
    Expr e1 = gen.gen(3), e2 = gen.gen(3);
    double a = 1.7, b = -0.4;
    Expr lhs = differentiate(a * e1 + b * e2, Var::state(1));
    Expr rhs = a * differentiate(e1, Var::state(1)) +
               b * differentiate(e2, Var::state(1));
    EvalPoint p = gen.point();
    CHECK(close(evaluate(lhs, p), evaluate(rhs, p), 1e-12));
  }
}

TEST_CASE("differentiate: mixed partials commute (Clairaut)") {
  RandomExpr gen(2024, 2);
  for (int trial = 0; trial < 30; trial++) {
    Expr e = gen.gen(3);
    Expr dxy = differentiate(differentiate(e, Var::state(0)), Var::state(1));
    Expr dyx = differentiate(differentiate(e, Var::state(1)), Var::state(0));
    EvalPoint p = gen.point();
    CHECK(close(evaluate(dxy, p), evaluate(dyx, p), 1e-12));
  }
}

TEST_CASE("shift: substitution and composition") {
  Expr x = Expr::state(0);
  double c1[] = {1.0};
  CHECK(evaluate(shift(pow(x, 2.0), c1), {{2.0}, 0.0}) == doctest::Approx(9.0));

  double zero[] = {0.0};
  RandomExpr gen(55, 1);
  Expr e = gen.gen(3);
  CHECK(simplify(shift(e, zero)).same(simplify(e)));

  double ca[] = {1.0};
  CHECK(evaluate(shift(exp(x), ca), {{0.0}, 0.0}) ==
        doctest::Approx(std::exp(1.0)).epsilon(1e-15));

  // shift(shift(e, a), b) evaluates like shift(e, a + b)
  RandomExpr gen2(56, 2);
  for (int trial = 0; trial < 20; trial++) {
    Expr f = gen2.gen(3);
    double a[] = {0.3, -0.7}, b[] = {-1.1, 0.4}, ab[] = {0.3 - 1.1, -0.7 + 0.4};
    EvalPoint p = gen2.point();
    CHECK(close(evaluate(shift(shift(f, a), b), p), evaluate(shift(f, ab), p),
                1e-12));
  }
}

TEST_CASE("shift: composed constant offsets merge into one node") {
  Expr x = Expr::state(0);
  Expr e = exp(x);
  double a[] = {0.25}, b[] = {0.5}, ab[] = {0.75};
  Expr twice = simplify(shift(shift(e, a), b));
  Expr once = simplify(shift(e, ab));
  CHECK(twice.same(once));
}

TEST_CASE("shift: dimension mismatch") {
  Expr e = Expr::state(2);
  double c[] = {1.0, 2.0};
  CHECK_THROWS_AS(shift(e, c), std::invalid_argument);
}

TEST_CASE("simplify: identities and constant folding") {
  Expr x = Expr::state(0);
  CHECK(simplify(x * 1.0 + 0.0).same(x));
  CHECK(simplify(Expr::constant(2.0) * Expr::constant(3.0)).is_constant(6.0));
  CHECK(simplify(pow(x, 0.0)).is_constant(1.0));
  CHECK(simplify(pow(x, 1.0)).same(x));
  CHECK(simplify(x * 0.0).is_constant(0.0));
  CHECK(simplify(-(-x)).same(x));
}

TEST_CASE("simplify: value-preserving on random DAGs") {
  RandomExpr gen(777, 3);
  for (int trial = 0; trial < 1000; trial++) {
    Expr e = gen.gen(3);
    Expr s = simplify(e);
    for (int k = 0; k < 10; k++) {
      EvalPoint p = gen.point();
      CHECK(close(evaluate(e, p), evaluate(s, p), 1e-12));
    }
    // idempotent
    CHECK(simplify(s).same(s));
  }
}

TEST_CASE("serialization round-trips to the identical node") {
  RandomExpr gen(4242, 2, true);
  for (int trial = 0; trial < 50; trial++) {
    Expr e = gen.gen(3);
    Expr back = parse_expr(to_string(e));
    CHECK(back.same(e));
  }
}

TEST_CASE("parser reports errors with position") {
  CHECK_THROWS_AS(parse_expr("(+ x0"), ParseError);
  CHECK_THROWS_AS(parse_expr("(frob 1 2)"), ParseError);
  CHECK_THROWS_AS(parse_expr("x0 junk"), ParseError);
  CHECK_THROWS_AS(parse_expr("(pow x0)"), ParseError);
}

TEST_CASE("compiled evaluation matches interpreted evaluation") {
  RandomExpr gen(31337, 2, true);
  for (int trial = 0; trial < 50; trial++) {
    Expr e = gen.gen(4);
    CompiledExpr ce(e);
    EvalPoint p = gen.point();
    CHECK(close(evaluate(e, p), ce(p.x, p.t), 1e-15));
  }
}
