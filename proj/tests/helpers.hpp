#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "momex/expr.hpp"

namespace momex::testing {

/// |a - b| <= tol * max(1, |a|, |b|): relative comparison with an absolute
/// floor so near-zero targets do not demand infinite precision.
inline bool close(double a, double b, double tol) {
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= tol * scale;
}

/// Neumaier-compensated sum; immune to the cancellation that plain
/// accumulation suffers on ill-conditioned quadrature sums.
inline double compensated_sum(const std::vector<double>& v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

inline double rel_err(double a, double b) {
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

/// Random smooth expression over nvars state variables and optionally t.
/// Built from polynomials plus transcendentals applied to bounded arguments,
/// so evaluation stays finite for |x_i| <= 3 and derivatives of every order
/// exist.
class RandomExpr {
public:
  RandomExpr(unsigned seed, int nvars, bool with_time = false)
      : rng_(seed), nvars_(nvars), with_time_(with_time) {}

  Expr gen(int depth = 4) {
    if (depth <= 0) return leaf();
    switch (pick(9)) {
      case 0: case 1: return gen(depth - 1) + gen(depth - 1);
      case 2: return gen(depth - 1) - gen(depth - 1);
      case 3: case 4: return gen(depth - 1) * gen(depth - 1);
      case 5: return momex::pow(gen(depth - 1), static_cast<double>(1 + pick(3)));
      case 6: return momex::exp(momex::normal_cdf(gen(depth - 1)));
      case 7: return momex::normal_pdf(gen(depth - 1));
      case 8: return momex::erf(gen(depth - 1)) + momex::sqrt(1.0 + momex::pow(gen(depth - 1), 2.0));
    }
    return leaf();
  }

  EvalPoint point(double box = 2.0) {
    EvalPoint p;
    std::uniform_real_distribution<double> u(-box, box);
    for (int i = 0; i < nvars_; i++) p.x.push_back(u(rng_));
    p.t = with_time_ ? std::abs(u(rng_)) + 0.05 : 0.0;
    return p;
  }

private:
  Expr leaf() {
    int c = pick(with_time_ ? 3 : 2);
    if (c == 0) {
      std::uniform_real_distribution<double> u(-2.0, 2.0);
      return Expr::constant(u(rng_));
    }
    if (c == 1) return Expr::state(pick(nvars_));
    return Expr::time();
  }

  int pick(int n) {
    return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng_));
  }

  std::mt19937 rng_;
  int nvars_;
  bool with_time_;
};

}  // namespace momex::testing
