#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "momex/model.hpp"

namespace momex {

struct QuadratureProvenance {
  enum Kind { GaussHermite, GaussLaguerre, MonteCarlo } kind;
  int n = 0;                // nodes per coordinate (Gauss) or draw count (MC)
  std::uint64_t seed = 0;   // MC only
  std::string describe() const;
};

/// Discretization of the jump integral: weights w[s] at vector displacements
/// nodes[s] (zero in non-jumping coordinates). Probability-normalized rules
/// have weights summing to 1.
struct QuadratureRule {
  std::vector<std::vector<double>> nodes;
  std::vector<double> weights;
  QuadratureProvenance provenance;

  std::size_t size() const { return weights.size(); }
  double weight_sum() const;
};

struct Rule1d {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Nodes/weights for integrals against exp(-x^2) on the real line, computed
/// by the Golub-Welsch eigendecomposition of the Hermite recurrence. Exact
/// for polynomials of degree <= 2n-1.
Rule1d gauss_hermite(int n);

/// Nodes/weights for integrals against exp(-x) on [0, inf); Laguerre
/// recurrence, exact degree <= 2n-1.
Rule1d gauss_laguerre(int n);

/// Weighted moment integral_w x^k of the Hermite (exp(-x^2)) or Laguerre
/// (exp(-x)) weight, computed by recurrence. Reference values for exactness
/// checks.
double hermite_moment(int k);
double laguerre_moment(int k);

/// Probability-normalized rule for the jump-size distribution of a model:
/// per-coordinate rules mapped through the distribution-specific change of
/// variables, tensored over the jumping coordinates. n = nodes per
/// coordinate.
QuadratureRule jump_rule(const JumpDistribution& dist, int n);

/// Rule of S i.i.d. draws with equal weights 1/S, reproducible from seed.
QuadratureRule monte_carlo_rule(const JumpDistribution& dist, int draws,
                                std::uint64_t seed);

/// Integrates f over the rule: sum_s w_s f(c_s).
template <typename F>
double integrate(const QuadratureRule& rule, F&& f) {
  double acc = 0.0;
  for (std::size_t s = 0; s < rule.size(); s++)
    acc += rule.weights[s] * f(rule.nodes[s]);
  return acc;
}

}  // namespace momex
