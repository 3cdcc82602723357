#pragma once

#include <optional>

#include "momex/model.hpp"
#include "momex/quadrature.hpp"

namespace momex {

/// Binds a model to the quadrature rule discretizing its jump integral.
/// Operator applications simplify their result by default; switching that off
/// is only useful for debugging expression growth.
struct GeneratorConfig {
  JumpDiffusionModel model;
  std::optional<QuadratureRule> rule;
  bool simplify_each_step = true;

  void validate() const;
};

GeneratorConfig make_generator(JumpDiffusionModel model, int quad_n = 10);
GeneratorConfig make_generator(JumpDiffusionModel model, QuadratureRule rule);

/// Diffusive part: sum_i mu_i d_i e + (1/2) sum_ij sigma2_ij d2_ij e.
Expr apply_AD(const GeneratorConfig& cfg, const Expr& e);

/// Quadrature-discretized jump part:
/// lambda(x) [ sum_s w_s e(x + c_s) - e(x) ].
Expr apply_AJ_hat(const GeneratorConfig& cfg, const Expr& e);

/// Full generator less discounting: apply_AD + apply_AJ_hat - r(x) e.
Expr apply_B(const GeneratorConfig& cfg, const Expr& e);

/// apply_B minus the time derivative, for time-dependent smoothers.
Expr apply_B_minus_dt(const GeneratorConfig& cfg, const Expr& e);

}  // namespace momex
