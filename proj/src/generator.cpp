#include "momex/generator.hpp"

#include <stdexcept>

namespace momex {

void GeneratorConfig::validate() const {
  model.validate();
  if (model.has_jumps() != rule.has_value())
    throw std::invalid_argument(
        "generator: a quadrature rule is required exactly when the model has "
        "jumps");
  if (rule) {
    if (rule->size() < 1)
      throw std::invalid_argument("generator: empty quadrature rule");
    for (const auto& node : rule->nodes)
      if (static_cast<int>(node.size()) != model.dim)
        throw std::invalid_argument(
            "generator: quadrature node dimension does not match the model");
  }
}

GeneratorConfig make_generator(JumpDiffusionModel model, int quad_n) {
  GeneratorConfig cfg;
  if (model.has_jumps()) cfg.rule = jump_rule(*model.jumps, quad_n);
  cfg.model = std::move(model);
  cfg.validate();
  return cfg;
}

GeneratorConfig make_generator(JumpDiffusionModel model, QuadratureRule rule) {
  GeneratorConfig cfg;
  cfg.model = std::move(model);
  cfg.rule = std::move(rule);
  cfg.validate();
  return cfg;
}

namespace {
Expr maybe_simplify(const GeneratorConfig& cfg, const Expr& e) {
  return cfg.simplify_each_step ? simplify(e) : e;
}
}  // namespace

Expr apply_AD(const GeneratorConfig& cfg, const Expr& e) {
  const int d = cfg.model.dim;
  std::vector<Expr> first(static_cast<std::size_t>(d));
  std::vector<Expr> terms;
  for (int i = 0; i < d; i++) {
    first[static_cast<std::size_t>(i)] = differentiate(e, Var::state(i));
    terms.push_back(s_mul(cfg.model.drift[static_cast<std::size_t>(i)],
                          first[static_cast<std::size_t>(i)]));
  }
  for (int i = 0; i < d; i++) {
    for (int j = i; j < d; j++) {
      const Expr& s2 =
          cfg.model.diffusion_sq[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (s2.is_constant(0.0)) continue;
      Expr second = differentiate(first[static_cast<std::size_t>(i)], Var::state(j));
      double factor = (i == j) ? 0.5 : 1.0;  // symmetric pair counted once
      terms.push_back(s_mul(s_mul(s2, second), Expr::constant(factor)));
    }
  }
  return maybe_simplify(cfg, balanced_sum(terms));
}

Expr apply_AJ_hat(const GeneratorConfig& cfg, const Expr& e) {
  if (!cfg.model.has_jumps())
    throw std::invalid_argument("apply_AJ_hat: model has no jump component");
  const QuadratureRule& rule = *cfg.rule;
  std::vector<Expr> shifted;
  shifted.reserve(rule.size());
  for (std::size_t s = 0; s < rule.size(); s++)
    shifted.push_back(s_mul(shift(e, rule.nodes[s]),
                            Expr::constant(rule.weights[s])));
  Expr mean = balanced_sum(shifted);
  return maybe_simplify(cfg, s_mul(*cfg.model.intensity, s_sub(mean, e)));
}

Expr apply_B(const GeneratorConfig& cfg, const Expr& e) {
  Expr out = apply_AD(cfg, e);
  if (cfg.model.has_jumps()) out = s_add(out, apply_AJ_hat(cfg, e));
  if (!cfg.model.discount.is_constant(0.0))
    out = s_sub(out, s_mul(cfg.model.discount, e));
  return maybe_simplify(cfg, out);
}

Expr apply_B_minus_dt(const GeneratorConfig& cfg, const Expr& e) {
  Expr out = s_sub(apply_B(cfg, e), differentiate(e, Var::time()));
  return maybe_simplify(cfg, out);
}

}  // namespace momex
