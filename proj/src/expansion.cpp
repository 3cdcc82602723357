#include "momex/expansion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

namespace momex {

namespace {

struct BudgetGuard {
  std::uint64_t start;
  std::uint64_t budget;
  explicit BudgetGuard(std::uint64_t b) : start(nodes_created()), budget(b) {}
  void check() const {
    if (nodes_created() - start > budget)
      throw BudgetError("expansion: node budget of " + std::to_string(budget) +
                        " exceeded during symbolic build");
  }
};

void finalize(ExpansionResult& res) {
  res.compiled.clear();
  res.compiled.reserve(res.coefficients.size());
  for (const auto& g : res.coefficients) res.compiled.emplace_back(g);
  res.atom_compiled.clear();
  for (const auto& g : res.atom_coefficients) res.atom_compiled.emplace_back(g);
  res.grid_compiled.clear();
  for (const auto& row : res.grid) {
    std::vector<CompiledExpr> crow;
    crow.reserve(row.size());
    for (const auto& g : row) crow.emplace_back(g);
    res.grid_compiled.push_back(std::move(crow));
  }
  if (res.t0_limit) res.t0_compiled.emplace(*res.t0_limit);
}

void check_order(int order) {
  if (order < 0) throw std::invalid_argument("expansion: order must be >= 0");
}

}  // namespace

ExpansionResult expand_regular(const GeneratorConfig& cfg, const Expr& f,
                               int order, const ExpansionOptions& opts) {
  check_order(order);
  cfg.validate();
  if (f.depends_on_time())
    throw std::invalid_argument("expand_regular: f must be time-independent");
  BudgetGuard guard(opts.node_budget);

  ExpansionResult res;
  res.kind = ExpansionKind::Regular;
  res.order = order;
  res.config = cfg;
  res.coefficients.push_back(simplify(f));
  for (int m = 1; m <= order; m++) {
    res.coefficients.push_back(apply_B(cfg, res.coefficients.back()));
    guard.check();
  }
  res.t0_limit = res.coefficients.front();
  finalize(res);
  return res;
}

ExpansionResult expand_smoothed(const GeneratorConfig& cfg, const Smoother& sm,
                                int order, const ExpansionOptions& opts) {
  check_order(order);
  cfg.validate();
  BudgetGuard guard(opts.node_budget);

  ExpansionResult res;
  res.kind = ExpansionKind::Smoothed;
  res.order = order;
  res.config = cfg;
  res.coefficients.push_back(simplify(sm.expr));
  for (int m = 1; m <= order; m++) {
    res.coefficients.push_back(apply_B_minus_dt(cfg, res.coefficients.back()));
    guard.check();
  }
  res.t0_limit = sm.payoff_limit;
  finalize(res);
  return res;
}

ExpansionResult expand_two_param(const GeneratorConfig& cfg, const Smoother& sm,
                                 int order_s, int order_t,
                                 const ExpansionOptions& opts) {
  check_order(order_s);
  check_order(order_t);
  cfg.validate();
  BudgetGuard guard(opts.node_budget);

  ExpansionResult res;
  res.kind = ExpansionKind::TwoParam;
  res.order = order_t;
  res.order_s = order_s;
  res.config = cfg;

  Expr h = simplify(sm.expr);
  for (int m1 = 0; m1 <= order_s; m1++) {
    std::vector<Expr> row;
    row.push_back(h);
    for (int m2 = 1; m2 <= order_t; m2++) {
      row.push_back(apply_B(cfg, row.back()));
      guard.check();
    }
    res.grid.push_back(std::move(row));
    if (m1 < order_s) {
      h = simplify(differentiate(h, Var::time()));
      guard.check();
    }
  }
  res.t0_limit = sm.payoff_limit;
  finalize(res);
  return res;
}

// ---------------------------------------------------------------------------
// Compound-Poisson shortcut

double poisson_tail(double lambda_t, int k) {
  if (lambda_t <= 0.0) return 0.0;
  double term = std::exp(-lambda_t);
  double cdf = term;
  for (int j = 1; j <= k; j++) {
    term *= lambda_t / j;
    cdf += term;
  }
  return std::max(0.0, 1.0 - cdf);
}

int poisson_k_max(double lambda_t, double tol) {
  int k = 0;
  while (poisson_tail(lambda_t, k) > tol && k < 400) k++;
  return k;
}

namespace {

// lambda must be constant and the discount zero for the shortcut: the jump
// semigroup is applied exactly, so only the diffusion is left to expand.
double shortcut_lambda_of(const GeneratorConfig& cfg) {
  if (!cfg.model.discount.is_constant(0.0))
    throw std::invalid_argument(
        "jump shortcut: only undiscounted moments are supported");
  if (!cfg.model.has_jumps()) return 0.0;
  Expr lam = simplify(*cfg.model.intensity);
  if (!lam.is_constant())
    throw std::invalid_argument(
        "jump shortcut: jump intensity must be state-independent");
  return lam.value();
}

GeneratorConfig diffusion_only(const GeneratorConfig& cfg) {
  GeneratorConfig out;
  out.model = cfg.model;
  out.model.intensity.reset();
  out.model.jumps.reset();
  out.model.jump_mean.clear();
  out.simplify_each_step = cfg.simplify_each_step;
  return out;
}

int shortcut_rule_n(const GeneratorConfig& cfg) {
  return cfg.rule ? std::max(1, cfg.rule->provenance.n) : 10;
}

// exp(-lambda t) (lambda t)^k / k!
Expr poisson_weight_expr(double lambda, int k) {
  Expr lt = s_mul(Expr::constant(lambda), Expr::time());
  Expr w = exp(s_neg(lt));
  if (k > 0) {
    double inv_fact = 1.0;
    for (int j = 2; j <= k; j++) inv_fact /= j;
    w = s_mul(s_mul(w, s_pow(lt, Expr::constant(static_cast<double>(k)))),
              Expr::constant(inv_fact));
  }
  return w;
}

// Distribution of the sum of k independent jumps; normal marginals only.
JumpDistribution k_fold_normal(const JumpDistribution& dist, int k) {
  JumpDistribution out;
  for (const auto& m : dist.marginals) {
    if (!m.jumping()) {
      out.marginals.push_back(JumpMarginal::none());
      continue;
    }
    if (m.kind != JumpMarginal::Normal)
      throw std::invalid_argument(
          "jump shortcut: closed-form convolution requires normal jump sizes");
    out.marginals.push_back(
        JumpMarginal::normal(k * m.mean, std::sqrt(static_cast<double>(k)) * m.sd));
  }
  return out;
}

}  // namespace

ExpansionResult expand_jump_shortcut(const GeneratorConfig& cfg, const Expr& f,
                                     int order, int k_max,
                                     const ExpansionOptions& opts) {
  check_order(order);
  cfg.validate();
  if (f.depends_on_time())
    throw std::invalid_argument("jump shortcut: f must be time-independent");
  const double lambda = shortcut_lambda_of(cfg);
  if (k_max < 0) k_max = poisson_k_max(lambda * opts.t_max);
  BudgetGuard guard(opts.node_budget);

  GeneratorConfig dcfg = diffusion_only(cfg);

  Expr mixture;
  if (lambda == 0.0 || !cfg.model.has_jumps()) {
    mixture = simplify(f);
    k_max = 0;
  } else {
    const int n = shortcut_rule_n(cfg);
    std::vector<Expr> terms;
    terms.push_back(s_mul(poisson_weight_expr(lambda, 0), simplify(f)));
    for (int k = 1; k <= k_max; k++) {
      QuadratureRule rule = jump_rule(k_fold_normal(*cfg.model.jumps, k), n);
      std::vector<Expr> shifted;
      shifted.reserve(rule.size());
      for (std::size_t s = 0; s < rule.size(); s++)
        shifted.push_back(
            s_mul(shift(f, rule.nodes[s]), Expr::constant(rule.weights[s])));
      terms.push_back(
          s_mul(poisson_weight_expr(lambda, k), balanced_sum(shifted)));
      guard.check();
    }
    mixture = simplify(balanced_sum(terms));
  }

  ExpansionResult res;
  res.kind = ExpansionKind::JumpShortcut;
  res.order = order;
  res.shortcut_lambda = lambda;
  res.shortcut_k_max = k_max;
  res.config = cfg;
  res.coefficients.push_back(mixture);
  for (int m = 1; m <= order; m++) {
    res.coefficients.push_back(apply_AD(dcfg, res.coefficients.back()));
    guard.check();
  }
  res.t0_limit = simplify(f);
  finalize(res);
  return res;
}

ExpansionResult expand_jump_shortcut(const GeneratorConfig& cfg,
                                     const Smoother& payoff, int order,
                                     int k_max, const ExpansionOptions& opts) {
  check_order(order);
  cfg.validate();
  if (payoff.kind != Smoother::BsCallPayoff)
    throw std::invalid_argument(
        "jump shortcut: irregular targets are supported for the call payoff "
        "smoother only");
  const double lambda = shortcut_lambda_of(cfg);
  if (k_max < 0) k_max = poisson_k_max(lambda * opts.t_max);
  BudgetGuard guard(opts.node_budget);

  GeneratorConfig dcfg = diffusion_only(cfg);

  ExpansionResult res;
  res.kind = ExpansionKind::JumpShortcut;
  res.order = order;
  res.shortcut_lambda = lambda;
  res.shortcut_k_max = k_max;
  res.config = cfg;

  // Zero-jump atom: the raw payoff, handled by the smoothed expansion under
  // the diffusive part; weighted by exp(-lambda t) at evaluation.
  res.atom_coefficients.push_back(simplify(payoff.expr));
  for (int m = 1; m <= order; m++) {
    res.atom_coefficients.push_back(
        apply_B_minus_dt(dcfg, res.atom_coefficients.back()));
    guard.check();
  }

  // k >= 1 terms: expected payoff after k jumps is a closed-form smooth
  // function of the log price (normal k-fold convolution), so the plain
  // diffusive series applies.
  if (lambda > 0.0 && cfg.model.has_jumps()) {
    const auto coords = cfg.model.jumps->jumping_coords();
    if (coords.size() != 1 ||
        cfg.model.jumps->marginals[static_cast<std::size_t>(coords[0])].kind !=
            JumpMarginal::Normal)
      throw std::invalid_argument(
          "jump shortcut: call payoff requires a single normal jump on the "
          "log-price coordinate");
    const auto& mj = cfg.model.jumps->marginals[static_cast<std::size_t>(coords[0])];
    if (coords[0] != payoff.coord)
      throw std::invalid_argument(
          "jump shortcut: jump coordinate does not match the payoff coordinate");
    const double strike = payoff.strike;
    const Expr x = Expr::state(payoff.coord);

    std::vector<Expr> terms;
    for (int k = 1; k <= k_max; k++) {
      double a = k * mj.mean;
      double b = std::sqrt(static_cast<double>(k)) * mj.sd;
      // E[(exp(x + Z) - K)^+], Z ~ N(a, b^2)
      Expr d2 = s_div(s_add(x, Expr::constant(a - std::log(strike))),
                      Expr::constant(b));
      Expr d1 = s_add(d2, Expr::constant(b));
      Expr ck = s_sub(s_mul(exp(s_add(x, Expr::constant(a + 0.5 * b * b))),
                            normal_cdf(d1)),
                      s_mul(Expr::constant(strike), normal_cdf(d2)));
      terms.push_back(s_mul(poisson_weight_expr(lambda, k), ck));
      guard.check();
    }
    res.coefficients.push_back(simplify(balanced_sum(terms)));
    for (int m = 1; m <= order; m++) {
      res.coefficients.push_back(apply_AD(dcfg, res.coefficients.back()));
      guard.check();
    }
  } else {
    for (int m = 0; m <= order; m++)
      res.coefficients.push_back(Expr::constant(0.0));
  }

  res.t0_limit = payoff.payoff_limit;
  finalize(res);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalOutcome evaluate_expansion(const ExpansionResult& res, const EvalPoint& p) {
  if (res.kind == ExpansionKind::TwoParam)
    throw std::invalid_argument(
        "evaluate_expansion: two-parameter results use evaluate_two_param");

  EvalOutcome out;
  const bool needs_positive_t = res.kind != ExpansionKind::Regular;
  if (p.t == 0.0 && needs_positive_t) {
    if (!res.t0_compiled)
      throw EvalError(ExprKind::TimeVar,
                      "expansion not evaluable at t = 0 (no pointwise limit)");
    out.value = (*res.t0_compiled)(p.x, 0.0);
    out.diagnostics.terms = {out.value};
    out.diagnostics.partial_sums = {out.value};
    return out;
  }

  const bool atom = !res.atom_compiled.empty();
  const double atom_weight =
      atom ? std::exp(-res.shortcut_lambda * p.t) : 0.0;
  if (res.kind == ExpansionKind::JumpShortcut && res.shortcut_lambda > 0.0) {
    out.diagnostics.tail_warning =
        poisson_tail(res.shortcut_lambda * p.t, res.shortcut_k_max) > 1e-12;
  }

  std::vector<double> scratch;
  double tfac = 1.0;  // t^m / m!
  double sum = 0.0;
  const int M = res.order;
  out.diagnostics.terms.reserve(static_cast<std::size_t>(M) + 1);
  for (int m = 0; m <= M; m++) {
    double g = res.compiled[static_cast<std::size_t>(m)](p.x, p.t, scratch);
    if (atom)
      g += atom_weight * res.atom_compiled[static_cast<std::size_t>(m)](p.x, p.t, scratch);
    double tau = tfac * g;
    sum += tau;
    out.diagnostics.terms.push_back(tau);
    out.diagnostics.partial_sums.push_back(sum);
    tfac *= p.t / (m + 1);
  }
  out.value = sum;

  for (int m = 1; m + 1 <= M; m++) {
    if (std::abs(out.diagnostics.terms[static_cast<std::size_t>(m) + 1]) >
        std::abs(out.diagnostics.terms[static_cast<std::size_t>(m)])) {
      out.diagnostics.divergence_onset = m;
      break;
    }
  }
  return out;
}

double evaluate_two_param(const ExpansionResult& res,
                          std::span<const double> x, double s, double t,
                          int triangular) {
  if (res.kind != ExpansionKind::TwoParam)
    throw std::invalid_argument("evaluate_two_param: wrong expansion kind");
  std::vector<double> scratch;
  double sum = 0.0;
  double s_fac = 1.0;  // (-s)^{m1} / m1!
  for (int m1 = 0; m1 <= res.order_s; m1++) {
    double t_fac = 1.0;  // t^{m2} / m2!
    for (int m2 = 0; m2 <= res.order; m2++) {
      if (triangular < 0 || m1 + m2 <= triangular) {
        double g = res.grid_compiled[static_cast<std::size_t>(m1)]
                                    [static_cast<std::size_t>(m2)](x, s, scratch);
        sum += s_fac * t_fac * g;
      }
      t_fac *= t / (m2 + 1);
    }
    s_fac *= -s / (m1 + 1);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Transition density

DensityApprox density_approx(const GeneratorConfig& cfg,
                             const std::vector<double>& mu0,
                             const std::vector<std::vector<double>>& sigma0_sq,
                             int order, const ExpansionOptions& opts) {
  cfg.validate();
  const int d = cfg.model.dim;
  if (static_cast<int>(mu0.size()) != d)
    throw std::invalid_argument("density_approx: auxiliary dimension mismatch");
  std::vector<Expr> y;
  y.reserve(static_cast<std::size_t>(d));
  for (int j = 0; j < d; j++) y.push_back(Expr::state(d + j));
  Smoother sm = gaussian_density_smoother(y, mu0, sigma0_sq);

  DensityApprox da;
  da.dim = d;
  da.expansion = expand_smoothed(cfg, sm, order, opts);
  return da;
}

EvalOutcome DensityApprox::evaluate(std::span<const double> y,
                                    std::span<const double> x, double t) const {
  if (static_cast<int>(x.size()) != dim || static_cast<int>(y.size()) != dim)
    throw std::invalid_argument("density evaluation: dimension mismatch");
  EvalPoint p;
  p.x.assign(x.begin(), x.end());
  p.x.insert(p.x.end(), y.begin(), y.end());
  p.t = t;
  return evaluate_expansion(expansion, p);
}

double DensityApprox::operator()(std::span<const double> y,
                                 std::span<const double> x, double t) const {
  return evaluate(y, x, t).value;
}

// ---------------------------------------------------------------------------
// Polynomial processes

namespace {

using MultiIndex = std::vector<int>;

struct Poly {
  std::map<MultiIndex, double> terms;
  int dim = 0;

  int degree() const {
    int deg = 0;
    for (const auto& [a, c] : terms) {
      if (c == 0.0) continue;
      int s = 0;
      for (int e : a) s += e;
      deg = std::max(deg, s);
    }
    return deg;
  }

  void add_term(const MultiIndex& a, double c) {
    if (c == 0.0) return;
    auto [it, inserted] = terms.emplace(a, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms.erase(it);
    }
  }
};

Poly poly_const(int dim, double c) {
  Poly p;
  p.dim = dim;
  if (c != 0.0) p.terms[MultiIndex(static_cast<std::size_t>(dim), 0)] = c;
  return p;
}

Poly poly_add(const Poly& a, const Poly& b, double bscale = 1.0) {
  Poly out = a;
  for (const auto& [idx, c] : b.terms) out.add_term(idx, bscale * c);
  return out;
}

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out;
  out.dim = a.dim;
  for (const auto& [ia, ca] : a.terms) {
    for (const auto& [ib, cb] : b.terms) {
      MultiIndex idx(ia.size());
      for (std::size_t k = 0; k < ia.size(); k++) idx[k] = ia[k] + ib[k];
      out.add_term(idx, ca * cb);
    }
  }
  return out;
}

Poly poly_diff(const Poly& p, int var) {
  Poly out;
  out.dim = p.dim;
  for (const auto& [idx, c] : p.terms) {
    int e = idx[static_cast<std::size_t>(var)];
    if (e == 0) continue;
    MultiIndex d = idx;
    d[static_cast<std::size_t>(var)] = e - 1;
    out.add_term(d, c * e);
  }
  return out;
}

// Exact symbolic-to-polynomial conversion; fails (nullopt) on any
// non-polynomial construct.
std::optional<Poly> expr_to_poly(const Expr& root, int dim) {
  struct Walk {
    int dim;
    std::map<std::uint64_t, std::optional<Poly>> memo;

    std::optional<Poly> run(const Expr& e) {
      auto it = memo.find(e.id());
      if (it != memo.end()) return it->second;
      std::optional<Poly> out = compute(e);
      memo[e.id()] = out;
      return out;
    }

    std::optional<Poly> compute(const Expr& e) {
      switch (e.kind()) {
        case ExprKind::Constant:
          return poly_const(dim, e.value());
        case ExprKind::StateVar: {
          if (e.index() >= dim) return std::nullopt;
          Poly p;
          p.dim = dim;
          MultiIndex idx(static_cast<std::size_t>(dim), 0);
          idx[static_cast<std::size_t>(e.index())] = 1;
          p.terms[idx] = 1.0;
          return p;
        }
        case ExprKind::Add: {
          auto a = run(e.child(0)), b = run(e.child(1));
          if (!a || !b) return std::nullopt;
          return poly_add(*a, *b);
        }
        case ExprKind::Sub: {
          auto a = run(e.child(0)), b = run(e.child(1));
          if (!a || !b) return std::nullopt;
          return poly_add(*a, *b, -1.0);
        }
        case ExprKind::Mul: {
          auto a = run(e.child(0)), b = run(e.child(1));
          if (!a || !b) return std::nullopt;
          return poly_mul(*a, *b);
        }
        case ExprKind::Div: {
          auto a = run(e.child(0)), b = run(e.child(1));
          if (!a || !b) return std::nullopt;
          if (b->degree() != 0 || b->terms.empty()) return std::nullopt;
          double c = b->terms.begin()->second;
          return poly_add(poly_const(dim, 0.0), *a, 1.0 / c);
        }
        case ExprKind::Neg: {
          auto a = run(e.child(0));
          if (!a) return std::nullopt;
          return poly_add(poly_const(dim, 0.0), *a, -1.0);
        }
        case ExprKind::Pow: {
          auto a = run(e.child(0));
          if (!a) return std::nullopt;
          const Expr& ex = e.child(1);
          if (ex.kind() != ExprKind::Constant) return std::nullopt;
          double ev = ex.value();
          if (ev < 0 || ev != std::floor(ev) || ev > 40) return std::nullopt;
          Poly out = poly_const(dim, 1.0);
          for (int i = 0; i < static_cast<int>(ev); i++) out = poly_mul(out, *a);
          return out;
        }
        default:
          return std::nullopt;
      }
    }
  };
  Walk w{dim, {}};
  return w.run(root);
}

double marginal_raw_moment(const JumpMarginal& m, int k) {
  if (k == 0) return 1.0;
  switch (m.kind) {
    case JumpMarginal::None:
      return 0.0;
    case JumpMarginal::Normal: {
      // mu_k = mean mu_{k-1} + (k-1) sd^2 mu_{k-2}
      double mm2 = 1.0, mm1 = m.mean;
      if (k == 1) return mm1;
      double cur = 0.0;
      for (int j = 2; j <= k; j++) {
        cur = m.mean * mm1 + (j - 1) * m.sd * m.sd * mm2;
        mm2 = mm1;
        mm1 = cur;
      }
      return cur;
    }
    case JumpMarginal::Exponential: {
      double v = 1.0;
      for (int j = 1; j <= k; j++) v *= j * m.mean;
      return v;
    }
    case JumpMarginal::DoubleExponential: {
      if (k % 2 == 1) return 0.0;
      double v = 1.0;
      for (int j = 1; j <= k; j++) v *= j * m.scale;
      return v;
    }
  }
  return 0.0;
}

double binom(int n, int k) {
  double v = 1.0;
  for (int j = 1; j <= k; j++) v = v * (n - k + j) / j;
  return v;
}

std::vector<MultiIndex> graded_basis(int dim, int k) {
  std::vector<MultiIndex> out;
  MultiIndex cur(static_cast<std::size_t>(dim), 0);
  // enumerate by total degree, lexicographic within a degree
  struct Rec {
    int dim, total;
    std::vector<MultiIndex>* out;
    MultiIndex* cur;
    void go(int pos, int remaining) {
      if (pos == dim - 1) {
        (*cur)[static_cast<std::size_t>(pos)] = remaining;
        out->push_back(*cur);
        return;
      }
      for (int e = remaining; e >= 0; e--) {
        (*cur)[static_cast<std::size_t>(pos)] = e;
        go(pos + 1, remaining - e);
      }
    }
  };
  for (int deg = 0; deg <= k; deg++) {
    Rec rec{dim, deg, &out, &cur};
    rec.go(0, deg);
  }
  return out;
}

}  // namespace

PolyGeneratorMatrix poly_generator_matrix(const GeneratorConfig& cfg, int k) {
  cfg.validate();
  if (k < 1) throw std::invalid_argument("poly_generator_matrix: k must be >= 1");
  const int d = cfg.model.dim;

  auto coeff_poly = [&](const Expr& e, int max_deg, const char* what) {
    auto p = expr_to_poly(simplify(e), d);
    if (!p)
      throw std::invalid_argument(
          std::string("poly_generator_matrix: ") + what +
          " is not polynomial in the state");
    if (p->degree() > max_deg)
      throw std::invalid_argument(std::string("poly_generator_matrix: ") + what +
                                  " exceeds the admissible degree");
    return *p;
  };

  std::vector<Poly> drift;
  for (int i = 0; i < d; i++)
    drift.push_back(coeff_poly(cfg.model.drift[static_cast<std::size_t>(i)], 1, "drift"));
  std::vector<std::vector<Poly>> diff;
  for (int i = 0; i < d; i++) {
    std::vector<Poly> row;
    for (int j = 0; j < d; j++)
      row.push_back(coeff_poly(
          cfg.model.diffusion_sq[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
          2, "diffusion_sq"));
    diff.push_back(std::move(row));
  }
  std::optional<Poly> intensity;
  if (cfg.model.has_jumps())
    intensity = coeff_poly(*cfg.model.intensity, 2, "intensity");
  Poly discount = coeff_poly(cfg.model.discount, 0, "discount");
  const double r0 =
      discount.terms.empty() ? 0.0 : discount.terms.begin()->second;

  PolyGeneratorMatrix pg;
  pg.basis = graded_basis(d, k);
  pg.size = static_cast<int>(pg.basis.size());
  pg.matrix.assign(static_cast<std::size_t>(pg.size) * static_cast<std::size_t>(pg.size), 0.0);

  std::map<MultiIndex, int> index_of;
  for (int i = 0; i < pg.size; i++) index_of[pg.basis[static_cast<std::size_t>(i)]] = i;

  for (int i = 0; i < pg.size; i++) {
    Poly mono;
    mono.dim = d;
    mono.terms[pg.basis[static_cast<std::size_t>(i)]] = 1.0;

    Poly acc = poly_const(d, 0.0);
    std::vector<Poly> first;
    for (int a = 0; a < d; a++) first.push_back(poly_diff(mono, a));
    for (int a = 0; a < d; a++)
      acc = poly_add(acc, poly_mul(drift[static_cast<std::size_t>(a)],
                                   first[static_cast<std::size_t>(a)]));
    for (int a = 0; a < d; a++)
      for (int b = 0; b < d; b++) {
        Poly second = poly_diff(first[static_cast<std::size_t>(a)], b);
        if (second.terms.empty()) continue;
        acc = poly_add(acc,
                       poly_mul(diff[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)],
                                second),
                       0.5);
      }

    if (intensity) {
      // E[(x + J)^alpha] - x^alpha expanded with exact jump moments.
      const MultiIndex& alpha = pg.basis[static_cast<std::size_t>(i)];
      Poly expected = poly_const(d, 1.0);
      for (int c = 0; c < d; c++) {
        const auto& mg = cfg.model.jumps->marginals[static_cast<std::size_t>(c)];
        Poly coord;
        coord.dim = d;
        const int ac = alpha[static_cast<std::size_t>(c)];
        for (int j = 0; j <= ac; j++) {
          double mom = mg.jumping() ? marginal_raw_moment(mg, j) : (j == 0 ? 1.0 : 0.0);
          if (mom == 0.0) continue;
          MultiIndex idx(static_cast<std::size_t>(d), 0);
          idx[static_cast<std::size_t>(c)] = ac - j;
          coord.add_term(idx, binom(ac, j) * mom);
        }
        expected = poly_mul(expected, coord);
      }
      Poly jump_part = poly_add(expected, mono, -1.0);
      acc = poly_add(acc, poly_mul(*intensity, jump_part));
    }

    if (r0 != 0.0) acc = poly_add(acc, mono, -r0);

    for (const auto& [idx, c] : acc.terms) {
      auto it = index_of.find(idx);
      if (it == index_of.end())
        throw std::invalid_argument(
            "poly_generator_matrix: generator leaves the polynomial space of "
            "degree " + std::to_string(k));
      pg.matrix[static_cast<std::size_t>(i) * static_cast<std::size_t>(pg.size) +
                static_cast<std::size_t>(it->second)] = c;
    }
  }
  return pg;
}

int poly_basis_index(const PolyGeneratorMatrix& pg, const std::vector<int>& alpha) {
  for (int i = 0; i < pg.size; i++)
    if (pg.basis[static_cast<std::size_t>(i)] == alpha) return i;
  return -1;
}

std::vector<double> matrix_exponential(const std::vector<double>& a, int n) {
  using Mat = Eigen::MatrixXd;
  if (static_cast<int>(a.size()) != n * n)
    throw std::invalid_argument("matrix_exponential: shape mismatch");
  Mat A(n, n);
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++)
      A(i, j) = a[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                  static_cast<std::size_t>(j)];

  // Scaling and squaring with the degree-13 Pade approximant.
  const double theta13 = 5.371920351148152;
  double norm = A.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / theta13)));
    A /= std::pow(2.0, squarings);
  }
  static const double b[] = {64764752532480000.0, 32382376266240000.0,
                             7771770303897600.0, 1187353796428800.0,
                             129060195264000.0, 10559470521600.0,
                             670442572800.0, 33522128640.0, 1323241920.0,
                             40840800.0, 960960.0, 16380.0, 182.0, 1.0};
  Mat I = Mat::Identity(n, n);
  Mat A2 = A * A;
  Mat A4 = A2 * A2;
  Mat A6 = A4 * A2;
  Mat U = A * (A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 +
               b[5] * A4 + b[3] * A2 + b[1] * I);
  Mat V = A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 +
          b[2] * A2 + b[0] * I;
  Mat F = (V - U).partialPivLu().solve(V + U);
  for (int s = 0; s < squarings; s++) F = F * F;

  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++)
      out[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
          static_cast<std::size_t>(j)] = F(i, j);
  return out;
}

double poly_moment(const PolyGeneratorMatrix& pg, std::span<const double> c,
                   double t, std::span<const double> x) {
  const int n = pg.size;
  if (static_cast<int>(c.size()) != n)
    throw std::invalid_argument("poly_moment: coefficient length mismatch");
  std::vector<double> scaled(pg.matrix.size());
  for (std::size_t i = 0; i < scaled.size(); i++) scaled[i] = t * pg.matrix[i];
  std::vector<double> E = matrix_exponential(scaled, n);

  std::vector<double> ex(static_cast<std::size_t>(n));
  for (int j = 0; j < n; j++) {
    double v = 1.0;
    const auto& alpha = pg.basis[static_cast<std::size_t>(j)];
    for (std::size_t a = 0; a < alpha.size(); a++)
      for (int e = 0; e < alpha[a]; e++) v *= x[a];
    ex[static_cast<std::size_t>(j)] = v;
  }
  double out = 0.0;
  for (int i = 0; i < n; i++) {
    double row = 0.0;
    for (int j = 0; j < n; j++)
      row += E[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
               static_cast<std::size_t>(j)] * ex[static_cast<std::size_t>(j)];
    out += c[static_cast<std::size_t>(i)] * row;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
using nlohmann::json;

const char* kind_str(ExpansionKind k) {
  switch (k) {
    case ExpansionKind::Regular: return "regular";
    case ExpansionKind::Smoothed: return "smoothed";
    case ExpansionKind::TwoParam: return "two_param";
    case ExpansionKind::JumpShortcut: return "jump_shortcut";
  }
  return "?";
}

ExpansionKind kind_from(const std::string& s) {
  if (s == "regular") return ExpansionKind::Regular;
  if (s == "smoothed") return ExpansionKind::Smoothed;
  if (s == "two_param") return ExpansionKind::TwoParam;
  if (s == "jump_shortcut") return ExpansionKind::JumpShortcut;
  throw std::invalid_argument("unknown expansion kind: " + s);
}

}  // namespace

std::string expansion_to_json(const ExpansionResult& res) {
  json j;
  j["kind"] = kind_str(res.kind);
  j["order"] = res.order;
  j["order_s"] = res.order_s;
  json coeffs = json::array();
  for (const auto& g : res.coefficients) coeffs.push_back(to_string(g));
  j["coefficients"] = coeffs;
  if (!res.atom_coefficients.empty()) {
    json atoms = json::array();
    for (const auto& g : res.atom_coefficients) atoms.push_back(to_string(g));
    j["atom_coefficients"] = atoms;
  }
  j["shortcut_lambda"] = res.shortcut_lambda;
  j["shortcut_k_max"] = res.shortcut_k_max;
  if (!res.grid.empty()) {
    json grid = json::array();
    for (const auto& row : res.grid) {
      json r = json::array();
      for (const auto& g : row) r.push_back(to_string(g));
      grid.push_back(r);
    }
    j["grid"] = grid;
  }
  j["t0_limit"] = res.t0_limit ? json(to_string(*res.t0_limit)) : json(nullptr);
  j["model"] = json::parse(model_to_json(res.config.model));
  if (res.config.rule) {
    json rule;
    rule["describe"] = res.config.rule->provenance.describe();
    rule["weights"] = res.config.rule->weights;
    rule["nodes"] = res.config.rule->nodes;
    json prov;
    prov["kind"] = static_cast<int>(res.config.rule->provenance.kind);
    prov["n"] = res.config.rule->provenance.n;
    prov["seed"] = res.config.rule->provenance.seed;
    rule["provenance"] = prov;
    j["rule"] = rule;
  } else {
    j["rule"] = nullptr;
  }
  return j.dump();
}

ExpansionResult expansion_from_json(const std::string& text) {
  json j = json::parse(text);
  ExpansionResult res;
  res.kind = kind_from(j.at("kind").get<std::string>());
  res.order = j.at("order").get<int>();
  res.order_s = j.value("order_s", 0);
  for (const auto& s : j.at("coefficients"))
    res.coefficients.push_back(parse_expr(s.get<std::string>()));
  if (j.contains("atom_coefficients"))
    for (const auto& s : j["atom_coefficients"])
      res.atom_coefficients.push_back(parse_expr(s.get<std::string>()));
  res.shortcut_lambda = j.value("shortcut_lambda", 0.0);
  res.shortcut_k_max = j.value("shortcut_k_max", 0);
  if (j.contains("grid"))
    for (const auto& row : j["grid"]) {
      std::vector<Expr> r;
      for (const auto& s : row) r.push_back(parse_expr(s.get<std::string>()));
      res.grid.push_back(std::move(r));
    }
  if (j.contains("t0_limit") && !j["t0_limit"].is_null())
    res.t0_limit = parse_expr(j["t0_limit"].get<std::string>());

  res.config.model = parse_model_json(j.at("model").dump());
  if (j.contains("rule") && !j["rule"].is_null()) {
    QuadratureRule rule;
    rule.weights = j["rule"].at("weights").get<std::vector<double>>();
    rule.nodes = j["rule"].at("nodes").get<std::vector<std::vector<double>>>();
    const auto& prov = j["rule"].at("provenance");
    rule.provenance.kind = static_cast<QuadratureProvenance::Kind>(prov.at("kind").get<int>());
    rule.provenance.n = prov.at("n").get<int>();
    rule.provenance.seed = prov.at("seed").get<std::uint64_t>();
    res.config.rule = std::move(rule);
  }
  finalize(res);
  return res;
}

std::uint64_t expansion_cache_key(const JumpDiffusionModel& model,
                                  const std::string& smoother_describe,
                                  int order, int order_s,
                                  const std::string& rule_describe) {
  std::string blob = model_to_json(model);
  blob += '\x1f';
  blob += smoother_describe;
  blob += '\x1f';
  blob += std::to_string(order) + ":" + std::to_string(order_s);
  blob += '\x1f';
  blob += rule_describe;
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : blob) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace momex
