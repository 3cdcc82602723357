#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "momex/generator.hpp"

namespace momex {

class BudgetError : public std::runtime_error {
public:
  explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

struct ExpansionOptions {
  /// Abort the symbolic build when it has created more than this many new
  /// expression nodes.
  std::uint64_t node_budget = 10'000'000;
  /// Horizon used to size the compound-Poisson truncation when k_max is not
  /// given explicitly.
  double t_max = 0.25;
};

enum class ExpansionKind { Regular, Smoothed, TwoParam, JumpShortcut };

/// Per-term magnitudes tau_m = (t^m / m!) g_m(x, t) of one evaluation,
/// their running partial sums, and the first order at which the terms grow
/// instead of shrink (none = -1). Growing terms signal that the series has
/// entered its divergent regime and higher orders are unreliable.
struct TermDiagnostics {
  std::vector<double> terms;
  std::vector<double> partial_sums;
  int divergence_onset = -1;  // smallest m >= 1 with |tau_{m+1}| > |tau_m|
  bool tail_warning = false;  // compound-Poisson truncation too short
};

struct EvalOutcome {
  double value = 0.0;
  TermDiagnostics diagnostics;
};

/// Symbolic coefficient sequence of a series approximation together with the
/// generator configuration that produced it. Immutable after construction;
/// evaluation is thread-safe.
struct ExpansionResult {
  ExpansionKind kind = ExpansionKind::Regular;
  int order = 0;    // M (order in t)
  int order_s = 0;  // M1 (order in s, two-parameter kind only)

  /// g_0..g_M. Regular: g_m = B^m f. Smoothed: g_m = (B - d_t)^m u_0.
  /// JumpShortcut: g_m = A_D^m applied to the truncated compound-Poisson
  /// average (time enters as a parameter).
  std::vector<Expr> coefficients;

  /// Smoothed series for the zero-jump atom of the jump shortcut when the
  /// target is irregular; weighted by exp(-lambda t) at evaluation.
  std::vector<Expr> atom_coefficients;
  double shortcut_lambda = 0.0;
  int shortcut_k_max = 0;

  /// Two-parameter grid g[m1][m2] = B^{m2} d_s^{m1} u_{0,s}.
  std::vector<std::vector<Expr>> grid;

  std::optional<Expr> t0_limit;  // pointwise t -> 0 limit when evaluable

  GeneratorConfig config;

  // Compiled tapes, built eagerly so grid evaluation never re-flattens.
  std::vector<CompiledExpr> compiled;
  std::vector<CompiledExpr> atom_compiled;
  std::vector<std::vector<CompiledExpr>> grid_compiled;
  std::optional<CompiledExpr> t0_compiled;
};

/// Taylor coefficients B^m f for a smooth time-independent f.
ExpansionResult expand_regular(const GeneratorConfig& cfg, const Expr& f,
                               int order, const ExpansionOptions& opts = {});

/// Coefficients (B - d_t)^m u_0 for a closed-form smoother u_0(x, t);
/// evaluation at (x, t) sums (t^m / m!) g_m(x, t).
ExpansionResult expand_smoothed(const GeneratorConfig& cfg, const Smoother& sm,
                                int order, const ExpansionOptions& opts = {});

/// Two-parameter grid B^{m2} d_s^{m1} u_{0,s}; evaluated at independent
/// (s, t) as sum ((-s)^{m1} t^{m2} / (m1! m2!)) g_{m1,m2}(x, s).
ExpansionResult expand_two_param(const GeneratorConfig& cfg, const Smoother& sm,
                                 int order_s, int order_t,
                                 const ExpansionOptions& opts = {});

/// Shortcut for constant-intensity, state-independent jumps: the jump
/// semigroup is applied in closed form as a truncated Poisson mixture of
/// k-fold convolutions (normal jump sizes), and only the diffusive part is
/// expanded. f must be smooth. k_max < 0 selects the smallest truncation
/// with Poisson tail below 1e-12 at opts.t_max.
ExpansionResult expand_jump_shortcut(const GeneratorConfig& cfg, const Expr& f,
                                     int order, int k_max = -1,
                                     const ExpansionOptions& opts = {});

/// Same shortcut for the irregular call payoff: the k >= 1 convolutions have
/// closed-form expected payoffs, and the zero-jump atom is handled by the
/// smoothed expansion of the smoother under the pure-diffusion part.
ExpansionResult expand_jump_shortcut(const GeneratorConfig& cfg,
                                     const Smoother& payoff, int order,
                                     int k_max = -1,
                                     const ExpansionOptions& opts = {});

EvalOutcome evaluate_expansion(const ExpansionResult& res, const EvalPoint& p);

/// Two-parameter evaluation; when triangular >= 0, only grid entries with
/// m1 + m2 <= triangular are summed (the triangular truncation at s = t
/// reproduces the one-parameter smoothed series).
double evaluate_two_param(const ExpansionResult& res,
                          std::span<const double> x, double s, double t,
                          int triangular = -1);

/// Smallest k with Poisson(lambda_t) tail mass below tol.
int poisson_k_max(double lambda_t, double tol = 1e-12);
double poisson_tail(double lambda_t, int k);

// --- transition densities ----------------------------------------------------

/// Expansion of the transition density p_t(y | x) around the Gaussian density
/// of the auxiliary Brownian model (mu0, sigma0_sq). The target point y is
/// carried symbolically (state slots d..2d-1), so one symbolic build serves
/// every y.
struct DensityApprox {
  ExpansionResult expansion;
  int dim = 0;

  double operator()(std::span<const double> y, std::span<const double> x,
                    double t) const;
  EvalOutcome evaluate(std::span<const double> y, std::span<const double> x,
                       double t) const;
};

DensityApprox density_approx(const GeneratorConfig& cfg,
                             const std::vector<double>& mu0,
                             const std::vector<std::vector<double>>& sigma0_sq,
                             int order, const ExpansionOptions& opts = {});

// --- polynomial-process oracle -------------------------------------------------

/// Action of the generator on the monomial basis of polynomials of total
/// degree <= k, when the model maps that space into itself (affine drift,
/// quadratic diffusion_sq/intensity, constant discount). Jump moments are
/// exact, so this is an independent route to conditional moments.
struct PolyGeneratorMatrix {
  std::vector<std::vector<int>> basis;  // exponent multi-indices, graded order
  int size = 0;
  std::vector<double> matrix;  // row-major: B e_i = sum_j m[i*N+j] e_j

  double entry(int i, int j) const {
    return matrix[static_cast<std::size_t>(i) * static_cast<std::size_t>(size) +
                  static_cast<std::size_t>(j)];
  }
};

PolyGeneratorMatrix poly_generator_matrix(const GeneratorConfig& cfg, int k);

/// c' exp(t A) e(x): exact conditional moment of the polynomial c' e(x).
double poly_moment(const PolyGeneratorMatrix& pg, std::span<const double> c,
                   double t, std::span<const double> x);

/// Index of a monomial in the basis; -1 if absent.
int poly_basis_index(const PolyGeneratorMatrix& pg,
                     const std::vector<int>& alpha);

/// Dense matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant (row-major n x n input).
std::vector<double> matrix_exponential(const std::vector<double>& a, int n);

// --- serialization --------------------------------------------------------------

std::string expansion_to_json(const ExpansionResult& res);
ExpansionResult expansion_from_json(const std::string& text);
/// Stable content hash of (model, smoother description, order, rule) for
/// cache keys.
std::uint64_t expansion_cache_key(const JumpDiffusionModel& model,
                                  const std::string& smoother_describe,
                                  int order, int order_s,
                                  const std::string& rule_describe);

}  // namespace momex
