#pragma once

#include <optional>
#include <string>
#include <vector>

#include "momex/expr.hpp"

namespace momex {

/// Per-coordinate jump-size marginal. All jumping coordinates share one
/// Poisson clock; marginals are mutually independent.
struct JumpMarginal {
  enum Kind { None, Normal, DoubleExponential, Exponential } kind = None;
  // Normal: mean + sd. DoubleExponential: scale (Laplace density
  // exp(-|c|/scale) / (2 scale), variance 2 scale^2). Exponential: mean.
  double mean = 0.0;
  double sd = 0.0;
  double scale = 0.0;

  static JumpMarginal none() { return {}; }
  static JumpMarginal normal(double mean, double sd);
  static JumpMarginal double_exponential(double scale);
  static JumpMarginal exponential(double mean);

  bool jumping() const { return kind != None; }
  /// E[c] of the marginal.
  double moment1() const;
};

struct JumpDistribution {
  std::vector<JumpMarginal> marginals;  // length d

  int dim() const { return static_cast<int>(marginals.size()); }
  std::vector<int> jumping_coords() const;
};

/// Time-homogeneous jump-diffusion: drift vector, squared diffusion matrix
/// (sigma sigma^T), optional jump intensity and jump-size distribution, and
/// a discount rate, all as expressions in the state variables.
struct JumpDiffusionModel {
  int dim = 0;
  std::string name;
  std::vector<Expr> drift;                      // length dim
  std::vector<std::vector<Expr>> diffusion_sq;  // dim x dim, symmetric
  std::optional<Expr> intensity;
  std::optional<JumpDistribution> jumps;
  Expr discount = Expr::constant(0.0);
  /// Mean jump impact per coordinate as used by compensator terms (for the
  /// log-price coordinate this is E[J] = exp(m + s^2/2) - 1 of the price
  /// jump, not the mean of the log jump).
  std::vector<double> jump_mean;
  /// Reflecting lower bounds used by simulation truncation (e.g. 0 for
  /// variance coordinates); -inf when the coordinate is unbounded.
  std::vector<double> state_lower_bound;

  bool has_jumps() const { return intensity.has_value(); }
  void validate() const;  // throws std::invalid_argument on structural errors
};

/// Closed-form smoothing function u0 in (x, t): the target moment computed
/// under an auxiliary constant-coefficient model, converging pointwise to
/// the irregular target as t -> 0+.
struct Smoother {
  enum Kind { GaussianDensity, BsCallPayoff, Custom } kind = Custom;
  Expr expr;                          // u0(x, t)
  std::optional<Expr> payoff_limit;   // t -> 0+ limit when evaluable
  std::string describe;
  // BsCallPayoff parameters (consumed by the jump shortcut)
  double strike = 0.0;
  double rate = 0.0;
  double sigma0 = 0.0;
  int coord = 0;
};

// --- benchmark-model catalog ------------------------------------------------

/// Stochastic-volatility model with jumps in the log price, x = (s, v):
///   ds = (r - q - v/2 - lambda(v) Jbar) dt + sqrt(v) dW1 + log(J+1) dN
///   dv = kappa (alpha - v) dt + sigma_v v^beta (rho dW1 + sqrt(1-rho^2) dW2)
/// with lambda(v) = lambda0 + lambda1 v, log(J+1) ~ N(m_j, s_j) and
/// Jbar = exp(m_j + s_j^2/2) - 1 compensating the price jump.
/// beta = 1/2 is the square-root family, 1/2 < beta < 1 CEV, beta = 1 GARCH.
struct SvParams {
  double beta = 0.5;
  double r = 0.0;
  double q = 0.0;  // dividend yield
  double kappa = 1.0;
  double alpha = 0.04;
  double sigma_v = 0.3;
  double rho = 0.0;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double m_j = 0.0;
  double s_j = 0.0;
};
JumpDiffusionModel make_sv_model(const SvParams& p);

/// Log-volatility variant, x = (s, h) with h = log v:
///   dh = kappa (alpha - h) dt + sigma_v (rho dW1 + sqrt(1-rho^2) dW2)
/// and v = exp(h) in the price equation and the intensity.
struct LogVolParams {
  double r = 0.0;
  double q = 0.0;
  double kappa = 1.0;
  double alpha = -1.0;
  double sigma_v = 0.1;
  double rho = 0.0;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double m_j = 0.0;
  double s_j = 0.0;
};
JumpDiffusionModel make_logvol_model(const LogVolParams& p);

/// Two-factor stochastic volatility, x = (s, v, m): v reverts to the
/// stochastic level m, simultaneous jumps in s (lognormal price jump) and v
/// (exponential), intensity lambda0 + lambda1 v + lambda2 m.
struct TwoFactorParams {
  double r = 0.0;
  double q = 0.0;
  double kappa_v = 1.0;
  double sigma_v = 0.3;
  double rho = 0.0;
  double kappa_m = 1.0;
  double alpha_m = 0.04;
  double sigma_m = 0.2;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double m_j = 0.0;
  double s_j = 0.0;
  double mu_jv = 0.0;  // mean of the exponential variance jump
};
JumpDiffusionModel make_two_factor(const TwoFactorParams& p);

/// Constant-coefficient pure diffusion dx = mu0 dt + sigma0 dW.
JumpDiffusionModel make_bm_auxiliary(const std::vector<double>& mu0,
                                     const std::vector<std::vector<double>>& sigma0_sq);

/// Scalar Ornstein-Uhlenbeck dx = kappa (alpha - x) dt + sigma dW.
JumpDiffusionModel make_ou(double kappa, double alpha, double sigma);

/// Scalar square-root process dv = kappa (alpha - v) dt + sigma sqrt(v) dW.
JumpDiffusionModel make_cir(double kappa, double alpha, double sigma);

/// Log price under constant volatility with lognormal jumps,
///   ds = (r - q - sigma^2/2 - lambda Jbar) dt + sigma dW + log(J+1) dN.
JumpDiffusionModel make_merton(double sigma, double r, double q, double lambda,
                               double m_j, double s_j);

// --- smoothers ---------------------------------------------------------------

/// Gaussian transition density of the auxiliary Brownian model as a function
/// of (x, t) for a fixed target point y.
Smoother gaussian_density_smoother(const std::vector<double>& y,
                                   const std::vector<double>& mu0,
                                   const std::vector<std::vector<double>>& sigma0_sq);

/// Same, with the target point given symbolically (e.g. extra state
/// variables), so a single expression serves every y.
Smoother gaussian_density_smoother(const std::vector<Expr>& y,
                                   const std::vector<double>& mu0,
                                   const std::vector<std::vector<double>>& sigma0_sq);

/// Undiscounted risk-neutral expected call payoff under constant volatility:
///   exp(x_c + r t) Phi(d+) - K Phi(d-),
///   d+- = (x_c - log K + (r +- sigma0^2/2) t) / (sigma0 sqrt(t)),
/// where x_c is the log-price coordinate. Converges to (exp(x_c) - K)^+ as
/// t -> 0+.
Smoother bs_call_smoother(double strike, double rate, double sigma0, int coord);

/// Wraps an arbitrary closed-form expression in (x, t).
Smoother custom_smoother(const Expr& expr);

/// Black-Scholes undiscounted expected call payoff (numeric reference).
double bs_expected_call(double log_spot, double strike, double rate,
                        double sigma, double t);

// --- model-spec files ---------------------------------------------------------

/// Parses the JSON model-spec format ({dim, drift, diffusion_sq, intensity,
/// jumps, discount, ...}); error messages name the offending field.
JumpDiffusionModel parse_model_json(const std::string& json_text);
std::string model_to_json(const JumpDiffusionModel& m);

}  // namespace momex
