#include "momex/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace momex {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

JumpMarginal JumpMarginal::normal(double mean, double sd) {
  require(sd > 0.0, "normal jump marginal: sd must be positive");
  JumpMarginal m;
  m.kind = Normal;
  m.mean = mean;
  m.sd = sd;
  return m;
}

JumpMarginal JumpMarginal::double_exponential(double scale) {
  require(scale > 0.0, "double-exponential jump marginal: scale must be positive");
  JumpMarginal m;
  m.kind = DoubleExponential;
  m.scale = scale;
  return m;
}

JumpMarginal JumpMarginal::exponential(double mean) {
  require(mean > 0.0, "exponential jump marginal: mean must be positive");
  JumpMarginal m;
  m.kind = Exponential;
  m.mean = mean;
  return m;
}

double JumpMarginal::moment1() const {
  switch (kind) {
    case None: return 0.0;
    case Normal: return mean;
    case DoubleExponential: return 0.0;
    case Exponential: return mean;
  }
  return 0.0;
}

std::vector<int> JumpDistribution::jumping_coords() const {
  std::vector<int> out;
  for (int i = 0; i < dim(); i++)
    if (marginals[static_cast<std::size_t>(i)].jumping()) out.push_back(i);
  return out;
}

void JumpDiffusionModel::validate() const {
  require(dim >= 1, "model: dimension must be >= 1");
  require(static_cast<int>(drift.size()) == dim, "model: drift size != dim");
  require(static_cast<int>(diffusion_sq.size()) == dim,
          "model: diffusion_sq rows != dim");
  for (const auto& row : diffusion_sq)
    require(static_cast<int>(row.size()) == dim,
            "model: diffusion_sq is not square");
  for (int i = 0; i < dim; i++)
    for (int j = 0; j < i; j++)
      require(simplify(diffusion_sq[static_cast<std::size_t>(i)]
                                   [static_cast<std::size_t>(j)])
                  .same(simplify(diffusion_sq[static_cast<std::size_t>(j)]
                                             [static_cast<std::size_t>(i)])),
              "model: diffusion_sq must be symmetric");
  require(intensity.has_value() == jumps.has_value(),
          "model: intensity and jump distribution must both be present or absent");
  if (jumps) {
    require(jumps->dim() == dim, "model: jump distribution dimension != dim");
    require(!jumps->jumping_coords().empty(),
            "model: jump distribution has no jumping coordinate");
  }
  auto check_vars = [&](const Expr& e, const char* what) {
    require(e.max_state_index() < dim,
            std::string("model: ") + what + " references state beyond dim");
    require(!e.depends_on_time(),
            std::string("model: ") + what +
                " must not depend on time (time-homogeneous coefficients)");
  };
  for (const auto& e : drift) check_vars(e, "drift");
  for (const auto& row : diffusion_sq)
    for (const auto& e : row) check_vars(e, "diffusion_sq");
  if (intensity) check_vars(*intensity, "intensity");
  check_vars(discount, "discount");
}

// ---------------------------------------------------------------------------
// Catalog

namespace {

std::vector<double> unbounded(int d) {
  return std::vector<double>(static_cast<std::size_t>(d), -kInf);
}

double lognormal_jump_mean(double m_j, double s_j) {
  return std::exp(m_j + 0.5 * s_j * s_j) - 1.0;
}

}  // namespace

JumpDiffusionModel make_sv_model(const SvParams& p) {
  require(p.kappa > 0 && p.alpha > 0 && p.sigma_v > 0,
          "sv model: kappa, alpha, sigma_v must be positive");
  require(p.beta >= 0.5 && p.beta <= 1.0, "sv model: beta must lie in [1/2, 1]");
  require(std::abs(p.rho) < 1.0, "sv model: |rho| must be < 1");
  require(p.lambda0 >= 0 && p.lambda1 >= 0,
          "sv model: jump intensities must be nonnegative");

  const Expr v = Expr::state(1);
  JumpDiffusionModel m;
  m.dim = 2;
  m.name = p.beta == 0.5 ? "sqr" : (p.beta == 1.0 ? "garch" : "cev");
  const bool with_jumps = p.lambda0 > 0 || p.lambda1 > 0;
  const double jbar = with_jumps ? lognormal_jump_mean(p.m_j, p.s_j) : 0.0;

  Expr drift_s = Expr::constant(p.r - p.q) - 0.5 * v;
  if (with_jumps) {
    Expr lambda = Expr::constant(p.lambda0) + Expr::constant(p.lambda1) * v;
    drift_s = drift_s - lambda * jbar;
  }
  m.drift = {simplify(drift_s), simplify(p.kappa * (Expr::constant(p.alpha) - v))};

  Expr cross = simplify(p.rho * p.sigma_v * pow(v, p.beta + 0.5));
  m.diffusion_sq = {
      {v, cross},
      {cross, simplify(p.sigma_v * p.sigma_v * pow(v, 2.0 * p.beta))}};

  if (with_jumps) {
    m.intensity =
        simplify(Expr::constant(p.lambda0) + Expr::constant(p.lambda1) * v);
    JumpDistribution dist;
    dist.marginals = {JumpMarginal::normal(p.m_j, p.s_j), JumpMarginal::none()};
    m.jumps = dist;
    m.jump_mean = {jbar, 0.0};
  }
  m.state_lower_bound = {-kInf, 0.0};
  m.validate();
  return m;
}

JumpDiffusionModel make_logvol_model(const LogVolParams& p) {
  require(p.kappa > 0 && p.sigma_v > 0,
          "logvol model: kappa and sigma_v must be positive");
  require(std::abs(p.rho) < 1.0, "logvol model: |rho| must be < 1");
  require(p.lambda0 >= 0 && p.lambda1 >= 0,
          "logvol model: jump intensities must be nonnegative");

  const Expr h = Expr::state(1);
  const Expr v = exp(h);
  JumpDiffusionModel m;
  m.dim = 2;
  m.name = "logvol";
  const bool with_jumps = p.lambda0 > 0 || p.lambda1 > 0;
  const double jbar = with_jumps ? lognormal_jump_mean(p.m_j, p.s_j) : 0.0;

  Expr drift_s = Expr::constant(p.r - p.q) - 0.5 * v;
  if (with_jumps) {
    Expr lambda = Expr::constant(p.lambda0) + Expr::constant(p.lambda1) * v;
    drift_s = drift_s - lambda * jbar;
  }
  m.drift = {simplify(drift_s), simplify(p.kappa * (Expr::constant(p.alpha) - h))};

  Expr cross = simplify(p.rho * p.sigma_v * sqrt(v));
  m.diffusion_sq = {{v, cross},
                    {cross, Expr::constant(p.sigma_v * p.sigma_v)}};

  if (with_jumps) {
    m.intensity =
        simplify(Expr::constant(p.lambda0) + Expr::constant(p.lambda1) * v);
    JumpDistribution dist;
    dist.marginals = {JumpMarginal::normal(p.m_j, p.s_j), JumpMarginal::none()};
    m.jumps = dist;
    m.jump_mean = {jbar, 0.0};
  }
  m.state_lower_bound = unbounded(2);
  m.validate();
  return m;
}

JumpDiffusionModel make_two_factor(const TwoFactorParams& p) {
  require(p.kappa_v > 0 && p.sigma_v > 0 && p.kappa_m > 0 && p.alpha_m > 0 &&
              p.sigma_m > 0,
          "two-factor model: positivity constraints violated");
  require(std::abs(p.rho) < 1.0, "two-factor model: |rho| must be < 1");
  require(p.lambda0 >= 0 && p.lambda1 >= 0 && p.lambda2 >= 0,
          "two-factor model: jump intensities must be nonnegative");

  const Expr v = Expr::state(1);
  const Expr mm = Expr::state(2);
  JumpDiffusionModel m;
  m.dim = 3;
  m.name = "two_factor";
  const bool with_jumps = p.lambda0 > 0 || p.lambda1 > 0 || p.lambda2 > 0;
  const double jbar = with_jumps ? lognormal_jump_mean(p.m_j, p.s_j) : 0.0;

  Expr drift_s = Expr::constant(p.r - p.q) - 0.5 * v;
  Expr drift_v = p.kappa_v * (mm - v);
  if (with_jumps) {
    Expr lambda = Expr::constant(p.lambda0) + Expr::constant(p.lambda1) * v +
                  Expr::constant(p.lambda2) * mm;
    drift_s = drift_s - lambda * jbar;
    m.intensity = simplify(lambda);
    JumpDistribution dist;
    dist.marginals = {JumpMarginal::normal(p.m_j, p.s_j),
                      p.mu_jv > 0 ? JumpMarginal::exponential(p.mu_jv)
                                  : JumpMarginal::none(),
                      JumpMarginal::none()};
    m.jumps = dist;
    m.jump_mean = {jbar, p.mu_jv, 0.0};
  }
  m.drift = {simplify(drift_s), simplify(drift_v),
             simplify(p.kappa_m * (Expr::constant(p.alpha_m) - mm))};

  Expr cross_sv = simplify(p.rho * p.sigma_v * v);  // sqrt(v) * sigma_v sqrt(v) rho
  const Expr zero = Expr::constant(0.0);
  m.diffusion_sq = {
      {v, cross_sv, zero},
      {cross_sv, simplify(p.sigma_v * p.sigma_v * v), zero},
      {zero, zero, simplify(p.sigma_m * p.sigma_m * mm)}};
  m.state_lower_bound = {-kInf, 0.0, 0.0};
  m.validate();
  return m;
}

JumpDiffusionModel make_bm_auxiliary(
    const std::vector<double>& mu0,
    const std::vector<std::vector<double>>& sigma0_sq) {
  const int d = static_cast<int>(mu0.size());
  require(d >= 1, "bm auxiliary: dimension must be >= 1");
  require(static_cast<int>(sigma0_sq.size()) == d,
          "bm auxiliary: sigma0_sq dimension mismatch");
  Eigen::MatrixXd S(d, d);
  for (int i = 0; i < d; i++) {
    require(static_cast<int>(sigma0_sq[static_cast<std::size_t>(i)].size()) == d,
            "bm auxiliary: sigma0_sq is not square");
    for (int j = 0; j < d; j++)
      S(i, j) = sigma0_sq[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  require(llt.info() == Eigen::Success,
          "bm auxiliary: sigma0_sq must be symmetric positive definite");

  JumpDiffusionModel m;
  m.dim = d;
  m.name = "bm";
  for (int i = 0; i < d; i++)
    m.drift.push_back(Expr::constant(mu0[static_cast<std::size_t>(i)]));
  for (int i = 0; i < d; i++) {
    std::vector<Expr> row;
    for (int j = 0; j < d; j++)
      row.push_back(Expr::constant(
          sigma0_sq[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    m.diffusion_sq.push_back(std::move(row));
  }
  m.state_lower_bound = unbounded(d);
  m.validate();
  return m;
}

JumpDiffusionModel make_ou(double kappa, double alpha, double sigma) {
  require(kappa > 0 && sigma > 0, "ou model: kappa and sigma must be positive");
  const Expr x = Expr::state(0);
  JumpDiffusionModel m;
  m.dim = 1;
  m.name = "ou";
  m.drift = {simplify(kappa * (Expr::constant(alpha) - x))};
  m.diffusion_sq = {{Expr::constant(sigma * sigma)}};
  m.state_lower_bound = unbounded(1);
  m.validate();
  return m;
}

JumpDiffusionModel make_cir(double kappa, double alpha, double sigma) {
  require(kappa > 0 && alpha > 0 && sigma > 0,
          "cir model: parameters must be positive");
  const Expr v = Expr::state(0);
  JumpDiffusionModel m;
  m.dim = 1;
  m.name = "cir";
  m.drift = {simplify(kappa * (Expr::constant(alpha) - v))};
  m.diffusion_sq = {{simplify(sigma * sigma * v)}};
  m.state_lower_bound = {0.0};
  m.validate();
  return m;
}

JumpDiffusionModel make_merton(double sigma, double r, double q, double lambda,
                               double m_j, double s_j) {
  require(sigma > 0, "merton model: sigma must be positive");
  require(lambda >= 0, "merton model: lambda must be nonnegative");
  JumpDiffusionModel m;
  m.dim = 1;
  m.name = "merton";
  const double jbar = lambda > 0 ? lognormal_jump_mean(m_j, s_j) : 0.0;
  m.drift = {Expr::constant(r - q - 0.5 * sigma * sigma - lambda * jbar)};
  m.diffusion_sq = {{Expr::constant(sigma * sigma)}};
  if (lambda > 0) {
    m.intensity = Expr::constant(lambda);
    JumpDistribution dist;
    dist.marginals = {JumpMarginal::normal(m_j, s_j)};
    m.jumps = dist;
    m.jump_mean = {jbar};
  }
  m.state_lower_bound = unbounded(1);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Smoothers

Smoother gaussian_density_smoother(
    const std::vector<double>& y, const std::vector<double>& mu0,
    const std::vector<std::vector<double>>& sigma0_sq) {
  std::vector<Expr> ye;
  ye.reserve(y.size());
  for (double v : y) ye.push_back(Expr::constant(v));
  return gaussian_density_smoother(ye, mu0, sigma0_sq);
}

Smoother gaussian_density_smoother(
    const std::vector<Expr>& y, const std::vector<double>& mu0,
    const std::vector<std::vector<double>>& sigma0_sq) {
  const int d = static_cast<int>(mu0.size());
  require(static_cast<int>(y.size()) == d,
          "gaussian smoother: y dimension mismatch");
  Eigen::MatrixXd S(d, d);
  for (int i = 0; i < d; i++)
    for (int j = 0; j < d; j++)
      S(i, j) = sigma0_sq.at(static_cast<std::size_t>(i))
                    .at(static_cast<std::size_t>(j));
  double det = S.determinant();
  require(det > 0.0, "gaussian smoother: sigma0_sq must be positive definite");
  Eigen::MatrixXd P = S.inverse();  // precision matrix

  const Expr t = Expr::time();
  // Residuals r_i = y_i - x_i - t mu0_i.
  std::vector<Expr> r;
  for (int i = 0; i < d; i++) {
    Expr ri = y[static_cast<std::size_t>(i)] - Expr::state(i);
    if (mu0[static_cast<std::size_t>(i)] != 0.0)
      ri = ri - t * mu0[static_cast<std::size_t>(i)];
    r.push_back(simplify(ri));
  }
  // Quadratic form r' P r.
  std::vector<Expr> terms;
  for (int i = 0; i < d; i++)
    for (int j = 0; j < d; j++)
      if (P(i, j) != 0.0)
        terms.push_back(s_mul(
            s_mul(r[static_cast<std::size_t>(i)], r[static_cast<std::size_t>(j)]),
            Expr::constant(P(i, j))));
  Expr quad = balanced_sum(terms);

  const double two_pi = 6.2831853071795864769;
  double norm_const = std::pow(two_pi, -0.5 * d) / std::sqrt(det);
  Expr density = Expr::constant(norm_const) * pow(t, -0.5 * d) *
                 exp(-(quad / (2.0 * t)));

  Smoother sm;
  sm.kind = Smoother::GaussianDensity;
  sm.expr = simplify(density);
  sm.describe = "gaussian_density(d=" + std::to_string(d) + ")";
  return sm;
}

Smoother bs_call_smoother(double strike, double rate, double sigma0, int coord) {
  require(strike > 0.0 && sigma0 > 0.0,
          "bs call smoother: strike and sigma0 must be positive");
  require(coord >= 0, "bs call smoother: bad coordinate index");
  const Expr x = Expr::state(coord);
  const Expr t = Expr::time();
  const Expr vol = Expr::constant(sigma0) * sqrt(t);
  const Expr base = (x - std::log(strike) + rate * t) / vol;
  const Expr half_vol = Expr::constant(0.5 * sigma0) * sqrt(t);
  const Expr d_plus = base + half_vol;
  const Expr d_minus = base - half_vol;
  Expr u = exp(x + rate * t) * normal_cdf(d_plus) -
           strike * normal_cdf(d_minus);

  Smoother sm;
  sm.kind = Smoother::BsCallPayoff;
  sm.expr = simplify(u);
  // (exp(x) - K)^+ = ((exp(x) - K) + |exp(x) - K|) / 2
  Expr intrinsic = exp(x) - strike;
  sm.payoff_limit = simplify(0.5 * (intrinsic + abs(intrinsic)));
  sm.describe = "bs_call(K=" + std::to_string(strike) + ")";
  sm.strike = strike;
  sm.rate = rate;
  sm.sigma0 = sigma0;
  sm.coord = coord;
  return sm;
}

Smoother custom_smoother(const Expr& expr) {
  Smoother sm;
  sm.kind = Smoother::Custom;
  sm.expr = expr;
  sm.describe = "custom";
  return sm;
}

double bs_expected_call(double log_spot, double strike, double rate,
                        double sigma, double t) {
  if (t <= 0.0) return std::max(std::exp(log_spot) - strike, 0.0);
  double vol = sigma * std::sqrt(t);
  double d_plus = (log_spot - std::log(strike) + (rate + 0.5 * sigma * sigma) * t) / vol;
  double d_minus = d_plus - vol;
  return std::exp(log_spot + rate * t) * normal_cdf(d_plus) -
         strike * normal_cdf(d_minus);
}

// ---------------------------------------------------------------------------
// JSON model specs

namespace {

using nlohmann::json;

[[noreturn]] void spec_fail(const std::string& field, const std::string& msg) {
  throw std::invalid_argument("model spec: field '" + field + "': " + msg);
}

Expr parse_field_expr(const json& j, const std::string& field) {
  if (!j.is_string()) spec_fail(field, "expected an expression string");
  try {
    return parse_expr(j.get<std::string>());
  } catch (const ParseError& e) {
    spec_fail(field, e.what());
  }
}

JumpMarginal parse_marginal(const json& j, const std::string& field) {
  const std::string dist = j.value("dist", "");
  const json params = j.value("params", json::object());
  if (dist == "normal")
    return JumpMarginal::normal(params.value("mean", 0.0),
                                params.value("sd", 0.0));
  if (dist == "double_exponential")
    return JumpMarginal::double_exponential(params.value("scale", 0.0));
  if (dist == "exponential")
    return JumpMarginal::exponential(params.value("mean", 0.0));
  spec_fail(field, "unknown jump distribution '" + dist + "'");
}

}  // namespace

JumpDiffusionModel parse_model_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  JumpDiffusionModel m;
  if (!j.contains("dim") || !j["dim"].is_number_integer())
    spec_fail("dim", "required integer");
  m.dim = j["dim"].get<int>();
  m.name = j.value("name", "custom");

  if (!j.contains("drift") || !j["drift"].is_array())
    spec_fail("drift", "required array of expression strings");
  for (std::size_t i = 0; i < j["drift"].size(); i++)
    m.drift.push_back(
        parse_field_expr(j["drift"][i], "drift[" + std::to_string(i) + "]"));

  if (!j.contains("diffusion_sq") || !j["diffusion_sq"].is_array())
    spec_fail("diffusion_sq", "required matrix of expression strings");
  for (std::size_t i = 0; i < j["diffusion_sq"].size(); i++) {
    const auto& row = j["diffusion_sq"][i];
    if (!row.is_array()) spec_fail("diffusion_sq", "rows must be arrays");
    std::vector<Expr> erow;
    for (std::size_t k = 0; k < row.size(); k++)
      erow.push_back(parse_field_expr(
          row[k],
          "diffusion_sq[" + std::to_string(i) + "][" + std::to_string(k) + "]"));
    m.diffusion_sq.push_back(std::move(erow));
  }

  if (j.contains("intensity") && !j["intensity"].is_null()) {
    m.intensity = parse_field_expr(j["intensity"], "intensity");
    if (!j.contains("jumps") || !j["jumps"].is_array() || j["jumps"].empty())
      spec_fail("jumps", "required non-empty array when intensity is set");
    JumpDistribution dist;
    dist.marginals.assign(static_cast<std::size_t>(m.dim), JumpMarginal::none());
    for (std::size_t i = 0; i < j["jumps"].size(); i++) {
      const auto& jj = j["jumps"][i];
      const std::string field = "jumps[" + std::to_string(i) + "]";
      if (!jj.contains("coord") || !jj["coord"].is_number_integer())
        spec_fail(field + ".coord", "required integer");
      int c = jj["coord"].get<int>();
      if (c < 0 || c >= m.dim) spec_fail(field + ".coord", "out of range");
      dist.marginals[static_cast<std::size_t>(c)] = parse_marginal(jj, field);
    }
    m.jumps = dist;
  }

  if (j.contains("discount") && !j["discount"].is_null())
    m.discount = parse_field_expr(j["discount"], "discount");

  if (j.contains("jump_mean")) {
    for (const auto& v : j["jump_mean"]) m.jump_mean.push_back(v.get<double>());
  } else if (m.jumps) {
    for (const auto& mg : m.jumps->marginals) m.jump_mean.push_back(mg.moment1());
  }

  m.state_lower_bound = unbounded(m.dim);
  if (j.contains("state_lower_bound")) {
    const auto& lb = j["state_lower_bound"];
    if (!lb.is_array() || static_cast<int>(lb.size()) != m.dim)
      spec_fail("state_lower_bound", "must be an array of length dim");
    for (int i = 0; i < m.dim; i++)
      if (!lb[static_cast<std::size_t>(i)].is_null())
        m.state_lower_bound[static_cast<std::size_t>(i)] =
            lb[static_cast<std::size_t>(i)].get<double>();
  }

  m.validate();
  return m;
}

std::string model_to_json(const JumpDiffusionModel& m) {
  json j;
  j["dim"] = m.dim;
  j["name"] = m.name;
  json drift = json::array();
  for (const auto& e : m.drift) drift.push_back(to_string(e));
  j["drift"] = drift;
  json diff = json::array();
  for (const auto& row : m.diffusion_sq) {
    json r = json::array();
    for (const auto& e : row) r.push_back(to_string(e));
    diff.push_back(r);
  }
  j["diffusion_sq"] = diff;
  if (m.intensity) {
    j["intensity"] = to_string(*m.intensity);
    json jumps = json::array();
    for (int c = 0; c < m.dim; c++) {
      const auto& mg = m.jumps->marginals[static_cast<std::size_t>(c)];
      if (!mg.jumping()) continue;
      json one;
      one["coord"] = c;
      switch (mg.kind) {
        case JumpMarginal::Normal:
          one["dist"] = "normal";
          one["params"] = {{"mean", mg.mean}, {"sd", mg.sd}};
          break;
        case JumpMarginal::DoubleExponential:
          one["dist"] = "double_exponential";
          one["params"] = {{"scale", mg.scale}};
          break;
        case JumpMarginal::Exponential:
          one["dist"] = "exponential";
          one["params"] = {{"mean", mg.mean}};
          break;
        case JumpMarginal::None:
          break;
      }
      jumps.push_back(one);
    }
    j["jumps"] = jumps;
  } else {
    j["intensity"] = nullptr;
  }
  j["discount"] = to_string(m.discount);
  if (!m.jump_mean.empty()) j["jump_mean"] = m.jump_mean;
  return j.dump(2);
}

}  // namespace momex
