#include "momex/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "momex/philox.hpp"

namespace momex {

std::string QuadratureProvenance::describe() const {
  switch (kind) {
    case GaussHermite: return "gauss_hermite(" + std::to_string(n) + ")";
    case GaussLaguerre: return "gauss_laguerre(" + std::to_string(n) + ")";
    case MonteCarlo:
      return "monte_carlo(" + std::to_string(n) + ", seed=" +
             std::to_string(seed) + ")";
  }
  return "?";
}

double QuadratureRule::weight_sum() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

namespace {

// Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
// matrix of the three-term recurrence. The eigenvector route to the weights
// loses relative accuracy on extreme tail weights (absolute eigensolver
// noise exceeds them), so nodes are polished by Newton steps on the
// orthonormal recurrence and weights computed as mu0 / sum_k p_k(x)^2,
// which is relatively accurate component by component.
Rule1d golub_welsch(const std::vector<double>& diag,
                    const std::vector<double>& offdiag, double offdiag_n,
                    double mu0) {
  const int n = static_cast<int>(diag.size());
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; i++) {
    J(i, i) = diag[static_cast<std::size_t>(i)];
    if (i + 1 < n) {
      J(i, i + 1) = offdiag[static_cast<std::size_t>(i)];
      J(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("golub_welsch: eigensolver failed to converge");

  // orthonormal polynomials p_0..p_n at x, plus the derivative of p_n
  auto recurrence = [&](double x, double* p, double* dpn) {
    double pm1 = 0.0, pk = 1.0;
    double dm1 = 0.0, dk = 0.0;
    p[0] = pk;
    for (int k = 0; k < n; k++) {
      double c_k = k > 0 ? offdiag[static_cast<std::size_t>(k - 1)] : 0.0;
      double c_k1 = k + 1 < n ? offdiag[static_cast<std::size_t>(k)] : offdiag_n;
      double pk1 = ((x - diag[static_cast<std::size_t>(k)]) * pk - c_k * pm1) / c_k1;
      double dk1 = ((x - diag[static_cast<std::size_t>(k)]) * dk + pk - c_k * dm1) / c_k1;
      pm1 = pk;
      pk = pk1;
      dm1 = dk;
      dk = dk1;
      if (k + 1 <= n) p[k + 1] = pk;
    }
    *dpn = dk;
  };

  Rule1d rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  std::vector<double> p(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; i++) {
    double x = es.eigenvalues()(i);
    double dpn = 0.0;
    for (int iter = 0; iter < 3; iter++) {
      recurrence(x, p.data(), &dpn);
      if (dpn == 0.0) break;
      double step = p[static_cast<std::size_t>(n)] / dpn;
      x -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    recurrence(x, p.data(), &dpn);
    double norm2 = 0.0;
    for (int k = 0; k < n; k++)
      norm2 += p[static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)];
    rule.nodes[static_cast<std::size_t>(i)] = x;
    rule.weights[static_cast<std::size_t>(i)] = mu0 / norm2;
  }
  return rule;
}

void check_n(int n) {
  if (n < 1 || n > 100)
    throw std::invalid_argument("quadrature size must be in [1, 100]");
}

}  // namespace

Rule1d gauss_hermite(int n) {
  check_n(n);
  std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
  std::vector<double> offdiag;
  for (int k = 1; k < n; k++) offdiag.push_back(std::sqrt(k / 2.0));
  const double sqrt_pi = 1.7724538509055160273;
  Rule1d rule = golub_welsch(diag, offdiag, std::sqrt(n / 2.0), sqrt_pi);
  // enforce bitwise +- symmetry so odd integrands cancel exactly
  for (int i = 0; i < n / 2; i++) {
    std::size_t lo = static_cast<std::size_t>(i);
    std::size_t hi = static_cast<std::size_t>(n - 1 - i);
    double x = 0.5 * (rule.nodes[hi] - rule.nodes[lo]);
    double w = 0.5 * (rule.weights[lo] + rule.weights[hi]);
    rule.nodes[lo] = -x;
    rule.nodes[hi] = x;
    rule.weights[lo] = w;
    rule.weights[hi] = w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

Rule1d gauss_laguerre(int n) {
  check_n(n);
  std::vector<double> diag, offdiag;
  for (int k = 0; k < n; k++) diag.push_back(2.0 * k + 1.0);
  for (int k = 1; k < n; k++) offdiag.push_back(static_cast<double>(k));
  return golub_welsch(diag, offdiag, static_cast<double>(n), 1.0);
}

double hermite_moment(int k) {
  // m_k = int x^k exp(-x^2) dx: m_0 = sqrt(pi), odd zero,
  // m_k = (k-1)/2 m_{k-2}.
  if (k % 2 == 1) return 0.0;
  double m = 1.7724538509055160273;
  for (int j = 2; j <= k; j += 2) m *= (j - 1) / 2.0;
  return m;
}

double laguerre_moment(int k) {
  // m_k = int_0^inf x^k exp(-x) dx = k!
  double m = 1.0;
  for (int j = 1; j <= k; j++) m *= j;
  return m;
}

namespace {

// One-coordinate probability rule for a marginal: nodes are displacement
// values, weights sum to 1.
Rule1d marginal_rule(const JumpMarginal& m, int n) {
  switch (m.kind) {
    case JumpMarginal::Normal: {
      Rule1d gh = gauss_hermite(n);
      const double inv_sqrt_pi = 0.5641895835477562869;
      const double sqrt2 = 1.4142135623730950488;
      Rule1d out;
      for (std::size_t i = 0; i < gh.nodes.size(); i++) {
        out.nodes.push_back(m.mean + sqrt2 * m.sd * gh.nodes[i]);
        out.weights.push_back(gh.weights[i] * inv_sqrt_pi);
      }
      return out;
    }
    case JumpMarginal::DoubleExponential: {
      // int f(c) exp(-|c|/b)/(2b) dc
      //   = (1/2) int_0^inf [f(bc) + f(-bc)] exp(-c) dc.
      Rule1d gl = gauss_laguerre(n);
      Rule1d out;
      for (std::size_t i = 0; i < gl.nodes.size(); i++) {
        out.nodes.push_back(m.scale * gl.nodes[i]);
        out.weights.push_back(0.5 * gl.weights[i]);
        out.nodes.push_back(-m.scale * gl.nodes[i]);
        out.weights.push_back(0.5 * gl.weights[i]);
      }
      return out;
    }
    case JumpMarginal::Exponential: {
      Rule1d gl = gauss_laguerre(n);
      Rule1d out;
      for (std::size_t i = 0; i < gl.nodes.size(); i++) {
        out.nodes.push_back(m.mean * gl.nodes[i]);
        out.weights.push_back(gl.weights[i]);
      }
      return out;
    }
    case JumpMarginal::None:
      break;
  }
  throw std::invalid_argument("marginal_rule: unsupported jump distribution");
}

}  // namespace

QuadratureRule jump_rule(const JumpDistribution& dist, int n) {
  const auto coords = dist.jumping_coords();
  if (coords.empty())
    throw std::invalid_argument("jump_rule: distribution has no jumping coordinate");
  const int d = dist.dim();
  QuadratureRule rule;
  rule.provenance = {QuadratureProvenance::GaussHermite, n, 0};
  for (const auto& m : dist.marginals)
    if (m.kind == JumpMarginal::DoubleExponential ||
        m.kind == JumpMarginal::Exponential)
      rule.provenance.kind = QuadratureProvenance::GaussLaguerre;

  rule.nodes.push_back(std::vector<double>(static_cast<std::size_t>(d), 0.0));
  rule.weights.push_back(1.0);
  for (int c : coords) {
    Rule1d r1 = marginal_rule(dist.marginals[static_cast<std::size_t>(c)], n);
    std::vector<std::vector<double>> nodes;
    std::vector<double> weights;
    nodes.reserve(rule.nodes.size() * r1.nodes.size());
    for (std::size_t i = 0; i < rule.nodes.size(); i++) {
      for (std::size_t j = 0; j < r1.nodes.size(); j++) {
        auto node = rule.nodes[i];
        node[static_cast<std::size_t>(c)] = r1.nodes[j];
        nodes.push_back(std::move(node));
        weights.push_back(rule.weights[i] * r1.weights[j]);
      }
    }
    rule.nodes = std::move(nodes);
    rule.weights = std::move(weights);
  }
  return rule;
}

QuadratureRule monte_carlo_rule(const JumpDistribution& dist, int draws,
                                std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("monte_carlo_rule: draws < 1");
  const auto coords = dist.jumping_coords();
  if (coords.empty())
    throw std::invalid_argument("monte_carlo_rule: no jumping coordinate");
  QuadratureRule rule;
  rule.provenance = {QuadratureProvenance::MonteCarlo, draws, seed};
  const int d = dist.dim();
  for (int s = 0; s < draws; s++) {
    Philox rng(seed, static_cast<std::uint64_t>(s));
    std::vector<double> node(static_cast<std::size_t>(d), 0.0);
    for (int c : coords) {
      const auto& m = dist.marginals[static_cast<std::size_t>(c)];
      double v = 0.0;
      switch (m.kind) {
        case JumpMarginal::Normal:
          v = m.mean + m.sd * rng.normal();
          break;
        case JumpMarginal::Exponential:
          v = -m.mean * std::log(rng.uniform());
          break;
        case JumpMarginal::DoubleExponential: {
          double u = 2.0 * rng.uniform() - 1.0;
          v = (u < 0 ? 1.0 : -1.0) * m.scale * std::log1p(-std::abs(u));
          break;
        }
        case JumpMarginal::None:
          break;
      }
      node[static_cast<std::size_t>(c)] = v;
    }
    rule.nodes.push_back(std::move(node));
    rule.weights.push_back(1.0 / draws);
  }
  return rule;
}

}  // namespace momex
