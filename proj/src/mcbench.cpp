#include "momex/mcbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "momex/philox.hpp"

namespace momex {

void MCConfig::validate() const {
  if (paths < 1) throw std::invalid_argument("mc: paths must be >= 1");
  if (steps_per_year < 1)
    throw std::invalid_argument("mc: steps_per_year must be >= 1");
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

namespace {

// Compiled model coefficients for the Euler loop.
struct CompiledModel {
  int dim;
  std::vector<CompiledExpr> drift;
  std::vector<CompiledExpr> diff_sq;  // row-major upper triangle included
  CompiledExpr intensity;
  bool has_jumps = false;
  bool has_discount = false;
  CompiledExpr discount;
  std::vector<double> lower;
  std::vector<JumpMarginal> marginals;

  explicit CompiledModel(const JumpDiffusionModel& m) : dim(m.dim) {
    for (const auto& e : m.drift) drift.emplace_back(e);
    for (const auto& row : m.diffusion_sq)
      for (const auto& e : row) diff_sq.emplace_back(e);
    if (m.has_jumps()) {
      has_jumps = true;
      intensity = CompiledExpr(*m.intensity);
      marginals = m.jumps->marginals;
    }
    if (!m.discount.is_constant(0.0)) {
      has_discount = true;
      discount = CompiledExpr(m.discount);
    }
    lower = m.state_lower_bound;
    if (lower.empty())
      lower.assign(static_cast<std::size_t>(dim),
                   -std::numeric_limits<double>::infinity());
  }
};

// Lower Cholesky factor of a (clamped) PSD matrix, dimension <= 3 in the
// catalog but written generically.
void cholesky_psd(const std::vector<double>& a, int n, std::vector<double>& l) {
  l.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; i++) {
    for (int j = 0; j <= i; j++) {
      double s = a[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                   static_cast<std::size_t>(j)];
      for (int k = 0; k < j; k++)
        s -= l[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(k)] *
             l[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) + static_cast<std::size_t>(k)];
      if (i == j) {
        l[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] =
            s > 0.0 ? std::sqrt(s) : 0.0;
      } else {
        double d = l[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
                     static_cast<std::size_t>(j)];
        l[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)] =
            d > 0.0 ? s / d : 0.0;
      }
    }
  }
}

struct PathWorkspace {
  std::vector<double> x, x_trunc, mu, s2, chol, z, jump;
  std::vector<double> scratch;
};

// One Euler path. Streams: Brownian draws from `brown`, jump arrivals and
// sizes from `jumps`; the antithetic partner re-runs with flip = -1 on the
// same streams, flipping only the Brownian increments.
void run_path(const CompiledModel& cm, double t, int n_steps,
              std::span<const double> x0, double flip, Philox brown,
              Philox jumps, PathWorkspace& ws, double* out_state,
              double* out_discount, std::uint32_t* out_jump_count) {
  const int d = cm.dim;
  const double dt = t / n_steps;
  const double sqrt_dt = std::sqrt(dt);
  ws.x.assign(x0.begin(), x0.end());
  ws.x_trunc.resize(static_cast<std::size_t>(d));
  ws.mu.resize(static_cast<std::size_t>(d));
  ws.s2.resize(static_cast<std::size_t>(d) * static_cast<std::size_t>(d));
  ws.z.resize(static_cast<std::size_t>(d));
  ws.jump.resize(static_cast<std::size_t>(d));
  double log_discount = 0.0;
  std::uint32_t jump_count = 0;

  for (int step = 0; step < n_steps; step++) {
    for (int i = 0; i < d; i++)
      ws.x_trunc[static_cast<std::size_t>(i)] =
          std::max(ws.x[static_cast<std::size_t>(i)], cm.lower[static_cast<std::size_t>(i)]);

    for (int i = 0; i < d; i++)
      ws.mu[static_cast<std::size_t>(i)] = cm.drift[static_cast<std::size_t>(i)](ws.x_trunc, 0.0, ws.scratch);
    for (int i = 0; i < d * d; i++)
      ws.s2[static_cast<std::size_t>(i)] =
          cm.diff_sq[static_cast<std::size_t>(i)](ws.x_trunc, 0.0, ws.scratch);
    cholesky_psd(ws.s2, d, ws.chol);

    if (cm.has_discount)
      log_discount -= cm.discount(ws.x_trunc, 0.0, ws.scratch) * dt;

    for (int i = 0; i < d; i++) ws.z[static_cast<std::size_t>(i)] = flip * brown.normal();

    for (int i = 0; i < d; i++) {
      double dw = 0.0;
      for (int j = 0; j <= i; j++)
        dw += ws.chol[static_cast<std::size_t>(i) * static_cast<std::size_t>(d) +
                      static_cast<std::size_t>(j)] * ws.z[static_cast<std::size_t>(j)];
      ws.x[static_cast<std::size_t>(i)] += ws.mu[static_cast<std::size_t>(i)] * dt + sqrt_dt * dw;
    }

    if (cm.has_jumps) {
      double lam = cm.intensity(ws.x_trunc, 0.0, ws.scratch);
      double p_jump = std::min(1.0, std::max(0.0, lam) * dt);
      double u = jumps.uniform();
      if (u < p_jump) {
        jump_count++;
        for (int i = 0; i < d; i++) {
          const JumpMarginal& m = cm.marginals[static_cast<std::size_t>(i)];
          double j = 0.0;
          switch (m.kind) {
            case JumpMarginal::None: break;
            case JumpMarginal::Normal:
              j = m.mean + m.sd * jumps.normal();
              break;
            case JumpMarginal::Exponential:
              j = -m.mean * std::log(jumps.uniform());
              break;
            case JumpMarginal::DoubleExponential: {
              double w = 2.0 * jumps.uniform() - 1.0;
              j = (w < 0 ? 1.0 : -1.0) * m.scale * std::log1p(-std::abs(w));
              break;
            }
          }
          ws.x[static_cast<std::size_t>(i)] += j;
        }
      }
    }
  }
  for (int i = 0; i < d; i++) out_state[i] = ws.x[static_cast<std::size_t>(i)];
  *out_discount = cm.has_discount ? std::exp(log_discount) : 1.0;
  *out_jump_count = jump_count;
}

}  // namespace

TerminalBatch simulate_terminal_batch(const JumpDiffusionModel& model, double t,
                                      std::span<const double> x0,
                                      const MCConfig& cfg) {
  cfg.validate();
  model.validate();
  if (t <= 0.0) throw std::invalid_argument("mc: horizon t must be positive");
  if (static_cast<int>(x0.size()) != model.dim)
    throw std::invalid_argument("mc: initial state dimension mismatch");
  if (!model.state_lower_bound.empty()) {
    for (int i = 0; i < model.dim; i++)
      if (x0[static_cast<std::size_t>(i)] <
          model.state_lower_bound[static_cast<std::size_t>(i)])
        throw std::invalid_argument(
            "mc: initial state below the admissible bound");
  }

  const auto t_start = std::chrono::steady_clock::now();
  CompiledModel cm(model);

  TerminalBatch batch;
  batch.dim = model.dim;
  batch.antithetic = cfg.antithetic;
  std::int64_t paths = cfg.paths;
  if (cfg.antithetic && paths % 2 != 0) paths++;  // whole pairs
  batch.paths = paths;
  batch.config = cfg;
  batch.states.resize(static_cast<std::size_t>(paths) * static_cast<std::size_t>(model.dim));
  batch.discount.resize(static_cast<std::size_t>(paths));
  batch.jump_counts.resize(static_cast<std::size_t>(paths));

  const double steps_exact = static_cast<double>(cfg.steps_per_year) * t;
  const int n_steps = std::max(1, static_cast<int>(std::llround(std::ceil(steps_exact - 1e-9))));

  const std::int64_t units = cfg.antithetic ? paths / 2 : paths;
  int n_threads = cfg.threads > 0
                      ? cfg.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  if (n_threads < 1) n_threads = 1;
  n_threads = static_cast<int>(
      std::min<std::int64_t>(n_threads, std::max<std::int64_t>(1, units)));

  auto worker = [&](std::int64_t lo, std::int64_t hi) {
    PathWorkspace ws;
    for (std::int64_t u = lo; u < hi; u++) {
      Philox brown(cfg.seed, static_cast<std::uint64_t>(2 * u));
      Philox jumps(cfg.seed, static_cast<std::uint64_t>(2 * u + 1));
      if (cfg.antithetic) {
        std::int64_t p0 = 2 * u, p1 = 2 * u + 1;
        run_path(cm, t, n_steps, x0, +1.0, brown, jumps, ws,
                 batch.states.data() + p0 * model.dim,
                 &batch.discount[static_cast<std::size_t>(p0)],
                 &batch.jump_counts[static_cast<std::size_t>(p0)]);
        run_path(cm, t, n_steps, x0, -1.0, brown, jumps, ws,
                 batch.states.data() + p1 * model.dim,
                 &batch.discount[static_cast<std::size_t>(p1)],
                 &batch.jump_counts[static_cast<std::size_t>(p1)]);
      } else {
        run_path(cm, t, n_steps, x0, +1.0, brown, jumps, ws,
                 batch.states.data() + u * model.dim,
                 &batch.discount[static_cast<std::size_t>(u)],
                 &batch.jump_counts[static_cast<std::size_t>(u)]);
      }
    }
  };

  if (n_threads == 1) {
    worker(0, units);
  } else {
    std::vector<std::thread> threads;
    std::int64_t chunk = (units + n_threads - 1) / n_threads;
    for (int k = 0; k < n_threads; k++) {
      std::int64_t lo = k * chunk;
      std::int64_t hi = std::min<std::int64_t>(units, lo + chunk);
      if (lo >= hi) break;
      threads.emplace_back(worker, lo, hi);
    }
    for (auto& th : threads) th.join();
  }

  batch.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return batch;
}

MCEstimate simulate_moment(const JumpDiffusionModel& model, const Expr& f,
                           double t, std::span<const double> x0,
                           const MCConfig& cfg) {
  TerminalBatch batch = simulate_terminal_batch(model, t, x0, cfg);
  CompiledExpr payoff(f);
  std::vector<double> scratch;
  return batch.estimate([&](std::span<const double> x) {
    return payoff(x, 0.0, scratch);
  });
}

DensityHistogram simulate_density_cell(const JumpDiffusionModel& model, double t,
                                       std::span<const double> x0,
                                       std::span<const double> edges, int coord,
                                       const MCConfig& cfg) {
  if (edges.size() < 2)
    throw std::invalid_argument("density histogram: need at least one bin");
  if (coord < 0 || coord >= model.dim)
    throw std::invalid_argument("density histogram: bad coordinate");
  MCConfig plain = cfg;
  plain.antithetic = false;
  TerminalBatch batch = simulate_terminal_batch(model, t, x0, plain);

  const std::size_t nbins = edges.size() - 1;
  std::vector<std::int64_t> counts(nbins, 0);
  std::int64_t inside = 0;
  for (std::int64_t p = 0; p < batch.paths; p++) {
    double y = batch.state(p)[static_cast<std::size_t>(coord)];
    if (y < edges[0] || y >= edges[nbins]) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), y);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin()) - 1;
    if (bin >= nbins) bin = nbins - 1;
    counts[bin]++;
    inside++;
  }

  DensityHistogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.paths_used = batch.paths;
  h.inside_fraction = static_cast<double>(inside) / static_cast<double>(batch.paths);
  const double n = static_cast<double>(batch.paths);
  for (std::size_t b = 0; b < nbins; b++) {
    double width = edges[b + 1] - edges[b];
    double p_hat = static_cast<double>(counts[b]) / n;
    h.density.push_back(p_hat / width);
    h.std_error.push_back(std::sqrt(p_hat * (1.0 - p_hat) / n) / width);
  }
  return h;
}

}  // namespace momex
