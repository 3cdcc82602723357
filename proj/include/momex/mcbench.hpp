#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "momex/model.hpp"

namespace momex {

struct MCConfig {
  std::int64_t paths = 200'000;
  int steps_per_year = 1200;
  std::uint64_t seed = 0;
  bool antithetic = true;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t paths_used = 0;
  double elapsed_seconds = 0.0;
  MCConfig config;
};

/// Terminal states of an Euler run, retained so several payoffs (e.g. a
/// strike grid under common random numbers) can be reduced from one
/// simulation. Path i occupies states[i*dim .. i*dim+dim). Antithetic pairs
/// are adjacent (2k, 2k+1) and reductions count each pair once.
struct TerminalBatch {
  int dim = 0;
  std::int64_t paths = 0;
  bool antithetic = false;
  std::vector<double> states;
  std::vector<double> discount;          // per-path discount factor
  std::vector<std::uint32_t> jump_counts;
  double elapsed_seconds = 0.0;
  MCConfig config;

  std::span<const double> state(std::int64_t i) const {
    return {states.data() + i * dim, static_cast<std::size_t>(dim)};
  }

  /// Deterministic reduction (pairwise summation in fixed order) of
  /// discount_i * payoff(state_i).
  template <typename F>
  MCEstimate estimate(F&& payoff) const;
};

/// Euler scheme with per-step Bernoulli(lambda dt) jump arrivals and full
/// truncation: coordinates with a finite lower bound are clamped inside the
/// coefficient functions, while the state itself evolves unclamped.
/// Deterministic for fixed seed at any thread count (counter-based RNG
/// streams keyed by path index).
TerminalBatch simulate_terminal_batch(const JumpDiffusionModel& model, double t,
                                      std::span<const double> x0,
                                      const MCConfig& cfg);

/// Discounted conditional moment E[exp(-int r) f(x_t)] with standard error.
MCEstimate simulate_moment(const JumpDiffusionModel& model, const Expr& f,
                           double t, std::span<const double> x0,
                           const MCConfig& cfg);

struct DensityHistogram {
  std::vector<double> edges;      // nbins + 1
  std::vector<double> density;    // per-bin density estimate
  std::vector<double> std_error;  // multinomial
  double inside_fraction = 0.0;
  std::int64_t paths_used = 0;
};

/// Histogram estimate of the transition density of coordinate `coord`.
/// Antithetic pairing is disabled internally so the multinomial standard
/// errors are exact.
DensityHistogram simulate_density_cell(const JumpDiffusionModel& model, double t,
                                       std::span<const double> x0,
                                       std::span<const double> edges, int coord,
                                       const MCConfig& cfg);

/// Pairwise (cascade) sum; deterministic and accurate for long vectors.
double pairwise_sum(std::span<const double> v);

template <typename F>
MCEstimate TerminalBatch::estimate(F&& payoff) const {
  const std::int64_t units = antithetic ? paths / 2 : paths;
  std::vector<double> values(static_cast<std::size_t>(units));
  for (std::int64_t u = 0; u < units; u++) {
    if (antithetic) {
      double a = discount[static_cast<std::size_t>(2 * u)] * payoff(state(2 * u));
      double b = discount[static_cast<std::size_t>(2 * u + 1)] * payoff(state(2 * u + 1));
      values[static_cast<std::size_t>(u)] = 0.5 * (a + b);
    } else {
      values[static_cast<std::size_t>(u)] =
          discount[static_cast<std::size_t>(u)] * payoff(state(u));
    }
  }
  double mean = pairwise_sum(values) / static_cast<double>(units);
  double ss = 0.0;
  {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); i++) {
      double d = values[i] - mean;
      sq[i] = d * d;
    }
    ss = pairwise_sum(sq);
  }
  MCEstimate est;
  est.mean = mean;
  est.std_error = units > 1
                      ? std::sqrt(ss / (static_cast<double>(units) - 1.0) /
                                  static_cast<double>(units))
                      : 0.0;
  est.paths_used = paths;
  est.elapsed_seconds = elapsed_seconds;
  est.config = config;
  return est;
}

}  // namespace momex
