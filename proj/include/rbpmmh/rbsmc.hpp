#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rbpmmh/kalman.hpp"
#include "rbpmmh/material.hpp"
#include "rbpmmh/rng.hpp"

namespace rbpmmh {

struct SmcOptions {
  int n_particles = 100;
  /// Resample when ESS < ess_threshold * n_particles.
  double ess_threshold = 0.5;
  int threads = 1;
  /// Draw the deviation path (FFBS for the Kalman backend). When false the
  /// result still carries the rho path and path_seed, so the path can be
  /// drawn later with sample_deviation_path().
  bool sample_path = true;
};

struct SmcResult {
  double log_lik_hat = 0.0;
  std::vector<double> sampled_rho_path;  ///< length K
  Eigen::MatrixXd sampled_delta_x;       ///< K x 4N (rows are frequencies); empty if not sampled
  std::vector<double> ess_trace;         ///< ESS after weighting at each step
  std::vector<bool> resample_flags;      ///< resampling triggered after step k
  std::vector<double> spread_trace;      ///< ensemble spread (EnKF backend only)
  std::uint64_t path_seed = 0;
  int regularized_solves = 0;
};

/// Rao-Blackwellised SIR over rho paths: each particle carries an exact Kalman
/// filter for the deviation given its rho path. The marginal likelihood
/// estimate is the product over steps of the weighted mean incremental
/// likelihood, which is unbiased for p(y_{1:K} | psi).
///
/// All randomness is drawn from substreams of `seed` keyed by (step, particle),
/// so results do not depend on options.threads.
SmcResult smc_run(const LinearGaussianModel& model, const MaterialParams& psi, const SmcOptions& options,
                  std::uint64_t seed);

/// Effective sample size (sum w)^2 / sum w^2 of unnormalized log weights.
double ess(std::span<const double> log_weights);

/// Systematic resampling with a single uniform u in [0, 1). Weights must be
/// normalized. Index i is selected floor or ceil of N w_i times.
std::vector<int> systematic_resample(std::span<const double> weights, double u);
std::vector<int> systematic_resample(std::span<const double> weights, Rng& rng);

/// Normalized weights exp(lw - logsumexp(lw)).
std::vector<double> normalize_log_weights(std::span<const double> log_weights);
double log_sum_exp(std::span<const double> values);

/// Joint deviation path given psi and a rho path: exact filter along the path,
/// then backward simulation. Returns K x 4N.
Eigen::MatrixXd sample_deviation_path(const LinearGaussianModel& model, const MaterialParams& psi,
                                      std::span<const double> rho_path, Rng& rng);

}  // namespace rbpmmh
