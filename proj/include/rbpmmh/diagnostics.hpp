#pragma once

#include <span>
#include <string>
#include <vector>

#include "rbpmmh/chain_io.hpp"

namespace rbpmmh {

/// Sample autocorrelation at lags 0..max_lag (biased estimator, lag 0 = 1).
/// A constant series has autocorrelation 1 at lag 0 and 0 elsewhere.
std::vector<double> autocorrelation(std::span<const double> x, int max_lag);

/// Effective sample size n / (1 + 2 sum rho_t), summed over the initial
/// positive sequence of autocorrelations.
double effective_sample_size(std::span<const double> x);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> x, double p);

/// Standard normal CDF and its inverse.
double normal_cdf(double z);
double normal_quantile(double p);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double ess = 0.0;
  std::vector<double> quantiles;  ///< at summary_probs()
};

struct ChainSummary {
  int n_records = 0;
  int burn_in = 0;
  double acceptance_rate = 0.0;  ///< over all records
  double acceptance_rate_post_burn_in = 0.0;
  std::vector<ParameterSummary> parameters;
};

const std::vector<double>& summary_probs();

/// Moments, quantiles and ESS of every parameter over iterations > burn_in
/// (all records if none survive).
ChainSummary summarize_chain(const ChainTable& chain, int burn_in);

}  // namespace rbpmmh
