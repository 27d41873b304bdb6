#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "rbpmmh/kalman.hpp"
#include "rbpmmh/material.hpp"
#include "rbpmmh/rbsmc.hpp"
#include "rbpmmh/ssm.hpp"

namespace rbpmmh {

enum class Backend { kf, enkf };

std::string backend_name(Backend b);
Backend parse_backend(const std::string& s);

/// Log-normal prior on a parameter's positive "excess": eps_inf - 1,
/// eps_s - eps_inf, f_d, mu_s - 1, f_r, gamma.
struct ParameterPrior {
  double median = 1.0;
  double log_sd = 1.0;
  bool fixed = false;
};

struct TemperingPoint {
  int iter = 0;
  double beta = 1.0;
};

struct PmmhConfig {
  int n_iters = 1000;
  int n_particles = 100;
  Backend backend = Backend::kf;
  int ensemble_size = 100;
  double proposal_scale = 0.1;  ///< std of the fixed kernel in log-excess space
  int adapt_start = 500;
  int adapt_interval = 100;
  int adapt_stop = -1;          ///< last iteration at which the covariance is refreshed; < 0 means never frozen
  double mixture_weight_fixed = 0.2;
  std::vector<TemperingPoint> tempering_schedule;  ///< empty means beta = 1
  bool prior_only = false;      ///< beta = 0 at every iteration
  double ess_threshold = 0.5;
  std::uint64_t seed = 1;
  int threads = 1;
  int thin = 10;                ///< path output period; 0 disables paths
  int burn_in = 0;              ///< used by summaries only
  MaterialParams init;          ///< starting point and model structure
  std::vector<ParameterPrior> priors;  ///< one per flattened parameter
  std::optional<DeviationModel> model;  ///< overrides the dataset's deviation prior

  void validate() const;
  /// Indices of the flattened parameters that are sampled.
  std::vector<int> free_indices() const;
};

void to_json(nlohmann::json& j, const PmmhConfig& c);
/// Throws ConfigError with the offending key.
void from_json(const nlohmann::json& j, PmmhConfig& c);

/// beta(iter) by piecewise-linear interpolation of the schedule, constant
/// beyond its ends; 1 for an empty schedule.
double tempering_beta(int iter, const std::vector<TemperingPoint>& schedule);
double temper(double log_lik, int iter, const std::vector<TemperingPoint>& schedule);

/// Map between MaterialParams and the unconstrained coordinates
/// theta = log(excess) of the free parameters.
class ParamSpace {
public:
  explicit ParamSpace(const PmmhConfig& config);

  int dim() const { return static_cast<int>(free_.size()); }
  const std::vector<int>& free_indices() const { return free_; }

  Eigen::VectorXd to_theta(const MaterialParams& psi) const;
  /// Fixed parameters are taken from the configured init.
  MaterialParams from_theta(const Eigen::VectorXd& theta) const;

  /// Log prior density in theta space (the log-normal density of each excess
  /// times its Jacobian |d excess / d theta|, which makes it Gaussian in theta).
  double log_prior(const Eigen::VectorXd& theta) const;

  /// Positive excess of every flattened parameter.
  static Eigen::VectorXd excess(const MaterialParams& psi);
  static void assign_excess(MaterialParams& psi, const Eigen::VectorXd& excess);

private:
  MaterialParams base_;
  std::vector<ParameterPrior> priors_;
  std::vector<int> free_;
};

/// Running mean and covariance of the chain in theta space, plus the scaled
/// factor used by the adaptive component.
class AdaptState {
public:
  explicit AdaptState(int dim);

  void observe(const Eigen::VectorXd& theta);
  /// Recompute the adaptive factor from the history; returns false (and
  /// disables the adaptive component) if the covariance is not PD.
  bool refresh();

  int count() const { return count_; }
  bool active() const { return active_; }
  const Eigen::MatrixXd& factor() const { return factor_; }
  Eigen::MatrixXd covariance() const;

private:
  int dim_;
  int count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  Eigen::MatrixXd factor_;
  bool active_ = false;
};

struct Proposal {
  Eigen::VectorXd theta;
  double log_q_ratio = 0.0;  ///< log q(theta | theta*) - log q(theta* | theta); zero (symmetric)
  bool adaptive = false;
};

/// With probability mixture_weight_fixed (or whenever adaptation is inactive)
/// theta* = theta + proposal_scale xi; otherwise theta* = theta + F xi with
/// F F^T = (2.38^2 / d) Cov.
Proposal propose(const Eigen::VectorXd& theta, const AdaptState& adapt, const PmmhConfig& config, Rng& rng);

struct ChainRecord {
  int iter = 0;
  MaterialParams psi;
  double log_lik_hat = 0.0;
  double log_prior = 0.0;
  double beta = 1.0;
  bool accepted = false;
  double acceptance_rate = 0.0;  ///< running, over iterations 1..iter
};

struct PathRecord {
  int iter = 0;
  std::vector<double> rho;
  Eigen::MatrixXd delta_x;  ///< K x 4N
};

struct PmmhCounters {
  std::uint64_t smc_calls = 0;
  std::uint64_t resample_events = 0;
  std::uint64_t regularized_solves = 0;
  std::uint64_t degenerate_rejections = 0;
  std::uint64_t accepted = 0;
};

struct PmmhResult {
  std::vector<ChainRecord> chain;
  std::vector<PathRecord> paths;  ///< empty when a path callback was given
  PmmhCounters counters;
  Backend backend = Backend::kf;
  std::vector<std::string> parameter_names;
};

struct PmmhObserver {
  /// Called for every chain record as it is produced.
  std::function<void(const ChainRecord&)> on_record;
  /// Called for every thinned path; when set, paths are not kept in memory.
  std::function<void(const PathRecord&)> on_path;
  /// Called after every SMC run (iteration 0 is the initial evaluation).
  std::function<void(int iter, const SmcResult&)> on_smc;
};

/// Pseudo-marginal MH over psi. The likelihood estimate of the incumbent is
/// stored and never recomputed: exactly n_iters + 1 SMC runs. A degenerate
/// SMC run rejects the proposal.
///
/// Randomness per iteration t comes from substreams (seed, tag, t), so the
/// chain is reproducible for any thread count.
PmmhResult pmmh_run(const LinearGaussianModel& model, const PmmhConfig& config,
                    const PmmhObserver& observer = {});

/// Deviation prior for inference: the config override, else the dataset's.
DeviationModel inference_prior(const PmmhConfig& config, const Dataset& data);

}  // namespace rbpmmh
