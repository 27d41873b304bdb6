#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "rbpmmh/kalman.hpp"
#include "rbpmmh/rbsmc.hpp"
#include "rbpmmh/rng.hpp"
#include "rbpmmh/ssm.hpp"

namespace rbpmmh {

/// M deviation-state members stored as the columns of an n x M matrix.
struct Ensemble {
  Eigen::MatrixXd members;

  int size() const { return static_cast<int>(members.cols()); }
  int dim() const { return static_cast<int>(members.rows()); }
  Eigen::VectorXd mean() const { return members.rowwise().mean(); }
  /// members - mean, zero column mean by construction.
  Eigen::MatrixXd anomalies() const { return members.colwise() - mean(); }
  Eigen::MatrixXd covariance() const;
};

/// M i.i.d. draws from N(0, Sigma).
Ensemble enkf_initial(const SpatialCovariance& spatial, int ensemble_size, Rng& rng);

/// Propagate every member through x' = rho x + sqrt(1 - rho^2) L xi with
/// independent xi. Uses the O(n) kernel square root, never the dense Sigma.
Ensemble enkf_predict(const Ensemble& ens, double rho_next, const SpatialCovariance& spatial, Rng& rng);

/// Deterministic variant of enkf_predict (no process noise).
Ensemble enkf_predict_noiseless(const Ensemble& ens, double rho_next);

struct EnkfUpdate {
  Ensemble ensemble;
  double log_lik_increment = 0.0;
  bool regularized = false;
};

/// Perturbed-observation EnKF update against y = A (g + dx) + y0 + v with
/// diagonal R. With Y = R^-1/2 A Z / sqrt(M - 1) (Z the anomalies), the
/// whitened innovation covariance is S = Y Y^T + I. When M <= obs_dim it is
/// handled in M x M space through Sherman-Morrison-Woodbury:
///   S^-1 = I - Y (I_M + Y^T Y)^-1 Y^T,   log|S| = log|I_M + Y^T Y|,
/// otherwise S itself (the smaller matrix) is factored.
/// The log-likelihood increment is log N(nu; 0, R^1/2 S R^1/2) with nu the
/// innovation of the ensemble mean.
EnkfUpdate enkf_update(const Ensemble& ens, const MetamodelEntry& entry, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& g, Rng& rng);

/// Same update with the observation pre-whitened: `Aw` = R^-1/2 A,
/// `zw` = R^-1/2 (y - A g - y0), `log_det_R` = log|R|.
EnkfUpdate enkf_update_whitened(const Ensemble& ens, const Eigen::MatrixXd& Aw, const Eigen::VectorXd& zw,
                                double log_det_R, Rng& rng);

/// Variant with caller-supplied whitened perturbations (obs_dim x M);
/// pass a zero matrix to suppress observation noise.
EnkfUpdate enkf_update_whitened(const Ensemble& ens, const Eigen::MatrixXd& Aw, const Eigen::VectorXd& zw,
                                double log_det_R, const Eigen::MatrixXd& perturbations);

struct EnkfOptions {
  int ensemble_size = 100;
  /// Tests only: drop process and observation noise.
  bool suppress_noise = false;
};

/// smc_run with each particle's Kalman filter replaced by an ensemble. The
/// output deviation path is one ensemble member traced through the particle
/// ancestry (regenerated by replaying the lineage's substreams).
SmcResult smc_run_enkf(const LinearGaussianModel& model, const MaterialParams& psi, const SmcOptions& options,
                       const EnkfOptions& enkf, std::uint64_t seed);

}  // namespace rbpmmh
