#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rbpmmh/material.hpp"
#include "rbpmmh/rng.hpp"
#include "rbpmmh/ssm.hpp"

namespace rbpmmh {

/// Mean and covariance of a Gaussian over the deviation state.
struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// mean' = rho mean, cov' = rho^2 cov + (1 - rho^2) Sigma.
GaussianBelief kf_predict(const GaussianBelief& belief, double rho_next,
                          const Eigen::MatrixXd& stationary_cov);

struct KalmanUpdate {
  GaussianBelief belief;
  double log_lik_increment = 0.0;
};

/// Condition on y = A (g + dx) + y0 + v. Innovation covariance is factored by
/// Cholesky; the posterior covariance uses the Joseph form and is symmetrized.
/// Throws NumericalError (with a condition estimate) if S is not SPD.
KalmanUpdate kf_update(const GaussianBelief& belief, const MetamodelEntry& entry,
                       const Eigen::VectorXd& y, const Eigen::VectorXd& g);

/// log N(x; mean, cov) through a Cholesky factorization.
double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov);

/// Draw from N(mean, cov). Falls back to a clamped eigendecomposition when
/// cov is only positive semi-definite.
Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng);

/// Inverse of a lower-triangular matrix (blocked, recursion on halves).
Eigen::MatrixXd lower_triangular_inverse(const Eigen::MatrixXd& L);

/// Dataset and deviation prior preprocessed for repeated likelihood
/// evaluation.
///
/// Filtering runs in whitened coordinates u = L^-1 dx (Sigma = L L^T), where
/// the prior is N(0, I), the transition is u' = rho u + N(0, (1 - rho^2) I),
/// and the observation of u is z = y - A g - y0 = A L u + v. Everything that
/// depends only on the data is folded into per-frequency quantities:
///   B = (A L)^T R^-1 (A L),   data = (A L)^T R^-1 (y - y0)
/// and the parameter-dependent part enters through b = (A L)^T R^-1 z and
/// q = z^T R^-1 z (see evidence()). A filter step then costs O(n^3) in the
/// state dimension n = 4N with no obs_dim-sized work.
class LinearGaussianModel {
public:
  struct Step {
    Eigen::MatrixXd B;           ///< n x n information added by the observation
    Eigen::MatrixXd cross;       ///< (A L)^T R^-1 A, maps g into b
    Eigen::MatrixXd gram;        ///< A^T R^-1 A
    Eigen::VectorXd data_proj;   ///< (A L)^T R^-1 (y - y0)
    Eigen::VectorXd data_gram;   ///< A^T R^-1 (y - y0)
    double data_sq = 0.0;        ///< (y - y0)^T R^-1 (y - y0)
    double log_det_R = 0.0;
    int obs_dim = 0;
  };

  /// Parameter-dependent sufficient statistics at one frequency.
  struct Evidence {
    Eigen::VectorXd b;  ///< (A L)^T R^-1 (y - A g - y0)
    double q = 0.0;     ///< (y - A g - y0)^T R^-1 (y - A g - y0)
  };

  LinearGaussianModel(const Dataset& data, const DeviationModel& prior);

  const Dataset& dataset() const { return *data_; }
  const DeviationModel& prior() const { return prior_; }
  int n_freqs() const { return static_cast<int>(steps_.size()); }
  int state_dim() const { return prior_.spatial.dim(); }
  int n_zones() const { return prior_.spatial.n_zones; }
  const Step& step(int k) const { return steps_[static_cast<std::size_t>(k)]; }

  /// Material mean g(f_k, psi) for every frequency.
  std::vector<Eigen::VectorXd> material_means(const MaterialParams& psi) const;
  std::vector<Evidence> evidence(const MaterialParams& psi) const;
  Evidence evidence(int k, const Eigen::VectorXd& g) const;

  /// Map whitened coordinates back to deviations: dx = L u.
  Eigen::VectorXd unwhiten(const Eigen::VectorXd& u) const { return prior_.spatial.apply_sqrt(u); }

private:
  const Dataset* data_;
  DeviationModel prior_;
  std::vector<Step> steps_;
};

/// Filtered Gaussian in whitened coordinates, kept in information form.
/// Only the lower triangle of `precision` is meaningful.
struct InfoState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  double log_det_precision = 0.0;
};

/// Predicted belief at step 1: N(0, I) in whitened coordinates.
InfoState info_prior(int dim);

/// Time update: P = rho^2 P+ + (1 - rho^2) I, carried out on precisions as
///   Lambda = (I - rho^2 H^-1) / (1 - rho^2),  H = rho^2 I + (1 - rho^2) Lambda+.
InfoState info_predict(const InfoState& filtered, double rho_next);

/// Measurement update at step k. Writes the filtered state into `out` and
/// returns log p(y_k | y_{1:k-1}).
double info_update(const InfoState& predicted, const LinearGaussianModel::Step& step,
                   const LinearGaussianModel::Evidence& ev, InfoState& out);

/// Convert an information-form state to a covariance-form belief (same,
/// whitened, coordinates).
GaussianBelief to_belief(const InfoState& state);

struct FilterTrace {
  std::vector<InfoState> filtered;  ///< filtered states k = 1..K
  std::vector<double> increments;   ///< log p(y_k | y_{1:k-1})
  double log_lik = 0.0;
};

/// Exact Kalman filter given psi and a rho path (rho_path[k] drives the
/// transition into step k; rho_path[0] is not used by the filter).
FilterTrace kf_filter(const LinearGaussianModel& model, const MaterialParams& psi,
                      std::span<const double> rho_path);

/// Total log marginal likelihood log p(y_{1:K} | psi, rho_{1:K}).
double kf_loglik(const LinearGaussianModel& model, const MaterialParams& psi,
                 std::span<const double> rho_path);

/// Backward simulation of a joint path from stored filtered beliefs.
/// Uses the transition x_{k+1} = rho_{k+1} x_k + w, w ~ N(0, (1 - rho_{k+1}^2) Sigma).
std::vector<Eigen::VectorXd> ffbs_sample(std::span<const GaussianBelief> filtered,
                                         std::span<const double> rho_path,
                                         const Eigen::MatrixXd& stationary_cov, Rng& rng);

}  // namespace rbpmmh
