#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "rbpmmh/rng.hpp"

namespace rbpmmh {

/// Exponential spatial kernel over N zones, replicated block-diagonally over
/// the four (eps', eps'', mu', mu'') components:
///   Sigma_block(i, j) = sigma^2 exp(-|i - j| / length_scale).
///
/// Along the zone index this is a stationary AR(1) sequence with coefficient
/// a = exp(-1 / length_scale), so the lower Cholesky factor L has the closed
/// form L(i, 0) = sigma a^i, L(i, j) = sigma sqrt(1 - a^2) a^(i - j) for
/// 1 <= j <= i. Products with L, L^T and L^-1 therefore cost O(N) per block
/// and never need the dense matrix.
struct SpatialCovariance {
  double sigma = 0.1;
  double length_scale = 1.0;
  int n_zones = 1;

  void validate() const;
  int dim() const { return 4 * n_zones; }
  double correlation() const;

  Eigen::MatrixXd block_dense() const;
  /// The full 4N x 4N covariance. Increments dense_formations().
  Eigen::MatrixXd dense() const;
  /// Dense lower Cholesky factor of dense().
  Eigen::MatrixXd sqrt_dense() const;

  Eigen::VectorXd apply_sqrt(const Eigen::VectorXd& v) const;            // L v
  Eigen::VectorXd apply_sqrt_transpose(const Eigen::VectorXd& v) const;  // L^T v
  Eigen::VectorXd apply_inv_sqrt(const Eigen::VectorXd& v) const;        // L^-1 v
  /// Column-wise L M, for an n x m matrix M.
  Eigen::MatrixXd apply_sqrt(const Eigen::MatrixXd& m) const;
  /// Draw from N(0, Sigma).
  Eigen::VectorXd sample(Rng& rng) const;

  /// Number of dense() calls in this process.
  static std::uint64_t dense_formations();
};

/// Frequential correlation as a random walk in logit space:
///   rho' = logistic(logit(rho) + sigma_rho xi),  xi ~ N(0, 1).
/// rho_init is the shared value rho_1 is drawn around.
struct RhoWalk {
  double sigma_rho = 0.05;
  double rho_init = 0.9;

  void validate() const;
  double step(double rho, double xi) const;
};

double logit(double p);
double logistic(double x);

/// Prior over (delta_x, rho): stationary AR(1) deviation with marginal Sigma.
struct DeviationModel {
  SpatialCovariance spatial;
  RhoWalk rho_walk;

  void validate() const;
};

struct DeviationState {
  Eigen::VectorXd delta_x;
  double rho = 0.5;
};

/// rho_1 from the walk started at rho_init, delta_x_1 ~ N(0, Sigma).
DeviationState initial_state(const DeviationModel& model, Rng& rng);

/// rho' from the logit walk, then delta_x' = rho' delta_x + w with
/// w ~ N(0, (1 - rho'^2) Sigma).
DeviationState transition(const DeviationModel& model, const DeviationState& prev, Rng& rng);

/// Same step with explicit draws: `xi` drives the rho walk and `white` is the
/// standard-normal vector mapped to w = sqrt(1 - rho'^2) L white.
DeviationState transition(const DeviationModel& model, const DeviationState& prev, double xi,
                          const Eigen::VectorXd& white);

/// Affine-Gaussian observation operator at one frequency:
///   y = A x + y0 + v,  v ~ N(0, R).
struct MetamodelEntry {
  Eigen::MatrixXd A;
  Eigen::VectorXd y0;
  Eigen::MatrixXd R;

  int state_dim() const { return static_cast<int>(A.cols()); }
  int obs_dim() const { return static_cast<int>(A.rows()); }
  bool r_is_diagonal() const;
};

struct Metamodel {
  std::vector<MetamodelEntry> entries;

  /// Dimensions agree across frequencies; R symmetric with positive diagonal.
  void validate() const;
  int state_dim() const { return entries.empty() ? 0 : entries.front().state_dim(); }
  int obs_dim() const { return entries.empty() ? 0 : entries.front().obs_dim(); }
};

/// A x + y0 + v. With rng == nullptr returns the noiseless mean.
Eigen::VectorXd observe(const MetamodelEntry& entry, const Eigen::VectorXd& x, Rng* rng);

struct Dataset {
  std::vector<double> frequencies;
  std::vector<Eigen::VectorXd> observations;
  Metamodel metamodel;
  int n_zones = 0;
  std::uint64_t seed = 0;
  /// Deviation prior the data was generated with, when known.
  std::optional<DeviationModel> deviation_model;

  int n_freqs() const { return static_cast<int>(frequencies.size()); }
  void validate() const;
};

void to_json(nlohmann::json& j, const DeviationModel& m);
void from_json(const nlohmann::json& j, DeviationModel& m);

}  // namespace rbpmmh
