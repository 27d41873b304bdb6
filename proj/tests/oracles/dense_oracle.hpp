// Brute-force reference computations for small instances. Everything here is
// written directly from the model definition with dense matrices and shares
// no code with the filtering library beyond plain data types.
#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rbpmmh/material.hpp"
#include "rbpmmh/ssm.hpp"

namespace oracle {

inline double log_2pi() { return std::log(2.0 * std::numbers::pi); }

/// Block-diagonal exponential kernel, entry by entry.
inline Eigen::MatrixXd spatial_cov(double sigma, double ell, int n_zones) {
  const int n = 4 * n_zones;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < n_zones; ++i)
      for (int j = 0; j < n_zones; ++j)
        S(b * n_zones + i, b * n_zones + j) = sigma * sigma * std::exp(-std::abs(i - j) / ell);
  return S;
}

inline double log_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd r = x - mean;
  const double quad = r.dot(llt.solve(r));
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (static_cast<double>(x.size()) * log_2pi() + logdet + quad);
}

/// Joint covariance of (dx_1..dx_K): Cov(dx_j, dx_k) = prod_{i=j+1..k} rho_i * Sigma.
inline Eigen::MatrixXd joint_state_cov(const Eigen::MatrixXd& Sigma, const std::vector<double>& rho) {
  const auto K = static_cast<Eigen::Index>(rho.size());
  const Eigen::Index n = Sigma.rows();
  Eigen::MatrixXd C(K * n, K * n);
  for (Eigen::Index j = 0; j < K; ++j)
    for (Eigen::Index k = 0; k < K; ++k) {
      double f = 1.0;
      for (Eigen::Index i = std::min(j, k) + 1; i <= std::max(j, k); ++i) f *= rho[static_cast<std::size_t>(i)];
      C.block(j * n, k * n, n, n) = f * Sigma;
    }
  return C;
}

struct JointGaussian {
  Eigen::VectorXd y;       ///< stacked observations
  Eigen::VectorXd mean;    ///< stacked A_k g_k + y0_k
  Eigen::MatrixXd cov;     ///< H C H^T + blockdiag(R)
  Eigen::MatrixXd H;       ///< blockdiag(A_k)
  Eigen::MatrixXd C;       ///< joint state covariance
};

inline JointGaussian joint_gaussian(const rbpmmh::Dataset& data, const rbpmmh::MaterialParams& psi,
                                    const std::vector<double>& rho, double sigma, double ell) {
  const int K = data.n_freqs();
  const int n = 4 * data.n_zones;
  const int d = data.metamodel.obs_dim();
  JointGaussian J;
  J.C = joint_state_cov(spatial_cov(sigma, ell, data.n_zones), rho);
  J.H = Eigen::MatrixXd::Zero(K * d, K * n);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(K * d, K * d);
  J.y.resize(K * d);
  J.mean.resize(K * d);
  for (int k = 0; k < K; ++k) {
    const auto& e = data.metamodel.entries[static_cast<std::size_t>(k)];
    J.H.block(k * d, k * n, d, n) = e.A;
    R.block(k * d, k * d, d, d) = e.R;
    J.y.segment(k * d, d) = data.observations[static_cast<std::size_t>(k)];
    J.mean.segment(k * d, d) =
        e.A * rbpmmh::material_eval(psi, data.frequencies[static_cast<std::size_t>(k)], data.n_zones) + e.y0;
  }
  J.cov = J.H * J.C * J.H.transpose() + R;
  return J;
}

inline double joint_loglik(const rbpmmh::Dataset& data, const rbpmmh::MaterialParams& psi,
                           const std::vector<double>& rho, double sigma, double ell) {
  const auto J = joint_gaussian(data, psi, rho, sigma, ell);
  return log_mvn(J.y, J.mean, J.cov);
}

/// E[dx_{1:K} | y], stacked.
inline Eigen::VectorXd smoothing_mean(const rbpmmh::Dataset& data, const rbpmmh::MaterialParams& psi,
                                      const std::vector<double>& rho, double sigma, double ell) {
  const auto J = joint_gaussian(data, psi, rho, sigma, ell);
  return J.C * J.H.transpose() * J.cov.llt().solve(J.y - J.mean);
}

/// Cov[dx_{1:K} | y].
inline Eigen::MatrixXd smoothing_cov(const rbpmmh::Dataset& data, const rbpmmh::MaterialParams& psi,
                                     const std::vector<double>& rho, double sigma, double ell) {
  const auto J = joint_gaussian(data, psi, rho, sigma, ell);
  const Eigen::MatrixXd CHt = J.C * J.H.transpose();
  return J.C - CHt * J.cov.llt().solve(CHt.transpose());
}

/// Small random instance with diagonal R, data simulated from the model with
/// the given rho path. Uses its own generator, not the scenario module.
inline rbpmmh::Dataset small_dataset(std::uint64_t seed, int n_zones, int K, int d, const rbpmmh::MaterialParams& psi,
                                     const std::vector<double>& rho, double sigma, double ell, double noise) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = 4 * n_zones;
  rbpmmh::Dataset data;
  data.n_zones = n_zones;
  data.seed = seed;
  for (int k = 0; k < K; ++k) data.frequencies.push_back(1e8 * std::pow(100.0, K == 1 ? 0.0 : double(k) / (K - 1)));
  const Eigen::MatrixXd Sigma = spatial_cov(sigma, ell, n_zones);
  const Eigen::MatrixXd Ls = Sigma.llt().matrixL();
  Eigen::VectorXd dx(n);
  for (int k = 0; k < K; ++k) {
    rbpmmh::MetamodelEntry e;
    e.A.resize(d, n);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < n; ++j) e.A(i, j) = nd(gen) / std::sqrt(double(n));
    e.y0.resize(d);
    for (auto& v : e.y0) v = nd(gen);
    e.R = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) e.R(i, i) = noise * noise * (0.5 + std::abs(nd(gen)));
    Eigen::VectorXd white(n);
    for (auto& v : white) v = nd(gen);
    const double r = rho[static_cast<std::size_t>(k)];
    dx = k == 0 ? Eigen::VectorXd(Ls * white) : Eigen::VectorXd(r * dx + std::sqrt(1 - r * r) * Ls * white);
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = std::sqrt(e.R(i, i)) * nd(gen);
    const Eigen::VectorXd x = rbpmmh::material_eval(psi, data.frequencies[static_cast<std::size_t>(k)], n_zones) + dx;
    data.observations.push_back(e.A * x + e.y0 + v);
    data.metamodel.entries.push_back(std::move(e));
  }
  rbpmmh::DeviationModel dm;
  dm.spatial = {sigma, ell, n_zones};
  data.deviation_model = dm;
  return data;
}

/// Gauss-Hermite rule for the standard normal (probabilists'): nodes and
/// weights summing to 1, from the Golub-Welsch eigenproblem.
inline void gauss_hermite(int m, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int i = 1; i < m; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(double(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes.resize(static_cast<std::size_t>(m));
  weights.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    nodes[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
    const double v = es.eigenvectors()(0, i);
    weights[static_cast<std::size_t>(i)] = v * v;
  }
}

/// Dense EnKF update with explicit inverses (no Woodbury), for checking the
/// ensemble-space implementation. X is n x M, E holds whitened perturbations.
struct DenseEnkf {
  Eigen::MatrixXd members;
  double log_lik = 0.0;
};

inline DenseEnkf dense_enkf_update(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& g, const Eigen::VectorXd& y0, const Eigen::VectorXd& r_diag,
                                   const Eigen::MatrixXd& E_white) {
  const Eigen::Index M = X.cols();
  const Eigen::VectorXd xbar = X.rowwise().mean();
  const Eigen::MatrixXd Z = X.colwise() - xbar;
  const Eigen::MatrixXd P = Z * Z.transpose() / double(M - 1);
  const Eigen::MatrixXd R = r_diag.asDiagonal();
  const Eigen::MatrixXd S = A * P * A.transpose() + R;
  const Eigen::MatrixXd Sinv = S.inverse();
  const Eigen::MatrixXd Kg = P * A.transpose() * Sinv;
  DenseEnkf out;
  out.members = X;
  for (Eigen::Index i = 0; i < M; ++i) {
    const Eigen::VectorXd eta = r_diag.cwiseSqrt().cwiseProduct(E_white.col(i));
    const Eigen::VectorXd innov = y + eta - A * (g + X.col(i)) - y0;
    out.members.col(i) += Kg * innov;
  }
  const Eigen::VectorXd nu = y - A * (g + xbar) - y0;
  out.log_lik = -0.5 * (double(y.size()) * log_2pi() + std::log(S.determinant()) + nu.dot(Sinv * nu));
  return out;
}

}  // namespace oracle
