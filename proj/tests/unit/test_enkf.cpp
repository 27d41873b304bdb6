#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstring>

#include "oracles/dense_oracle.hpp"
#include "rbpmmh/enkf.hpp"
#include "rbpmmh/kalman.hpp"

using namespace rbpmmh;

namespace {

MaterialParams psi0() {
  MaterialParams p;
  p.debye = {{2.5, 6.0, 1.5e9}};
  p.lorentz = {{2.2, 3e9, 4e8}};
  return p;
}

Ensemble gaussian_ensemble(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int M, Rng& rng) {
  const Eigen::MatrixXd L = cov.llt().matrixL();
  Ensemble e;
  e.members.resize(mean.size(), M);
  for (int i = 0; i < M; ++i) {
    Eigen::VectorXd z(mean.size());
    for (auto& v : z) v = rng.normal();
    e.members.col(i) = mean + L * z;
  }
  return e;
}

double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

Eigen::MatrixXd whiten_rows(const Eigen::MatrixXd& m, const Eigen::MatrixXd& R) {
  return R.diagonal().cwiseSqrt().cwiseInverse().asDiagonal() * m;
}

}  // namespace

TEST_CASE("zero observation operator leaves the ensemble untouched") {
  const Dataset d = oracle::small_dataset(1, 2, 1, 5, psi0(), {0.9}, 0.3, 1.0, 0.2);
  MetamodelEntry e = d.metamodel.entries[0];
  e.A.setZero();
  Rng rng(4);
  const Ensemble ens = enkf_initial(d.deviation_model->spatial, 30, rng);
  const Eigen::VectorXd g = material_eval(psi0(), d.frequencies[0], 2);
  const EnkfUpdate u = enkf_update(ens, e, d.observations[0], g, rng);
  CHECK(u.ensemble.members == ens.members);
  const double expected = oracle::log_mvn(d.observations[0], e.y0, e.R);
  CHECK(u.log_lik_increment == doctest::Approx(expected).epsilon(1e-12));
  CHECK_FALSE(u.regularized);
}

TEST_CASE("Woodbury update matches the dense explicit-inverse update") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dataset d = oracle::small_dataset(seed, 2, 1, 10, psi0(), {0.9}, 0.4, 1.5, 0.3);
    const MetamodelEntry& e = d.metamodel.entries[0];
    Rng rng(seed + 100);
    const Ensemble ens = enkf_initial(d.deviation_model->spatial, 8, rng);
    Eigen::MatrixXd E(10, 8);
    for (auto& v : E.reshaped()) v = rng.normal();
    const Eigen::VectorXd g = material_eval(psi0(), d.frequencies[0], 2);
    const auto dense = oracle::dense_enkf_update(ens.members, e.A, d.observations[0], g, e.y0, e.R.diagonal(), E);
    const Eigen::MatrixXd Aw = whiten_rows(e.A, e.R);
    const Eigen::VectorXd zw = whiten_rows(d.observations[0] - e.A * g - e.y0, e.R);
    const double log_det_R = e.R.diagonal().array().log().sum();
    const EnkfUpdate u = enkf_update_whitened(ens, Aw, zw, log_det_R, E);
    CHECK((u.ensemble.members - dense.members).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(u.log_lik_increment - dense.log_lik) < 1e-8);
  }
}

TEST_CASE("large ensemble update approaches the Kalman update") {
  const Dataset d = oracle::small_dataset(3, 2, 1, 3, psi0(), {0.9}, 0.5, 1.5, 0.2);
  const MetamodelEntry& e = d.metamodel.entries[0];
  const Eigen::MatrixXd Sigma = d.deviation_model->spatial.dense();
  const Eigen::VectorXd g = material_eval(psi0(), d.frequencies[0], 2);
  const GaussianBelief prior{Eigen::VectorXd::Zero(8), Sigma};
  const KalmanUpdate kf = kf_update(prior, e, d.observations[0], g);
  Rng rng(11);
  const Ensemble ens = enkf_initial(d.deviation_model->spatial, 2000, rng);
  const EnkfUpdate u = enkf_update(ens, e, d.observations[0], g, rng);
  const Eigen::VectorXd dm = u.ensemble.mean() - kf.belief.mean;
  const double mean_err = std::sqrt(dm.dot(kf.belief.cov.llt().solve(dm)));
  MESSAGE("mean error (posterior Mahalanobis) " << mean_err << ", cov error "
                                                << rel_frobenius(u.ensemble.covariance(), kf.belief.cov)
                                                << ", increment gap " << u.log_lik_increment - kf.log_lik_increment);
  CHECK(mean_err < 0.2);
  CHECK(rel_frobenius(u.ensemble.covariance(), kf.belief.cov) < 0.1);
  CHECK(std::abs(u.log_lik_increment - kf.log_lik_increment) < 0.05);
}

TEST_CASE("noise-free predict scales members by rho") {
  Rng rng(2);
  const SpatialCovariance sp{0.3, 2.0, 3};
  const Ensemble ens = enkf_initial(sp, 12, rng);
  const Ensemble p = enkf_predict_noiseless(ens, 0.37);
  CHECK(p.members == (0.37 * ens.members).eval());
}

TEST_CASE("predicted ensemble moments match the Kalman predict") {
  const SpatialCovariance sp{0.4, 1.5, 2};
  const Eigen::MatrixXd Sigma = sp.dense();
  Rng rng(5);
  Eigen::VectorXd mean(8);
  for (auto& v : mean) v = rng.normal();
  const Ensemble ens = gaussian_ensemble(mean, 0.09 * Sigma, 100000, rng);
  const Ensemble p = enkf_predict(ens, 0.6, sp, rng);
  const GaussianBelief kf = kf_predict({ens.mean(), ens.covariance()}, 0.6, Sigma);
  CHECK(rel_frobenius(p.covariance(), kf.cov) < 0.02);
  CHECK((p.mean() - kf.mean).norm() < 0.02 * std::sqrt(kf.cov.trace()));
}

TEST_CASE("the filter never forms the dense spatial covariance") {
  const Dataset d = oracle::small_dataset(6, 5, 6, 12, psi0(), std::vector<double>(6, 0.8), 0.3, 2.0, 0.2);
  DeviationModel m = *d.deviation_model;
  m.rho_walk = {0.1, 0.8};
  const LinearGaussianModel model(d, m);
  const auto before = SpatialCovariance::dense_formations();
  SmcOptions o;
  o.n_particles = 4;
  EnkfOptions eo;
  eo.ensemble_size = 20;
  smc_run_enkf(model, psi0(), o, eo, 3);
  CHECK(SpatialCovariance::dense_formations() == before);
}

TEST_CASE("frozen rho with a large ensemble reproduces the Kalman likelihood") {
  const std::vector<double> rho(4, 0.85);
  const Dataset d = oracle::small_dataset(7, 2, 4, 3, psi0(), rho, 0.5, 1.5, 0.1);
  DeviationModel m = *d.deviation_model;
  m.rho_walk = {0.0, 0.85};
  const LinearGaussianModel model(d, m);
  const double exact = kf_loglik(model, psi0(), rho);
  SmcOptions o;
  o.n_particles = 2;
  EnkfOptions eo;
  eo.ensemble_size = 5000;
  const SmcResult r = smc_run_enkf(model, psi0(), o, eo, 9);
  MESSAGE("enkf " << r.log_lik_hat << " kf " << exact);
  CHECK(std::abs(r.log_lik_hat - exact) < 0.1);
}

TEST_CASE("single-particle run is deterministic and thread independent") {
  const Dataset d = oracle::small_dataset(8, 2, 5, 4, psi0(), std::vector<double>(5, 0.7), 0.5, 1.5, 0.2);
  DeviationModel m = *d.deviation_model;
  m.rho_walk = {0.2, 0.7};
  const LinearGaussianModel model(d, m);
  SmcOptions o;
  o.n_particles = 1;
  EnkfOptions eo;
  eo.ensemble_size = 16;
  const SmcResult a = smc_run_enkf(model, psi0(), o, eo, 42);
  const SmcResult b = smc_run_enkf(model, psi0(), o, eo, 42);
  o.threads = 3;
  o.n_particles = 1;
  const SmcResult c = smc_run_enkf(model, psi0(), o, eo, 42);
  CHECK(std::memcmp(&a.log_lik_hat, &b.log_lik_hat, sizeof(double)) == 0);
  CHECK(std::memcmp(&a.log_lik_hat, &c.log_lik_hat, sizeof(double)) == 0);
  CHECK(a.sampled_delta_x == c.sampled_delta_x);
  CHECK(a.sampled_rho_path == c.sampled_rho_path);
  for (double e : a.ess_trace) CHECK(e == doctest::Approx(1.0));

  // Without noise every member collapses onto the same deterministic
  // trajectory only if they start equal; here we just need repeatability.
  eo.suppress_noise = true;
  const SmcResult s1 = smc_run_enkf(model, psi0(), o, eo, 5);
  const SmcResult s2 = smc_run_enkf(model, psi0(), o, eo, 5);
  CHECK(s1.log_lik_hat == s2.log_lik_hat);

  o.n_particles = 6;
  o.threads = 1;
  const SmcResult p1 = smc_run_enkf(model, psi0(), o, eo, 77);
  o.threads = 4;
  const SmcResult p4 = smc_run_enkf(model, psi0(), o, eo, 77);
  CHECK(std::memcmp(&p1.log_lik_hat, &p4.log_lik_hat, sizeof(double)) == 0);
  CHECK(p1.sampled_delta_x == p4.sampled_delta_x);
}

TEST_CASE("full-size run completes") {
  const int N = 50, K = 20, dy = 400;
  std::vector<double> rho(K, 0.9);
  const Dataset d = oracle::small_dataset(12, N, K, dy, psi0(), rho, 0.05, 3.0, 0.05);
  DeviationModel m = *d.deviation_model;
  m.rho_walk = {0.05, 0.9};
  const LinearGaussianModel model(d, m);
  SmcOptions o;
  o.n_particles = 10;
  EnkfOptions eo;
  eo.ensemble_size = 50;
  const auto t0 = std::chrono::steady_clock::now();
  const SmcResult r = smc_run_enkf(model, psi0(), o, eo, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("N_p=10 M=50 N=50 K=20 d_y=400: " << secs << " s, log-lik " << r.log_lik_hat);
  CHECK(std::isfinite(r.log_lik_hat));
  CHECK(r.sampled_delta_x.rows() == K);
  CHECK(r.sampled_delta_x.cols() == 4 * N);
  CHECK(r.spread_trace.size() == static_cast<std::size_t>(K));
}

TEST_CASE("ensemble-space and observation-space factorizations agree") {
  // d_y = 10 with M = 8 (ensemble space) and M = 30 (observation space).
  for (int M : {8, 30}) {
    const Dataset d = oracle::small_dataset(20 + M, 2, 1, 10, psi0(), {0.9}, 0.4, 1.5, 0.3);
    const MetamodelEntry& e = d.metamodel.entries[0];
    Rng rng(7);
    const Ensemble ens = enkf_initial(d.deviation_model->spatial, M, rng);
    Eigen::MatrixXd E(10, M);
    for (auto& v : E.reshaped()) v = rng.normal();
    const Eigen::VectorXd g = material_eval(psi0(), d.frequencies[0], 2);
    const auto dense = oracle::dense_enkf_update(ens.members, e.A, d.observations[0], g, e.y0, e.R.diagonal(), E);
    const EnkfUpdate u = enkf_update_whitened(ens, whiten_rows(e.A, e.R),
                                              whiten_rows(d.observations[0] - e.A * g - e.y0, e.R),
                                              e.R.diagonal().array().log().sum(), E);
    CHECK((u.ensemble.members - dense.members).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(u.log_lik_increment - dense.log_lik) < 1e-8);
  }
}
