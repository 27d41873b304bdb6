#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "oracles/dense_oracle.hpp"
#include "rbpmmh/error.hpp"
#include "rbpmmh/kalman.hpp"
#include "rbpmmh/rbsmc.hpp"

using namespace rbpmmh;

namespace {

MaterialParams psi0() {
  MaterialParams p;
  p.debye = {{2.5, 6.0, 1.5e9}};
  p.lorentz = {{2.2, 3e9, 4e8}};
  return p;
}

Eigen::MatrixXd random_spd(int n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd X(n, n + 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n + 2; ++j) X(i, j) = nd(gen);
  return X * X.transpose() / n + 1e-3 * Eigen::MatrixXd::Identity(n, n);
}

DeviationModel prior_of(const Dataset& d, double sigma_rho = 0.0, double rho_init = 0.9) {
  DeviationModel m = *d.deviation_model;
  m.rho_walk = {sigma_rho, rho_init};
  return m;
}

}  // namespace

TEST_CASE("kf_predict limits and dense reference") {
  std::mt19937_64 gen(3);
  const SpatialCovariance sc{0.5, 2.0, 3};
  const Eigen::MatrixXd Sigma = sc.dense();
  GaussianBelief b{Eigen::VectorXd::LinSpaced(12, -1, 1), Sigma};

  const auto near_one = kf_predict(b, 1.0 - 1e-12, Sigma);
  CHECK((near_one.cov - Sigma).norm() < 1e-10);
  CHECK((near_one.mean - b.mean).norm() < 1e-10);

  GaussianBelief any{b.mean, random_spd(12, gen)};
  const auto near_zero = kf_predict(any, 1e-9, Sigma);
  CHECK(near_zero.mean.norm() < 1e-8);
  CHECK((near_zero.cov - Sigma).norm() < 1e-8);

  const auto p = kf_predict(any, 0.7, Sigma);
  const Eigen::MatrixXd expect = 0.49 * any.cov + 0.51 * Sigma;
  CHECK((p.cov - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((p.mean - 0.7 * any.mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kf_update with a zero operator leaves the belief unchanged") {
  std::mt19937_64 gen(4);
  MetamodelEntry e;
  e.A = Eigen::MatrixXd::Zero(3, 8);
  e.y0 = Eigen::Vector3d(0.1, 0.2, 0.3);
  e.R = Eigen::Vector3d(0.5, 1.0, 2.0).asDiagonal();
  GaussianBelief b{Eigen::VectorXd::Ones(8), random_spd(8, gen)};
  const Eigen::VectorXd y = Eigen::Vector3d(1.0, -1.0, 0.0);
  const auto u = kf_update(b, e, y, Eigen::VectorXd::Constant(8, 3.0));
  CHECK((u.belief.mean - b.mean).norm() < 1e-14);
  CHECK((u.belief.cov - b.cov).norm() < 1e-12);
  CHECK(u.log_lik_increment == doctest::Approx(oracle::log_mvn(y, e.y0, e.R)).epsilon(1e-14));
}

TEST_CASE("one-dimensional update by hand") {
  MetamodelEntry e;
  e.A = Eigen::MatrixXd::Constant(1, 1, 2.0);
  e.y0 = Eigen::VectorXd::Constant(1, 0.5);
  e.R = Eigen::MatrixXd::Constant(1, 1, 0.25);
  GaussianBelief b{Eigen::VectorXd::Constant(1, 0.3), Eigen::MatrixXd::Constant(1, 1, 0.4)};
  const double g = 1.0;
  const double y = 3.7;
  const auto u = kf_update(b, e, Eigen::VectorXd::Constant(1, y), Eigen::VectorXd::Constant(1, g));
  const double nu = y - 2.0 * (g + 0.3) - 0.5;  // 0.6
  const double S = 4.0 * 0.4 + 0.25;           // 1.85
  const double K = 0.4 * 2.0 / S;
  CHECK(u.belief.mean[0] == doctest::Approx(0.3 + K * nu).epsilon(1e-14));
  CHECK(u.belief.cov(0, 0) == doctest::Approx(0.4 - K * 2.0 * 0.4).epsilon(1e-13));
  CHECK(u.log_lik_increment == doctest::Approx(-0.5 * (std::log(2 * std::numbers::pi * S) + nu * nu / S)).epsilon(1e-14));
}

TEST_CASE("kf_loglik equals the joint-Gaussian log density") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.05, 0.99);
  for (int fixture = 0; fixture < 10; ++fixture) {
    std::vector<double> rho(4);
    for (auto& r : rho) r = u(gen);
    const Dataset d = oracle::small_dataset(100 + fixture, 2, 4, 3, psi0(), rho, 0.3, 1.5, 0.2);
    const LinearGaussianModel model(d, prior_of(d));
    const double exact = oracle::joint_loglik(d, psi0(), rho, 0.3, 1.5);
    CHECK(std::abs(kf_loglik(model, psi0(), rho) - exact) < 1e-8);
  }
}

TEST_CASE("information-form filter agrees with the covariance-form reference step by step") {
  const std::vector<double> rho{0.5, 0.8, 0.3, 0.95, 0.6};
  const Dataset d = oracle::small_dataset(7, 3, 5, 6, psi0(), rho, 0.4, 2.0, 0.3);
  const LinearGaussianModel model(d, prior_of(d));
  const auto trace = kf_filter(model, psi0(), rho);
  const Eigen::MatrixXd Sigma = model.prior().spatial.dense();
  const Eigen::MatrixXd L = model.prior().spatial.sqrt_dense();
  GaussianBelief b{Eigen::VectorXd::Zero(12), Sigma};
  double total = 0.0;
  for (int k = 0; k < 5; ++k) {
    if (k > 0) b = kf_predict(b, rho[static_cast<std::size_t>(k)], Sigma);
    const auto& e = d.metamodel.entries[static_cast<std::size_t>(k)];
    const auto up = kf_update(b, e, d.observations[static_cast<std::size_t>(k)],
                              material_eval(psi0(), d.frequencies[static_cast<std::size_t>(k)], 3));
    b = up.belief;
    total += up.log_lik_increment;
    const GaussianBelief w = to_belief(trace.filtered[static_cast<std::size_t>(k)]);
    CHECK((L * w.mean - b.mean).norm() < 1e-10);
    CHECK((L * w.cov * L.transpose() - b.cov).norm() < 1e-10);
    CHECK(std::abs(trace.increments[static_cast<std::size_t>(k)] - up.log_lik_increment) < 1e-9);
  }
  CHECK(std::abs(trace.log_lik - total) < 1e-9);
}

TEST_CASE("doubling R lowers the likelihood of data generated under R") {
  const std::vector<double> rho(4, 0.8);
  int lowered = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset d = oracle::small_dataset(500 + rep, 2, 4, 60, psi0(), rho, 0.3, 1.5, 0.5);
    Dataset d2 = d;
    for (auto& e : d2.metamodel.entries) e.R *= 2.0;
    const LinearGaussianModel m1(d, prior_of(d)), m2(d2, prior_of(d2));
    if (kf_loglik(m2, psi0(), rho) < kf_loglik(m1, psi0(), rho)) ++lowered;
  }
  CHECK(lowered == 20);
}

TEST_CASE("kf_loglik is deterministic and finite at full dimensions") {
  const std::vector<double> rho(20, 0.9);
  const Dataset d = oracle::small_dataset(77, 50, 20, 400, psi0(), rho, 0.1, 3.0, 0.05);
  const LinearGaussianModel model(d, prior_of(d));
  const double a = kf_loglik(model, psi0(), rho);
  const double b = kf_loglik(model, psi0(), rho);
  CHECK(std::isfinite(a));
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);

  Rng rng(5);
  const Eigen::MatrixXd path = sample_deviation_path(model, psi0(), rho, rng);
  CHECK(path.rows() == 20);
  CHECK(path.cols() == 200);
}

TEST_CASE("posterior covariance stays PSD over random SPD inputs") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 1000; ++t) {
    const int n = 4;
    const int d = 1 + t % 6;
    MetamodelEntry e;
    e.A.resize(d, n);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < n; ++j) e.A(i, j) = nd(gen) * 10.0;
    e.y0 = Eigen::VectorXd::Zero(d);
    e.R = random_spd(d, gen) * 1e-3;
    GaussianBelief b{Eigen::VectorXd::Zero(n), random_spd(n, gen)};
    Eigen::VectorXd y(d);
    for (auto& v : y) v = nd(gen);
    const auto u = kf_update(b, e, y, Eigen::VectorXd::Zero(n));
    CHECK(u.belief.cov == u.belief.cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(u.belief.cov);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10 * u.belief.cov.trace());
  }
}

TEST_CASE("update increment is invariant under a joint orthogonal rotation") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd;
  const int n = 8, d = 5;
  MetamodelEntry e;
  e.A.resize(d, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n; ++j) e.A(i, j) = nd(gen);
  e.y0 = Eigen::VectorXd::Random(d);
  e.R = random_spd(d, gen);
  Eigen::VectorXd y(d);
  for (auto& v : y) v = nd(gen);
  const GaussianBelief b{Eigen::VectorXd::Random(n), random_spd(n, gen)};
  const Eigen::VectorXd g = Eigen::VectorXd::Random(n);
  Eigen::MatrixXd X(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = nd(gen);
  const Eigen::MatrixXd Q = X.householderQr().householderQ();
  MetamodelEntry r;
  r.A = Q * e.A;
  r.y0 = Q * e.y0;
  r.R = Q * e.R * Q.transpose();
  const double a = kf_update(b, e, y, g).log_lik_increment;
  const double c = kf_update(b, r, Q * y, g).log_lik_increment;
  CHECK(std::abs(a - c) < 1e-10);
}

TEST_CASE("non-SPD innovation covariance raises a numerical error") {
  MetamodelEntry e;
  e.A = Eigen::MatrixXd::Zero(2, 4);
  e.y0 = Eigen::VectorXd::Zero(2);
  e.R = Eigen::MatrixXd::Zero(2, 2);
  GaussianBelief b{Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4)};
  CHECK_THROWS_AS(kf_update(b, e, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(4)), NumericalError);
}

TEST_CASE("FFBS with vanishing process noise is deterministic backwards") {
  const std::vector<double> rho{0.9, 1.0 - 1e-12, 1.0 - 1e-12, 1.0 - 1e-12};
  const Dataset d = oracle::small_dataset(21, 2, 4, 3, psi0(), rho, 0.3, 1.5, 0.2);
  const LinearGaussianModel model(d, prior_of(d));
  const auto trace = kf_filter(model, psi0(), rho);
  std::vector<GaussianBelief> beliefs;
  for (const auto& s : trace.filtered) beliefs.push_back(to_belief(s));
  Rng rng(2);
  const auto path = ffbs_sample(beliefs, rho, Eigen::MatrixXd::Identity(8, 8), rng);
  for (int k = 0; k < 3; ++k)
    CHECK((path[static_cast<std::size_t>(k)] - path[static_cast<std::size_t>(k + 1)] / rho[static_cast<std::size_t>(k + 1)])
              .norm() < 1e-4);
}

TEST_CASE("FFBS path mean matches the joint-Gaussian smoother") {
  const std::vector<double> rho{0.7, 0.6, 0.9, 0.4};
  const Dataset d = oracle::small_dataset(31, 2, 4, 3, psi0(), rho, 0.3, 1.5, 0.2);
  const LinearGaussianModel model(d, prior_of(d));
  const Eigen::VectorXd mean = oracle::smoothing_mean(d, psi0(), rho, 0.3, 1.5);
  const Eigen::VectorXd sd = oracle::smoothing_cov(d, psi0(), rho, 0.3, 1.5).diagonal().cwiseSqrt();
  const int draws = 10000;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(32);
  Rng rng(99);
  for (int i = 0; i < draws; ++i) {
    const Eigen::MatrixXd p = sample_deviation_path(model, psi0(), rho, rng);
    for (int k = 0; k < 4; ++k) acc.segment(8 * k, 8) += p.row(k).transpose();
  }
  acc /= draws;
  for (int i = 0; i < 32; ++i) CHECK(std::abs(acc[i] - mean[i]) < 3.0 * sd[i] / std::sqrt(double(draws)) + 1e-12);
}

TEST_CASE("lower_triangular_inverse") {
  for (int n : {1, 5, 48, 49, 130}) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Random(n, n).triangularView<Eigen::Lower>();
    L.diagonal().array() = L.diagonal().array().abs() + 2.0;
    const Eigen::MatrixXd X = lower_triangular_inverse(L);
    CHECK((L * X - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(X.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff() == 0.0);
  }
}
