#include "rbpmmh/ssm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "rbpmmh/error.hpp"

namespace rbpmmh {

namespace {

std::atomic<std::uint64_t> g_dense_formations{0};

}  // namespace

void SpatialCovariance::validate() const {
  if (!(sigma > 0.0) || !(length_scale > 0.0) || n_zones < 1)
    throw ContractViolation("SpatialCovariance requires sigma > 0, length_scale > 0, n_zones >= 1");
}

double SpatialCovariance::correlation() const { return std::exp(-1.0 / length_scale); }

Eigen::MatrixXd SpatialCovariance::block_dense() const {
  validate();
  Eigen::MatrixXd S(n_zones, n_zones);
  const double s2 = sigma * sigma;
  for (int i = 0; i < n_zones; ++i)
    for (int j = 0; j < n_zones; ++j) S(i, j) = s2 * std::exp(-std::abs(i - j) / length_scale);
  return S;
}

Eigen::MatrixXd SpatialCovariance::dense() const {
  ++g_dense_formations;
  const Eigen::MatrixXd block = block_dense();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim(), dim());
  for (int b = 0; b < 4; ++b) S.block(b * n_zones, b * n_zones, n_zones, n_zones) = block;
  return S;
}

Eigen::MatrixXd SpatialCovariance::sqrt_dense() const {
  validate();
  const double a = correlation();
  const double tail = sigma * std::sqrt(1.0 - a * a);
  Eigen::MatrixXd Lb = Eigen::MatrixXd::Zero(n_zones, n_zones);
  for (int i = 0; i < n_zones; ++i) {
    Lb(i, 0) = sigma * std::pow(a, i);
    for (int j = 1; j <= i; ++j) Lb(i, j) = tail * std::pow(a, i - j);
  }
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dim(), dim());
  for (int b = 0; b < 4; ++b) L.block(b * n_zones, b * n_zones, n_zones, n_zones) = Lb;
  return L;
}

Eigen::VectorXd SpatialCovariance::apply_sqrt(const Eigen::VectorXd& v) const {
  Eigen::MatrixXd m = v;
  return apply_sqrt(m).col(0);
}

Eigen::MatrixXd SpatialCovariance::apply_sqrt(const Eigen::MatrixXd& m) const {
  if (m.rows() != dim()) throw ContractViolation("SpatialCovariance::apply_sqrt: dimension mismatch");
  const double a = correlation();
  const double tail = sigma * std::sqrt(1.0 - a * a);
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (int b = 0; b < 4; ++b) {
    const int o = b * n_zones;
    out.row(o) = sigma * m.row(o);
    for (int i = 1; i < n_zones; ++i) out.row(o + i) = a * out.row(o + i - 1) + tail * m.row(o + i);
  }
  return out;
}

Eigen::VectorXd SpatialCovariance::apply_sqrt_transpose(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw ContractViolation("SpatialCovariance::apply_sqrt_transpose: dimension mismatch");
  const double a = correlation();
  const double tail = sigma * std::sqrt(1.0 - a * a);
  Eigen::VectorXd out(v.size());
  for (int b = 0; b < 4; ++b) {
    const int o = b * n_zones;
    double acc = 0.0;
    for (int j = n_zones - 1; j >= 0; --j) {
      acc = v[o + j] + a * acc;
      out[o + j] = (j == 0 ? sigma : tail) * acc;
    }
  }
  return out;
}

Eigen::VectorXd SpatialCovariance::apply_inv_sqrt(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw ContractViolation("SpatialCovariance::apply_inv_sqrt: dimension mismatch");
  const double a = correlation();
  const double tail = sigma * std::sqrt(1.0 - a * a);
  Eigen::VectorXd out(v.size());
  for (int b = 0; b < 4; ++b) {
    const int o = b * n_zones;
    out[o] = v[o] / sigma;
    for (int i = 1; i < n_zones; ++i) out[o + i] = (v[o + i] - a * v[o + i - 1]) / tail;
  }
  return out;
}

Eigen::VectorXd SpatialCovariance::sample(Rng& rng) const {
  Eigen::VectorXd white(dim());
  for (auto& w : white) w = rng.normal();
  return apply_sqrt(white);
}

std::uint64_t SpatialCovariance::dense_formations() { return g_dense_formations.load(); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void RhoWalk::validate() const {
  if (!(sigma_rho >= 0.0) || !(rho_init > 0.0 && rho_init < 1.0))
    throw ContractViolation("RhoWalk requires sigma_rho >= 0 and rho_init in (0, 1)");
}

double RhoWalk::step(double rho, double xi) const {
  if (sigma_rho == 0.0) return rho;
  const double next = logistic(logit(rho) + sigma_rho * xi);
  // Keep strictly inside (0, 1) even when the logit walk saturates.
  constexpr double eps = 1e-12;
  return std::clamp(next, eps, 1.0 - eps);
}

void DeviationModel::validate() const {
  spatial.validate();
  rho_walk.validate();
}

DeviationState initial_state(const DeviationModel& model, Rng& rng) {
  DeviationState s;
  s.rho = model.rho_walk.step(model.rho_walk.rho_init, rng.normal());
  s.delta_x = model.spatial.sample(rng);
  return s;
}

DeviationState transition(const DeviationModel& model, const DeviationState& prev, Rng& rng) {
  const double xi = rng.normal();
  Eigen::VectorXd white(model.spatial.dim());
  for (auto& w : white) w = rng.normal();
  return transition(model, prev, xi, white);
}

DeviationState transition(const DeviationModel& model, const DeviationState& prev, double xi,
                          const Eigen::VectorXd& white) {
  if (prev.delta_x.size() != model.spatial.dim() || white.size() != model.spatial.dim())
    throw ContractViolation("transition: state dimension mismatch");
  DeviationState next;
  next.rho = model.rho_walk.step(prev.rho, xi);
  next.delta_x = next.rho * prev.delta_x +
                 std::sqrt(1.0 - next.rho * next.rho) * model.spatial.apply_sqrt(white);
  return next;
}

bool MetamodelEntry::r_is_diagonal() const {
  return R.rows() == R.cols() && (R - Eigen::MatrixXd(R.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
}

void Metamodel::validate() const {
  if (entries.empty()) throw ContractViolation("Metamodel has no entries");
  const int n = state_dim();
  const int d = obs_dim();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.state_dim() != n || e.obs_dim() != d || e.y0.size() != d || e.R.rows() != d || e.R.cols() != d)
      throw ContractViolation("Metamodel entry " + std::to_string(k) + " has inconsistent dimensions");
    if (!e.R.isApprox(e.R.transpose(), 1e-12))
      throw ContractViolation("Metamodel entry " + std::to_string(k) + ": R is not symmetric");
  }
}

Eigen::VectorXd observe(const MetamodelEntry& entry, const Eigen::VectorXd& x, Rng* rng) {
  if (x.size() != entry.state_dim())
    throw ContractViolation("observe: state has length " + std::to_string(x.size()) + ", operator expects " +
                            std::to_string(entry.state_dim()));
  Eigen::VectorXd y = entry.A * x + entry.y0;
  if (rng == nullptr) return y;
  Eigen::VectorXd white(entry.obs_dim());
  for (auto& w : white) w = rng->normal();
  if (entry.r_is_diagonal()) {
    y += entry.R.diagonal().cwiseSqrt().cwiseProduct(white);
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt(entry.R);
    if (llt.info() != Eigen::Success) throw NumericalError("observe: R is not positive definite");
    y += llt.matrixL() * white;
  }
  return y;
}

void Dataset::validate() const {
  if (frequencies.empty()) throw ContractViolation("Dataset needs at least one frequency");
  for (std::size_t k = 1; k < frequencies.size(); ++k)
    if (!(frequencies[k] > frequencies[k - 1]))
      throw ContractViolation("Dataset frequencies must be strictly increasing");
  if (observations.size() != frequencies.size() || metamodel.entries.size() != frequencies.size())
    throw ContractViolation("Dataset: frequencies, observations and metamodel disagree on K");
  metamodel.validate();
  if (metamodel.state_dim() != 4 * n_zones)
    throw ContractViolation("Dataset: metamodel state dimension " + std::to_string(metamodel.state_dim()) +
                            " does not equal 4 * n_zones = " + std::to_string(4 * n_zones));
  for (const auto& y : observations)
    if (y.size() != metamodel.obs_dim()) throw ContractViolation("Dataset: observation length mismatch");
}

void to_json(nlohmann::json& j, const DeviationModel& m) {
  j = nlohmann::json{{"sigma", m.spatial.sigma},
                     {"length_scale", m.spatial.length_scale},
                     {"n_zones", m.spatial.n_zones},
                     {"sigma_rho", m.rho_walk.sigma_rho},
                     {"rho_init", m.rho_walk.rho_init}};
}

void from_json(const nlohmann::json& j, DeviationModel& m) {
  m.spatial.sigma = j.at("sigma").get<double>();
  m.spatial.length_scale = j.at("length_scale").get<double>();
  m.spatial.n_zones = j.value("n_zones", m.spatial.n_zones);
  m.rho_walk.sigma_rho = j.value("sigma_rho", m.rho_walk.sigma_rho);
  m.rho_walk.rho_init = j.value("rho_init", m.rho_walk.rho_init);
}

}  // namespace rbpmmh
