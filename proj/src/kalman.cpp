#include "rbpmmh/kalman.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "rbpmmh/error.hpp"

namespace rbpmmh {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double condition_estimate(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double lo = std::abs(ev.minCoeff());
  return lo > 0.0 ? std::abs(ev.maxCoeff()) / lo : std::numeric_limits<double>::infinity();
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void symmetrize(Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

void require_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0))
    throw ContractViolation("rho must lie in (0, 1), got " + std::to_string(rho));
}

}  // namespace

GaussianBelief kf_predict(const GaussianBelief& belief, double rho_next,
                          const Eigen::MatrixXd& stationary_cov) {
  require_rho(rho_next);
  if (belief.cov.rows() != stationary_cov.rows())
    throw ContractViolation("kf_predict: belief and stationary covariance differ in dimension");
  GaussianBelief out;
  out.mean = rho_next * belief.mean;
  out.cov = rho_next * rho_next * belief.cov + (1.0 - rho_next * rho_next) * stationary_cov;
  symmetrize(out.cov);
  return out;
}

KalmanUpdate kf_update(const GaussianBelief& belief, const MetamodelEntry& entry,
                       const Eigen::VectorXd& y, const Eigen::VectorXd& g) {
  const auto& A = entry.A;
  const auto n = belief.mean.size();
  if (A.cols() != n || g.size() != n || y.size() != A.rows() || entry.y0.size() != A.rows())
    throw ContractViolation("kf_update: dimension mismatch");

  const Eigen::VectorXd nu = y - A * (g + belief.mean) - entry.y0;
  const Eigen::MatrixXd AP = A * belief.cov;
  Eigen::MatrixXd S = AP * A.transpose() + entry.R;
  symmetrize(S);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    const double cond = condition_estimate(S);
    throw NumericalError("kf_update: innovation covariance is not positive definite (condition ~ " +
                             std::to_string(cond) + ")",
                         cond);
  }
  // K = P A^T S^-1  <=>  K^T = S^-1 A P
  const Eigen::MatrixXd K = llt.solve(AP).transpose();
  const Eigen::VectorXd alpha = llt.solve(nu);

  KalmanUpdate out;
  out.belief.mean = belief.mean + K * nu;
  Eigen::MatrixXd IKA = -K * A;
  IKA.diagonal().array() += 1.0;
  out.belief.cov = IKA * belief.cov * IKA.transpose() + K * entry.R * K.transpose();
  symmetrize(out.belief.cov);
  out.log_lik_increment =
      -0.5 * (static_cast<double>(nu.size()) * kLog2Pi + log_det_from_llt(llt) + nu.dot(alpha));
  return out;
}

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian_log_density: covariance is not SPD");
  const Eigen::VectorXd r = x - mean;
  const Eigen::VectorXd w = llt.matrixL().solve(r);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det_from_llt(llt) + w.squaredNorm());
}

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
  Eigen::VectorXd white(mean.size());
  for (auto& w : white) w = rng.normal();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return mean + llt.matrixL() * white;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return mean + es.eigenvectors() * root.cwiseProduct(white);
}

namespace {

// In-place inverse of the lower triangle of X (upper triangle ignored).
// inv([[L11, 0], [L21, L22]]) = [[X11, 0], [-X22 L21 X11, X22]].
void invert_lower_in_place(Eigen::Ref<Eigen::MatrixXd> X) {
  const Eigen::Index n = X.rows();
  if (n <= 48) {
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    X.triangularView<Eigen::Lower>().solveInPlace(I);
    X.triangularView<Eigen::Lower>() = I;
    return;
  }
  const Eigen::Index h = n / 2;
  const Eigen::Index t = n - h;
  invert_lower_in_place(X.topLeftCorner(h, h));
  invert_lower_in_place(X.bottomRightCorner(t, t));
  const Eigen::MatrixXd tmp = X.bottomLeftCorner(t, h) * X.topLeftCorner(h, h).triangularView<Eigen::Lower>();
  X.bottomLeftCorner(t, h).noalias() = -(X.bottomRightCorner(t, t).triangularView<Eigen::Lower>() * tmp);
}

}  // namespace

Eigen::MatrixXd lower_triangular_inverse(const Eigen::MatrixXd& L) {
  Eigen::MatrixXd X = L;
  invert_lower_in_place(X);
  X.triangularView<Eigen::StrictlyUpper>().setZero();
  return X;
}

LinearGaussianModel::LinearGaussianModel(const Dataset& data, const DeviationModel& prior)
    : data_(&data), prior_(prior) {
  data.validate();
  prior.validate();
  if (prior.spatial.n_zones != data.n_zones)
    throw ContractViolation("deviation prior has " + std::to_string(prior.spatial.n_zones) +
                            " zones but the dataset has " + std::to_string(data.n_zones));
  const int K = data.n_freqs();
  steps_.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto& e = data.metamodel.entries[static_cast<std::size_t>(k)];
    const Eigen::VectorXd resid = data.observations[static_cast<std::size_t>(k)] - e.y0;
    Eigen::MatrixXd Aw;
    Eigen::VectorXd yw;
    Step s;
    s.obs_dim = e.obs_dim();
    if (e.r_is_diagonal()) {
      const Eigen::VectorXd r = e.R.diagonal();
      if ((r.array() <= 0.0).any())
        throw NumericalError("observation covariance R_" + std::to_string(k + 1) + " has a non-positive diagonal");
      const Eigen::VectorXd w = r.cwiseSqrt().cwiseInverse();
      Aw = w.asDiagonal() * e.A;
      yw = w.cwiseProduct(resid);
      s.log_det_R = r.array().log().sum();
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt(e.R);
      if (llt.info() != Eigen::Success) {
        const double cond = condition_estimate(e.R);
        throw NumericalError("observation covariance R_" + std::to_string(k + 1) + " is not SPD", cond);
      }
      Aw = llt.matrixL().solve(e.A);
      yw = llt.matrixL().solve(resid);
      s.log_det_R = log_det_from_llt(llt);
    }
    // (Aw L) row by row: (L^T a)^T for each row a of Aw.
    Eigen::MatrixXd AL(Aw.rows(), Aw.cols());
    for (Eigen::Index i = 0; i < Aw.rows(); ++i)
      AL.row(i) = prior_.spatial.apply_sqrt_transpose(Aw.row(i).transpose()).transpose();
    s.B.noalias() = AL.transpose() * AL;
    s.cross.noalias() = AL.transpose() * Aw;
    s.gram.noalias() = Aw.transpose() * Aw;
    s.data_proj.noalias() = AL.transpose() * yw;
    s.data_gram.noalias() = Aw.transpose() * yw;
    s.data_sq = yw.squaredNorm();
    steps_.push_back(std::move(s));
  }
}

std::vector<Eigen::VectorXd> LinearGaussianModel::material_means(const MaterialParams& psi) const {
  std::vector<Eigen::VectorXd> g;
  g.reserve(steps_.size());
  for (double f : data_->frequencies) g.push_back(material_eval(psi, f, n_zones()));
  return g;
}

LinearGaussianModel::Evidence LinearGaussianModel::evidence(int k, const Eigen::VectorXd& g) const {
  const Step& s = step(k);
  Evidence ev;
  ev.b = s.data_proj - s.cross * g;
  ev.q = s.data_sq - 2.0 * s.data_gram.dot(g) + g.dot(s.gram * g);
  return ev;
}

std::vector<LinearGaussianModel::Evidence> LinearGaussianModel::evidence(const MaterialParams& psi) const {
  const auto g = material_means(psi);
  std::vector<Evidence> out;
  out.reserve(g.size());
  for (int k = 0; k < n_freqs(); ++k) out.push_back(evidence(k, g[static_cast<std::size_t>(k)]));
  return out;
}

InfoState info_prior(int dim) {
  InfoState s;
  s.mean = Eigen::VectorXd::Zero(dim);
  s.precision = Eigen::MatrixXd::Identity(dim, dim);
  s.log_det_precision = 0.0;
  return s;
}

InfoState info_predict(const InfoState& filtered, double rho_next) {
  require_rho(rho_next);
  const double rho2 = rho_next * rho_next;
  const double c = 1.0 - rho2;
  const Eigen::Index n = filtered.mean.size();

  Eigen::MatrixXd H = c * filtered.precision;
  H.diagonal().array() += rho2;
  // Factor and invert in place: H becomes L_H, then L_H^-1.
  Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>, Eigen::Lower> llt(H);
  if (llt.info() != Eigen::Success)
    throw NumericalError("info_predict: rho^2 I + (1 - rho^2) Lambda is not SPD");
  const double log_det_H = 2.0 * H.diagonal().array().log().sum();
  invert_lower_in_place(H);
  H.triangularView<Eigen::StrictlyUpper>().setZero();

  InfoState out;
  out.precision = Eigen::MatrixXd::Zero(n, n);
  out.precision.selfadjointView<Eigen::Lower>().rankUpdate(H.transpose(), -rho2 / c);
  out.precision.diagonal().array() += 1.0 / c;
  out.log_det_precision = filtered.log_det_precision - log_det_H;
  out.mean = rho_next * filtered.mean;
  return out;
}

double info_update(const InfoState& predicted, const LinearGaussianModel::Step& step,
                   const LinearGaussianModel::Evidence& ev, InfoState& out) {
  const auto& m = predicted.mean;
  out.precision = predicted.precision + step.B;
  Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(out.precision);
  if (llt.info() != Eigen::Success) {
    Eigen::MatrixXd sym = out.precision.selfadjointView<Eigen::Lower>();
    const double cond = condition_estimate(sym);
    throw NumericalError("info_update: posterior precision is not SPD (condition ~ " + std::to_string(cond) + ")",
                         cond);
  }
  out.log_det_precision = log_det_from_llt(llt);

  const Eigen::VectorXd Bm = step.B * m;
  const Eigen::VectorXd r = ev.b - Bm;
  const Eigen::VectorXd s = llt.solve(r);
  out.mean = m + s;

  const double resid_sq = ev.q - 2.0 * ev.b.dot(m) + m.dot(Bm);
  const double quad = resid_sq - r.dot(s);
  const double log_det_S = out.log_det_precision - predicted.log_det_precision;
  return -0.5 * (step.obs_dim * kLog2Pi + step.log_det_R + log_det_S + quad);
}

GaussianBelief to_belief(const InfoState& state) {
  const Eigen::Index n = state.mean.size();
  Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(state.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("to_belief: precision is not SPD");
  GaussianBelief b;
  b.mean = state.mean;
  b.cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
  symmetrize(b.cov);
  return b;
}

FilterTrace kf_filter(const LinearGaussianModel& model, const MaterialParams& psi,
                      std::span<const double> rho_path) {
  const int K = model.n_freqs();
  if (static_cast<int>(rho_path.size()) != K)
    throw ContractViolation("kf_filter: rho path has length " + std::to_string(rho_path.size()) +
                            ", expected " + std::to_string(K));
  const auto ev = model.evidence(psi);
  FilterTrace trace;
  trace.filtered.resize(static_cast<std::size_t>(K));
  trace.increments.resize(static_cast<std::size_t>(K));
  InfoState predicted = info_prior(model.state_dim());
  for (int k = 0; k < K; ++k) {
    if (k > 0) predicted = info_predict(trace.filtered[static_cast<std::size_t>(k - 1)], rho_path[static_cast<std::size_t>(k)]);
    const double inc = info_update(predicted, model.step(k), ev[static_cast<std::size_t>(k)],
                                   trace.filtered[static_cast<std::size_t>(k)]);
    trace.increments[static_cast<std::size_t>(k)] = inc;
    trace.log_lik += inc;
  }
  return trace;
}

double kf_loglik(const LinearGaussianModel& model, const MaterialParams& psi,
                 std::span<const double> rho_path) {
  return kf_filter(model, psi, rho_path).log_lik;
}

std::vector<Eigen::VectorXd> ffbs_sample(std::span<const GaussianBelief> filtered,
                                         std::span<const double> rho_path,
                                         const Eigen::MatrixXd& stationary_cov, Rng& rng) {
  const std::size_t K = filtered.size();
  if (K == 0 || rho_path.size() != K) throw ContractViolation("ffbs_sample: history and rho path lengths differ");
  std::vector<Eigen::VectorXd> path(K);
  path[K - 1] = sample_gaussian(filtered[K - 1].mean, filtered[K - 1].cov, rng);
  for (std::size_t k = K - 1; k-- > 0;) {
    const double rho = rho_path[k + 1];
    require_rho(rho);
    const auto& P = filtered[k].cov;
    const auto& m = filtered[k].mean;
    Eigen::MatrixXd pred = rho * rho * P + (1.0 - rho * rho) * stationary_cov;
    symmetrize(pred);
    Eigen::LLT<Eigen::MatrixXd> llt(pred);
    if (llt.info() != Eigen::Success) throw NumericalError("ffbs_sample: predicted covariance is not SPD");
    const Eigen::MatrixXd rhoP = rho * P;
    const Eigen::MatrixXd J = llt.solve(rhoP).transpose();
    const Eigen::VectorXd mean = m + J * (path[k + 1] - rho * m);
    Eigen::MatrixXd cov = P - J * rhoP;
    symmetrize(cov);
    path[k] = sample_gaussian(mean, cov, rng);
  }
  return path;
}

}  // namespace rbpmmh
