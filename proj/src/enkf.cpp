#include "rbpmmh/enkf.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "rbpmmh/error.hpp"
#include "rbpmmh/parallel.hpp"

namespace rbpmmh {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

struct WhitenedObservation {
  Eigen::MatrixXd Aw;
  Eigen::VectorXd resid;  // R^-1/2 (y - y0)
  double log_det_R = 0.0;
};

WhitenedObservation whiten(const MetamodelEntry& entry, const Eigen::VectorXd& y) {
  if (!entry.r_is_diagonal()) throw ContractViolation("EnKF update requires a diagonal observation covariance");
  const Eigen::VectorXd r = entry.R.diagonal();
  if ((r.array() <= 0.0).any()) throw NumericalError("EnKF update: R has a non-positive diagonal");
  const Eigen::VectorXd w = r.cwiseSqrt().cwiseInverse();
  return {w.asDiagonal() * entry.A, w.cwiseProduct(y - entry.y0), r.array().log().sum()};
}

}  // namespace

Eigen::MatrixXd Ensemble::covariance() const {
  const Eigen::MatrixXd Z = anomalies();
  return Z * Z.transpose() / static_cast<double>(size() - 1);
}

Ensemble enkf_initial(const SpatialCovariance& spatial, int ensemble_size, Rng& rng) {
  if (ensemble_size < 2) throw ContractViolation("ensemble size must be >= 2");
  return {spatial.apply_sqrt(normal_matrix(spatial.dim(), ensemble_size, rng))};
}

Ensemble enkf_predict(const Ensemble& ens, double rho_next, const SpatialCovariance& spatial, Rng& rng) {
  if (ens.dim() != spatial.dim()) throw ContractViolation("enkf_predict: dimension mismatch");
  const Eigen::MatrixXd noise = spatial.apply_sqrt(normal_matrix(ens.dim(), ens.size(), rng));
  return {rho_next * ens.members + std::sqrt(1.0 - rho_next * rho_next) * noise};
}

Ensemble enkf_predict_noiseless(const Ensemble& ens, double rho_next) { return {rho_next * ens.members}; }

EnkfUpdate enkf_update_whitened(const Ensemble& ens, const Eigen::MatrixXd& Aw, const Eigen::VectorXd& zw,
                                double log_det_R, const Eigen::MatrixXd& perturbations) {
  const int M = ens.size();
  if (M < 2) throw ContractViolation("enkf_update: ensemble size must be >= 2");
  if (Aw.cols() != ens.dim() || Aw.rows() != zw.size() || perturbations.rows() != zw.size() ||
      perturbations.cols() != M)
    throw ContractViolation("enkf_update: dimension mismatch");

  const Eigen::VectorXd xbar = ens.mean();
  const Eigen::MatrixXd Z = ens.members.colwise() - xbar;
  const double scale = 1.0 / std::sqrt(static_cast<double>(M - 1));
  const Eigen::MatrixXd AZ = Aw * Z;
  const Eigen::MatrixXd Y = scale * AZ;

  // Factor whichever of I_M + Y^T Y and I_d + Y Y^T is smaller; they share
  // the determinant and give the same gain by the push-through identity.
  const bool ensemble_space = M <= zw.size();
  const Eigen::Index m = ensemble_space ? M : zw.size();
  EnkfUpdate out;
  Eigen::MatrixXd core = Eigen::MatrixXd::Identity(m, m);
  if (ensemble_space)
    core.selfadjointView<Eigen::Lower>().rankUpdate(Y.transpose());
  else
    core.selfadjointView<Eigen::Lower>().rankUpdate(Y);
  Eigen::LLT<Eigen::MatrixXd> llt(core);
  if (llt.info() != Eigen::Success) {
    core.diagonal().array() += 1e-10 * core.diagonal().sum() / static_cast<double>(m);
    llt.compute(core);
    out.regularized = true;
    if (llt.info() != Eigen::Success) throw NumericalError("enkf_update: innovation core matrix is singular");
  }

  const Eigen::VectorXd nu = zw - Aw * xbar;
  double quad = 0.0;
  if (ensemble_space) {
    const Eigen::VectorXd Ytnu = Y.transpose() * nu;
    quad = nu.squaredNorm() - Ytnu.dot(llt.solve(Ytnu));
  } else {
    quad = nu.dot(llt.solve(nu));
  }
  const double log_det_S = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.log_lik_increment = -0.5 * (static_cast<double>(zw.size()) * kLog2Pi + log_det_R + log_det_S + quad);

  // Member innovations: zw + e_i - Aw x_i = (nu + e_i) - AZ_i.
  Eigen::MatrixXd D = perturbations - AZ;
  D.colwise() += nu;
  if (ensemble_space)
    out.ensemble.members = ens.members + scale * Z * llt.solve(Y.transpose() * D);
  else
    out.ensemble.members = ens.members + (scale * Z * Y.transpose()) * llt.solve(D);
  return out;
}

EnkfUpdate enkf_update_whitened(const Ensemble& ens, const Eigen::MatrixXd& Aw, const Eigen::VectorXd& zw,
                                double log_det_R, Rng& rng) {
  return enkf_update_whitened(ens, Aw, zw, log_det_R, normal_matrix(zw.size(), ens.size(), rng));
}

EnkfUpdate enkf_update(const Ensemble& ens, const MetamodelEntry& entry, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& g, Rng& rng) {
  if (g.size() != ens.dim() || entry.state_dim() != ens.dim() || y.size() != entry.obs_dim())
    throw ContractViolation("enkf_update: dimension mismatch");
  const auto obs = whiten(entry, y);
  const Eigen::VectorXd zw = obs.resid - obs.Aw * g;
  return enkf_update_whitened(ens, obs.Aw, zw, obs.log_det_R, rng);
}

SmcResult smc_run_enkf(const LinearGaussianModel& model, const MaterialParams& psi, const SmcOptions& options,
                       const EnkfOptions& enkf, std::uint64_t seed) {
  const int Np = options.n_particles;
  const int M = enkf.ensemble_size;
  if (Np < 1) throw ContractViolation("smc_run_enkf: n_particles must be >= 1");
  if (M < 2) throw ContractViolation("smc_run_enkf: ensemble_size must be >= 2");
  psi.validate();
  const int K = model.n_freqs();
  const auto& data = model.dataset();
  const auto& spatial = model.prior().spatial;
  const auto& walk = model.prior().rho_walk;
  const auto g = model.material_means(psi);

  std::vector<WhitenedObservation> obs;
  std::vector<Eigen::VectorXd> zw;
  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    obs.push_back(whiten(data.metamodel.entries[ku], data.observations[ku]));
    zw.push_back(obs.back().resid - obs.back().Aw * g[ku]);
  }

  struct StepOut {
    std::shared_ptr<const Ensemble> ens;
    double rho = 0.0;
    double inc = 0.0;
    bool regularized = false;
  };
  // One particle step; a pure function of (k, particle, parent), so a lineage
  // can be replayed exactly.
  auto particle_step = [&](int k, int i, const Ensemble* parent, double parent_rho) {
    auto rng = Rng::substream(seed, {stream::particle, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)});
    StepOut out;
    out.rho = walk.step(k == 0 ? walk.rho_init : parent_rho, rng.normal());
    Ensemble prior_ens;
    if (k == 0) {
      prior_ens = enkf.suppress_noise ? Ensemble{Eigen::MatrixXd::Zero(spatial.dim(), M)}
                                      : enkf_initial(spatial, M, rng);
    } else {
      prior_ens = enkf.suppress_noise ? enkf_predict_noiseless(*parent, out.rho)
                                      : enkf_predict(*parent, out.rho, spatial, rng);
    }
    const auto ku = static_cast<std::size_t>(k);
    const Eigen::MatrixXd pert = enkf.suppress_noise ? Eigen::MatrixXd::Zero(zw[ku].size(), M)
                                                     : normal_matrix(zw[ku].size(), M, rng);
    auto upd = enkf_update_whitened(prior_ens, obs[ku].Aw, zw[ku], obs[ku].log_det_R, pert);
    out.inc = std::isnan(upd.log_lik_increment) ? -std::numeric_limits<double>::infinity() : upd.log_lik_increment;
    out.regularized = upd.regularized;
    out.ens = std::make_shared<const Ensemble>(std::move(upd.ensemble));
    return out;
  };

  std::vector<std::vector<double>> rho(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(Np)));
  std::vector<std::vector<int>> ancestor(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(Np)));
  std::vector<std::shared_ptr<const Ensemble>> current(static_cast<std::size_t>(Np));
  std::vector<StepOut> step_out(static_cast<std::size_t>(Np));
  std::vector<double> log_w(static_cast<std::size_t>(Np), 0.0);
  std::vector<int> parent(static_cast<std::size_t>(Np));
  for (int i = 0; i < Np; ++i) parent[static_cast<std::size_t>(i)] = i;

  SmcResult result;
  result.ess_trace.resize(static_cast<std::size_t>(K));
  result.spread_trace.resize(static_cast<std::size_t>(K));
  result.resample_flags.assign(static_cast<std::size_t>(K), false);

  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    parallel_for(static_cast<std::size_t>(Np), options.threads, [&](std::size_t i) {
      const int a = parent[i];
      const Ensemble* p = k == 0 ? nullptr : current[static_cast<std::size_t>(a)].get();
      const double pr = k == 0 ? 0.0 : rho[ku - 1][static_cast<std::size_t>(a)];
      step_out[i] = particle_step(k, static_cast<int>(i), p, pr);
      rho[ku][i] = step_out[i].rho;
      ancestor[ku][i] = k == 0 ? -1 : a;
    });

    const double lse_prev = log_sum_exp(log_w);
    std::vector<double> joint(static_cast<std::size_t>(Np));
    for (int i = 0; i < Np; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      joint[iu] = log_w[static_cast<std::size_t>(parent[iu])] + step_out[iu].inc;
      if (step_out[iu].regularized) ++result.regularized_solves;
    }
    const double lse_joint = log_sum_exp(joint);
    if (!std::isfinite(lse_joint))
      throw DegenerateLikelihood("smc_run_enkf: all particle weights vanished at step " + std::to_string(k + 1), k + 1);
    result.log_lik_hat += lse_joint - lse_prev;
    log_w = joint;
    for (int i = 0; i < Np; ++i) {
      current[static_cast<std::size_t>(i)] = step_out[static_cast<std::size_t>(i)].ens;
      parent[static_cast<std::size_t>(i)] = i;
    }

    const auto w = normalize_log_weights(log_w);
    double spread = 0.0;
    for (int i = 0; i < Np; ++i) {
      const Ensemble& e = *current[static_cast<std::size_t>(i)];
      spread += w[static_cast<std::size_t>(i)] *
                std::sqrt(e.anomalies().squaredNorm() / (static_cast<double>(M - 1) * e.dim()));
    }
    result.spread_trace[ku] = spread;
    result.ess_trace[ku] = ess(log_w);
    if (k + 1 < K && result.ess_trace[ku] < options.ess_threshold * Np) {
      auto rng = Rng::substream(seed, {stream::resample, static_cast<std::uint64_t>(k)});
      parent = systematic_resample(w, rng);
      std::fill(log_w.begin(), log_w.end(), 0.0);
      result.resample_flags[ku] = true;
    }
  }

  const auto w = normalize_log_weights(log_w);
  auto pick_rng = Rng::substream(seed, {stream::final_pick});
  const double u = pick_rng.uniform();
  int idx = Np - 1;
  double cum = 0.0;
  for (int i = 0; i < Np; ++i) {
    cum += w[static_cast<std::size_t>(i)];
    if (u < cum) {
      idx = i;
      break;
    }
  }
  const int member = std::min(M - 1, static_cast<int>(pick_rng.uniform() * M));

  std::vector<int> lineage(static_cast<std::size_t>(K));
  result.sampled_rho_path.resize(static_cast<std::size_t>(K));
  for (int k = K - 1; k >= 0; --k) {
    lineage[static_cast<std::size_t>(k)] = idx;
    result.sampled_rho_path[static_cast<std::size_t>(k)] = rho[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
    idx = ancestor[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
  }
  result.path_seed = derive_seed(seed, {stream::path});
  if (options.sample_path) {
    result.sampled_delta_x.resize(K, spatial.dim());
    std::shared_ptr<const Ensemble> ens;
    double r = 0.0;
    for (int k = 0; k < K; ++k) {
      auto out = particle_step(k, lineage[static_cast<std::size_t>(k)], ens.get(), r);
      ens = out.ens;
      r = out.rho;
      result.sampled_delta_x.row(k) = ens->members.col(member).transpose();
    }
  }
  return result;
}

}  // namespace rbpmmh
