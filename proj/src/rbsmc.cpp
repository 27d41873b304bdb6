#include "rbpmmh/rbsmc.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "rbpmmh/error.hpp"
#include "rbpmmh/parallel.hpp"

namespace rbpmmh {

double log_sum_exp(std::span<const double> values) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values)
    if (v > mx) mx = v;
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

std::vector<double> normalize_log_weights(std::span<const double> log_weights) {
  const double lse = log_sum_exp(log_weights);
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - lse);
  return w;
}

double ess(std::span<const double> log_weights) {
  const auto w = normalize_log_weights(log_weights);
  double s2 = 0.0;
  for (double x : w) s2 += x * x;
  return 1.0 / s2;
}

std::vector<int> systematic_resample(std::span<const double> weights, double u) {
  const int n = static_cast<int>(weights.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  double cum = weights.empty() ? 0.0 : weights[0];
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double point = (i + u) / n;
    while (point >= cum && j < n - 1) cum += weights[static_cast<std::size_t>(++j)];
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

std::vector<int> systematic_resample(std::span<const double> weights, Rng& rng) {
  return systematic_resample(weights, rng.uniform());
}

Eigen::MatrixXd sample_deviation_path(const LinearGaussianModel& model, const MaterialParams& psi,
                                      std::span<const double> rho_path, Rng& rng) {
  const FilterTrace trace = kf_filter(model, psi, rho_path);
  std::vector<GaussianBelief> beliefs;
  beliefs.reserve(trace.filtered.size());
  for (const auto& s : trace.filtered) beliefs.push_back(to_belief(s));
  const int n = model.state_dim();
  const auto white_path = ffbs_sample(beliefs, rho_path, Eigen::MatrixXd::Identity(n, n), rng);
  Eigen::MatrixXd out(model.n_freqs(), n);
  for (int k = 0; k < model.n_freqs(); ++k) out.row(k) = model.unwhiten(white_path[static_cast<std::size_t>(k)]).transpose();
  return out;
}

SmcResult smc_run(const LinearGaussianModel& model, const MaterialParams& psi, const SmcOptions& options,
                  std::uint64_t seed) {
  const int Np = options.n_particles;
  if (Np < 2) throw ContractViolation("smc_run: n_particles must be >= 2");
  psi.validate();
  const int K = model.n_freqs();
  const auto& walk = model.prior().rho_walk;
  const auto evidence = model.evidence(psi);

  using StatePtr = std::shared_ptr<const InfoState>;
  std::vector<std::vector<double>> rho(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(Np)));
  std::vector<std::vector<int>> ancestor(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(Np)));
  std::vector<StatePtr> current(static_cast<std::size_t>(Np));
  std::vector<StatePtr> next(static_cast<std::size_t>(Np));
  std::vector<double> increments(static_cast<std::size_t>(Np));
  std::vector<double> log_w(static_cast<std::size_t>(Np), 0.0);
  std::vector<int> parent(static_cast<std::size_t>(Np));
  for (int i = 0; i < Np; ++i) parent[static_cast<std::size_t>(i)] = i;

  SmcResult result;
  result.ess_trace.resize(static_cast<std::size_t>(K));
  result.resample_flags.assign(static_cast<std::size_t>(K), false);

  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (k == 0) {
      // Delta x_1 ~ N(0, Sigma) whatever rho_1 is, so the first update is
      // common to every particle.
      auto shared = std::make_shared<InfoState>();
      const double inc = info_update(info_prior(model.state_dim()), model.step(0), evidence[0], *shared);
      for (int i = 0; i < Np; ++i) {
        auto rng = Rng::substream(seed, {stream::particle, 0, static_cast<std::uint64_t>(i)});
        rho[0][static_cast<std::size_t>(i)] = walk.step(walk.rho_init, rng.normal());
        ancestor[0][static_cast<std::size_t>(i)] = -1;
        next[static_cast<std::size_t>(i)] = shared;
        increments[static_cast<std::size_t>(i)] = inc;
      }
    } else {
      parallel_for(static_cast<std::size_t>(Np), options.threads, [&](std::size_t i) {
        const int a = parent[i];
        auto rng = Rng::substream(seed, {stream::particle, static_cast<std::uint64_t>(k), i});
        const double r = walk.step(rho[ku - 1][static_cast<std::size_t>(a)], rng.normal());
        rho[ku][i] = r;
        ancestor[ku][i] = a;
        auto state = std::make_shared<InfoState>();
        const InfoState predicted = info_predict(*current[static_cast<std::size_t>(a)], r);
        double inc = info_update(predicted, model.step(k), evidence[ku], *state);
        if (std::isnan(inc)) inc = -std::numeric_limits<double>::infinity();
        increments[i] = inc;
        next[i] = std::move(state);
      });
    }

    // Weighted mean of the incremental likelihoods under the previous
    // normalized weights.
    const double lse_prev = log_sum_exp(log_w);
    std::vector<double> joint(static_cast<std::size_t>(Np));
    for (int i = 0; i < Np; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const double lw_parent = log_w[static_cast<std::size_t>(parent[iu])];
      joint[iu] = lw_parent + increments[iu];
    }
    const double lse_joint = log_sum_exp(joint);
    if (!std::isfinite(lse_joint))
      throw DegenerateLikelihood("smc_run: all particle weights vanished at step " + std::to_string(k + 1), k + 1);
    result.log_lik_hat += lse_joint - lse_prev;
    log_w = joint;
    current.swap(next);
    for (int i = 0; i < Np; ++i) parent[static_cast<std::size_t>(i)] = i;

    result.ess_trace[ku] = ess(log_w);
    if (k + 1 < K && result.ess_trace[ku] < options.ess_threshold * Np) {
      auto rng = Rng::substream(seed, {stream::resample, static_cast<std::uint64_t>(k)});
      parent = systematic_resample(normalize_log_weights(log_w), rng);
      std::fill(log_w.begin(), log_w.end(), 0.0);
      result.resample_flags[ku] = true;
    }
  }

  // Pick the output particle by its final weight and trace its rho ancestry.
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
  result.sampled_rho_path.resize(static_cast<std::size_t>(K));
  for (int k = K - 1; k >= 0; --k) {
    result.sampled_rho_path[static_cast<std::size_t>(k)] = rho[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
    idx = ancestor[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
  }
  result.path_seed = derive_seed(seed, {stream::path});
  if (options.sample_path) {
    Rng path_rng(result.path_seed);
    result.sampled_delta_x = sample_deviation_path(model, psi, result.sampled_rho_path, path_rng);
  }
  return result;
}

}  // namespace rbpmmh
