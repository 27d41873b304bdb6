#include "rbpmmh/pmmh.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "rbpmmh/enkf.hpp"
#include "rbpmmh/error.hpp"

namespace rbpmmh {

std::string backend_name(Backend b) { return b == Backend::kf ? "kf" : "enkf"; }

Backend parse_backend(const std::string& s) {
  if (s == "kf") return Backend::kf;
  if (s == "enkf") return Backend::enkf;
  throw ConfigError("backend must be \"kf\" or \"enkf\", got \"" + s + "\"");
}

void PmmhConfig::validate() const {
  if (n_iters < 0) throw ConfigError("n_iters must be >= 0");
  if (n_particles < 2) throw ConfigError("n_particles must be >= 2");
  if (backend == Backend::enkf && ensemble_size < 2) throw ConfigError("ensemble_size must be >= 2");
  if (!(proposal_scale > 0.0)) throw ConfigError("proposal_scale must be > 0");
  if (adapt_start < 1 || adapt_interval < 1) throw ConfigError("adapt_start and adapt_interval must be >= 1");
  if (!(mixture_weight_fixed > 0.0 && mixture_weight_fixed <= 1.0))
    throw ConfigError("mixture_weight_fixed must lie in (0, 1]");
  if (!(ess_threshold >= 0.0 && ess_threshold <= 1.0)) throw ConfigError("ess_threshold must lie in [0, 1]");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (thin < 0 || burn_in < 0) throw ConfigError("thin and burn_in must be >= 0");
  for (std::size_t i = 0; i < tempering_schedule.size(); ++i) {
    const auto& p = tempering_schedule[i];
    if (!(p.beta > 0.0 && p.beta <= 1.0)) throw ConfigError("tempering beta must lie in (0, 1]");
    if (i > 0 && (p.iter <= tempering_schedule[i - 1].iter || p.beta < tempering_schedule[i - 1].beta))
      throw ConfigError("tempering schedule must have increasing iterations and non-decreasing beta");
  }
  if (!tempering_schedule.empty() && tempering_schedule.back().beta != 1.0)
    throw ConfigError("tempering schedule must end at beta = 1");
  try {
    init.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("init: ") + e.what());
  }
  if (priors.size() != init.n_params()) throw ConfigError("priors do not match the init parameter count");
  const auto names = init.parameter_names();
  const Eigen::VectorXd ex = ParamSpace::excess(init);
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (priors[i].fixed) continue;
    if (!(priors[i].median > 0.0) || !(priors[i].log_sd > 0.0))
      throw ConfigError(names[i] + ": prior_median and prior_log_sd must be > 0");
    if (!(ex[static_cast<Eigen::Index>(i)] > 0.0))
      throw ConfigError(names[i] + ": a sampled parameter needs a strictly positive initial excess");
  }
}

std::vector<int> PmmhConfig::free_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < priors.size(); ++i)
    if (!priors[i].fixed) out.push_back(static_cast<int>(i));
  return out;
}

void to_json(nlohmann::json& j, const PmmhConfig& c) {
  j = nlohmann::json{{"n_iters", c.n_iters},
                     {"n_particles", c.n_particles},
                     {"backend", backend_name(c.backend)},
                     {"ensemble_size", c.ensemble_size},
                     {"proposal_scale", c.proposal_scale},
                     {"adapt_start", c.adapt_start},
                     {"adapt_interval", c.adapt_interval},
                     {"adapt_stop", c.adapt_stop},
                     {"mixture_weight_fixed", c.mixture_weight_fixed},
                     {"prior_only", c.prior_only},
                     {"ess_threshold", c.ess_threshold},
                     {"seed", c.seed},
                     {"threads", c.threads},
                     {"thin", c.thin},
                     {"burn_in", c.burn_in},
                     {"init", c.init}};
  auto sched = nlohmann::json::array();
  for (const auto& p : c.tempering_schedule) sched.push_back({{"iter", p.iter}, {"beta", p.beta}});
  j["tempering_schedule"] = sched;
  auto params = nlohmann::json::object();
  const auto names = c.init.parameter_names();
  for (std::size_t i = 0; i < c.priors.size() && i < names.size(); ++i)
    params[names[i]] = {{"prior_median", c.priors[i].median},
                        {"prior_log_sd", c.priors[i].log_sd},
                        {"fixed", c.priors[i].fixed}};
  j["parameters"] = params;
  if (c.model) j["model"] = *c.model;
}

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

}  // namespace

void from_json(const nlohmann::json& j, PmmhConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const char* known[] = {"n_iters",        "n_particles",    "backend",       "ensemble_size",
                                "proposal_scale", "adapt_start",    "adapt_interval", "adapt_stop",
                                "mixture_weight_fixed", "tempering_schedule", "prior_only", "ess_threshold",
                                "seed",           "threads",        "thin",          "burn_in",
                                "init",           "parameters",     "model"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key \"" + key + "\"");
  }
  read_opt(j, "n_iters", c.n_iters);
  read_opt(j, "n_particles", c.n_particles);
  std::string backend = backend_name(c.backend);
  read_opt(j, "backend", backend);
  c.backend = parse_backend(backend);
  read_opt(j, "ensemble_size", c.ensemble_size);
  read_opt(j, "proposal_scale", c.proposal_scale);
  read_opt(j, "adapt_start", c.adapt_start);
  read_opt(j, "adapt_interval", c.adapt_interval);
  read_opt(j, "adapt_stop", c.adapt_stop);
  read_opt(j, "mixture_weight_fixed", c.mixture_weight_fixed);
  read_opt(j, "prior_only", c.prior_only);
  read_opt(j, "ess_threshold", c.ess_threshold);
  read_opt(j, "seed", c.seed);
  read_opt(j, "threads", c.threads);
  read_opt(j, "thin", c.thin);
  read_opt(j, "burn_in", c.burn_in);
  if (j.contains("tempering_schedule")) {
    c.tempering_schedule.clear();
    const auto& s = j.at("tempering_schedule");
    if (!s.is_array()) throw ConfigError("tempering_schedule must be an array");
    for (const auto& p : s) {
      TemperingPoint tp;
      try {
        if (p.is_array() && p.size() == 2) {
          tp.iter = p[0].get<int>();
          tp.beta = p[1].get<double>();
        } else {
          tp.iter = p.at("iter").get<int>();
          tp.beta = p.at("beta").get<double>();
        }
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("tempering_schedule entry: ") + e.what());
      }
      c.tempering_schedule.push_back(tp);
    }
  }
  if (!j.contains("init")) throw ConfigError("config key \"init\" is required");
  try {
    c.init = j.at("init").get<MaterialParams>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key \"init\": ") + e.what());
  }
  const auto names = c.init.parameter_names();
  const Eigen::VectorXd ex = ParamSpace::excess(c.init);
  c.priors.assign(names.size(), ParameterPrior{});
  for (std::size_t i = 0; i < names.size(); ++i) {
    // Default: centred on the initial value, one e-fold of spread.
    c.priors[i].median = ex[static_cast<Eigen::Index>(i)];
    c.priors[i].log_sd = 1.0;
  }
  if (j.contains("parameters")) {
    const auto& ps = j.at("parameters");
    if (!ps.is_object()) throw ConfigError("parameters must be an object keyed by parameter name");
    for (const auto& [name, spec] : ps.items()) {
      std::size_t idx = names.size();
      for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) idx = i;
      if (idx == names.size()) throw ConfigError("unknown parameter \"" + name + "\"");
      auto& prior = c.priors[idx];
      try {
        prior.median = spec.value("prior_median", prior.median);
        prior.log_sd = spec.value("prior_log_sd", prior.log_sd);
        prior.fixed = spec.value("fixed", prior.fixed);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("parameter \"" + name + "\": " + e.what());
      }
    }
  }
  if (j.contains("model")) {
    try {
      c.model = j.at("model").get<DeviationModel>();
      // 0 means "take n_zones from the dataset".
      if (!j.at("model").contains("n_zones")) c.model->spatial.n_zones = 0;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config key \"model\": ") + e.what());
    }
  }
  c.validate();
}

double tempering_beta(int iter, const std::vector<TemperingPoint>& schedule) {
  if (schedule.empty()) return 1.0;
  if (iter <= schedule.front().iter) return schedule.front().beta;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    const auto& a = schedule[i - 1];
    const auto& b = schedule[i];
    if (iter <= b.iter) {
      const double t = static_cast<double>(iter - a.iter) / static_cast<double>(b.iter - a.iter);
      return a.beta + t * (b.beta - a.beta);
    }
  }
  return schedule.back().beta;
}

double temper(double log_lik, int iter, const std::vector<TemperingPoint>& schedule) {
  const double beta = tempering_beta(iter, schedule);
  return beta == 0.0 ? 0.0 : beta * log_lik;
}

ParamSpace::ParamSpace(const PmmhConfig& config)
    : base_(config.init), priors_(config.priors), free_(config.free_indices()) {}

Eigen::VectorXd ParamSpace::excess(const MaterialParams& psi) {
  Eigen::VectorXd e(static_cast<Eigen::Index>(psi.n_params()));
  Eigen::Index i = 0;
  for (const auto& t : psi.debye) {
    e[i++] = t.eps_inf - 1.0;
    e[i++] = t.eps_s - t.eps_inf;
    e[i++] = t.f_d;
  }
  for (const auto& t : psi.lorentz) {
    e[i++] = t.mu_s - 1.0;
    e[i++] = t.f_r;
    e[i++] = t.gamma;
  }
  return e;
}

void ParamSpace::assign_excess(MaterialParams& psi, const Eigen::VectorXd& e) {
  if (e.size() != static_cast<Eigen::Index>(psi.n_params()))
    throw ContractViolation("assign_excess: wrong parameter count");
  Eigen::Index i = 0;
  for (auto& t : psi.debye) {
    t.eps_inf = 1.0 + e[i++];
    t.eps_s = t.eps_inf + e[i++];
    t.f_d = e[i++];
  }
  for (auto& t : psi.lorentz) {
    t.mu_s = 1.0 + e[i++];
    t.f_r = e[i++];
    t.gamma = e[i++];
  }
}

Eigen::VectorXd ParamSpace::to_theta(const MaterialParams& psi) const {
  const Eigen::VectorXd e = excess(psi);
  Eigen::VectorXd theta(dim());
  for (int a = 0; a < dim(); ++a) theta[a] = std::log(e[free_[static_cast<std::size_t>(a)]]);
  return theta;
}

MaterialParams ParamSpace::from_theta(const Eigen::VectorXd& theta) const {
  if (theta.size() != dim()) throw ContractViolation("from_theta: wrong dimension");
  Eigen::VectorXd e = excess(base_);
  for (int a = 0; a < dim(); ++a) e[free_[static_cast<std::size_t>(a)]] = std::exp(theta[a]);
  MaterialParams psi = base_;
  assign_excess(psi, e);
  return psi;
}

double ParamSpace::log_prior(const Eigen::VectorXd& theta) const {
  static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (int a = 0; a < dim(); ++a) {
    const auto& p = priors_[static_cast<std::size_t>(free_[static_cast<std::size_t>(a)])];
    const double z = (theta[a] - std::log(p.median)) / p.log_sd;
    lp += -0.5 * z * z - std::log(p.log_sd) - half_log_2pi;
  }
  return lp;
}

AdaptState::AdaptState(int dim)
    : dim_(dim), mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

void AdaptState::observe(const Eigen::VectorXd& theta) {
  ++count_;
  const Eigen::VectorXd delta = theta - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (theta - mean_).transpose();
}

Eigen::MatrixXd AdaptState::covariance() const {
  if (count_ < 2) return Eigen::MatrixXd::Zero(dim_, dim_);
  return m2_ / static_cast<double>(count_ - 1);
}

bool AdaptState::refresh() {
  active_ = false;
  if (dim_ == 0 || count_ <= dim_) return false;
  Eigen::MatrixXd cov = covariance();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(cov * (2.38 * 2.38 / dim_));
  if (llt.info() != Eigen::Success) return false;
  const Eigen::MatrixXd L = llt.matrixL();
  if (!(L.diagonal().array() > 0.0).all() || !L.allFinite()) return false;
  factor_ = L;
  active_ = true;
  return true;
}

Proposal propose(const Eigen::VectorXd& theta, const AdaptState& adapt, const PmmhConfig& config, Rng& rng) {
  Proposal out;
  const double u = rng.uniform();
  Eigen::VectorXd xi(theta.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
  if (adapt.active() && u >= config.mixture_weight_fixed) {
    out.theta = theta + adapt.factor() * xi;
    out.adaptive = true;
  } else {
    out.theta = theta + config.proposal_scale * xi;
  }
  return out;
}

DeviationModel inference_prior(const PmmhConfig& config, const Dataset& data) {
  DeviationModel m;
  if (config.model) {
    m = *config.model;
    if (m.spatial.n_zones != 0 && m.spatial.n_zones != data.n_zones)
      throw ContractViolation("config model has n_zones = " + std::to_string(m.spatial.n_zones) +
                              " but the dataset has " + std::to_string(data.n_zones));
  } else if (data.deviation_model) {
    m = *data.deviation_model;
  } else {
    throw ConfigError("no deviation model: set \"model\" in the config or use a dataset that records one");
  }
  m.spatial.n_zones = data.n_zones;
  m.validate();
  return m;
}

PmmhResult pmmh_run(const LinearGaussianModel& model, const PmmhConfig& config, const PmmhObserver& observer) {
  config.validate();
  const ParamSpace space(config);
  const int d = space.dim();

  PmmhResult result;
  result.backend = config.backend;
  result.parameter_names = config.init.parameter_names();

  SmcOptions smc;
  smc.n_particles = config.n_particles;
  smc.ess_threshold = config.ess_threshold;
  smc.threads = config.threads;
  // Kalman paths are drawn lazily from (rho path, path seed) when output.
  smc.sample_path = config.backend == Backend::enkf;
  EnkfOptions enkf;
  enkf.ensemble_size = config.ensemble_size;

  auto run_smc = [&](const MaterialParams& psi, int iter) {
    const std::uint64_t s = derive_seed(config.seed, {stream::smc, static_cast<std::uint64_t>(iter)});
    ++result.counters.smc_calls;
    SmcResult r = config.backend == Backend::kf ? smc_run(model, psi, smc, s)
                                                 : smc_run_enkf(model, psi, smc, enkf, s);
    for (bool f : r.resample_flags) result.counters.resample_events += f ? 1 : 0;
    result.counters.regularized_solves += static_cast<std::uint64_t>(r.regularized_solves);
    if (observer.on_smc) observer.on_smc(iter, r);
    return r;
  };

  Eigen::VectorXd theta = space.to_theta(config.init);
  MaterialParams psi = space.from_theta(theta);
  SmcResult current = run_smc(psi, 0);
  if (!std::isfinite(current.log_lik_hat))
    throw NumericalError("initial likelihood estimate is not finite");
  double log_prior = space.log_prior(theta);

  AdaptState adapt(d);
  adapt.observe(theta);

  auto emit_path = [&](int iter) {
    PathRecord rec;
    rec.iter = iter;
    rec.rho = current.sampled_rho_path;
    if (config.backend == Backend::kf) {
      Rng rng(current.path_seed);
      rec.delta_x = sample_deviation_path(model, psi, current.sampled_rho_path, rng);
    } else {
      rec.delta_x = current.sampled_delta_x;
    }
    if (observer.on_path)
      observer.on_path(rec);
    else
      result.paths.push_back(std::move(rec));
  };

  result.chain.reserve(static_cast<std::size_t>(config.n_iters));
  for (int t = 1; t <= config.n_iters; ++t) {
    const double beta = config.prior_only ? 0.0 : tempering_beta(t, config.tempering_schedule);
    if (t >= config.adapt_start && (t - config.adapt_start) % config.adapt_interval == 0 &&
        (config.adapt_stop < 0 || t <= config.adapt_stop))
      adapt.refresh();

    auto prop_rng = Rng::substream(config.seed, {stream::proposal, static_cast<std::uint64_t>(t)});
    const Proposal prop = propose(theta, adapt, config, prop_rng);
    const MaterialParams psi_star = space.from_theta(prop.theta);
    const double log_prior_star = space.log_prior(prop.theta);

    bool accepted = false;
    std::optional<SmcResult> cand;
    bool valid = true;
    try {
      psi_star.validate();
    } catch (const ContractViolation&) {
      valid = false;  // e.g. exp underflow to a zero excess
    }
    if (valid) {
      try {
        cand = run_smc(psi_star, t);
      } catch (const NumericalError&) {
        ++result.counters.degenerate_rejections;
      }
    } else {
      ++result.counters.smc_calls;  // the evaluation counts even though it cannot run
      ++result.counters.degenerate_rejections;
    }
    if (cand && std::isfinite(cand->log_lik_hat)) {
      const double log_lik_term = beta == 0.0 ? 0.0 : beta * (cand->log_lik_hat - current.log_lik_hat);
      const double log_alpha = log_lik_term + log_prior_star - log_prior + prop.log_q_ratio;
      auto acc_rng = Rng::substream(config.seed, {stream::accept, static_cast<std::uint64_t>(t)});
      accepted = std::log(acc_rng.uniform()) < log_alpha;
    } else if (cand) {
      ++result.counters.degenerate_rejections;
    }
    if (accepted) {
      theta = prop.theta;
      psi = psi_star;
      log_prior = log_prior_star;
      current = std::move(*cand);
      ++result.counters.accepted;
    }
    adapt.observe(theta);

    ChainRecord rec;
    rec.iter = t;
    rec.psi = psi;
    rec.log_lik_hat = current.log_lik_hat;
    rec.log_prior = log_prior;
    rec.beta = beta;
    rec.accepted = accepted;
    rec.acceptance_rate = static_cast<double>(result.counters.accepted) / t;
    if (observer.on_record) observer.on_record(rec);
    result.chain.push_back(std::move(rec));

    if (config.thin > 0 && t % config.thin == 0) emit_path(t);
  }
  return result;
}

}  // namespace rbpmmh
