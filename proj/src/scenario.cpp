#include "rbpmmh/scenario.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rbpmmh/chain_io.hpp"
#include "rbpmmh/dataset_io.hpp"
#include "rbpmmh/error.hpp"

namespace rbpmmh {

std::string component_name(Component c) {
  switch (c) {
    case Component::eps_real: return "eps_real";
    case Component::eps_imag: return "eps_imag";
    case Component::mu_real: return "mu_real";
    case Component::mu_imag: return "mu_imag";
  }
  return "?";
}

Component parse_component(const std::string& s) {
  for (Component c : {Component::eps_real, Component::eps_imag, Component::mu_real, Component::mu_imag})
    if (component_name(c) == s) return c;
  throw ConfigError("unknown component \"" + s + "\" (expected eps_real, eps_imag, mu_real or mu_imag)");
}

void ScenarioSpec::validate() const {
  if (n_zones < 1 || n_freqs < 1 || n_angles < 1) throw ConfigError("n_zones, n_freqs and n_angles must be >= 1");
  if (!(f_min > 0.0) || (!(f_max > f_min) && !(n_freqs == 1 && f_max == f_min)))
    throw ConfigError("freq_band must be positive and increasing");
  if (!(sigma >= 0.0) || !(length_scale > 0.0)) throw ConfigError("sigma must be >= 0 and length_scale > 0");
  if (!(noise_level >= 0.0) || !(deviation_scale >= 0.0))
    throw ConfigError("noise_level and deviation_scale must be >= 0");
  if (!(rho_init > 0.0 && rho_init < 1.0) || !(sigma_rho >= 0.0))
    throw ConfigError("rho_init must lie in (0, 1) and sigma_rho must be >= 0");
  try {
    true_psi.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("true_psi: ") + e.what());
  }
  for (const auto& p : planted)
    for (int z : p.zones)
      if (z < 0 || z >= n_zones) throw ConfigError("planted zone " + std::to_string(z) + " out of range");
}

void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  auto planted = nlohmann::json::array();
  for (const auto& p : s.planted)
    planted.push_back({{"component", component_name(p.component)},
                       {"zones", p.zones},
                       {"amplitude_sigmas", p.amplitude_sigmas}});
  j = nlohmann::json{{"n_zones", s.n_zones},           {"n_freqs", s.n_freqs},
                     {"freq_band", {s.f_min, s.f_max}}, {"n_angles", s.n_angles},
                     {"true_psi", s.true_psi},          {"sigma", s.sigma},
                     {"length_scale", s.length_scale},  {"sigma_rho", s.sigma_rho},
                     {"rho_init", s.rho_init},          {"noise_level", s.noise_level},
                     {"deviation_scale", s.deviation_scale}, {"planted", planted},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  if (!j.is_object()) throw ConfigError("scenario spec must be a JSON object");
  static const char* known[] = {"n_zones",   "n_freqs",    "freq_band",   "n_angles",        "true_psi",
                                "sigma",     "length_scale", "sigma_rho", "rho_init",        "noise_level",
                                "deviation_scale", "planted", "seed"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown scenario key \"" + key + "\"");
  }
  try {
    s.n_zones = j.value("n_zones", s.n_zones);
    s.n_freqs = j.value("n_freqs", s.n_freqs);
    if (j.contains("freq_band")) {
      const auto& b = j.at("freq_band");
      if (!b.is_array() || b.size() != 2) throw ConfigError("freq_band must be [f_min, f_max]");
      s.f_min = b[0].get<double>();
      s.f_max = b[1].get<double>();
    }
    s.n_angles = j.value("n_angles", s.n_angles);
    if (!j.contains("true_psi")) throw ConfigError("scenario key \"true_psi\" is required");
    s.true_psi = j.at("true_psi").get<MaterialParams>();
    s.sigma = j.value("sigma", s.sigma);
    s.length_scale = j.value("length_scale", s.length_scale);
    s.sigma_rho = j.value("sigma_rho", s.sigma_rho);
    s.rho_init = j.value("rho_init", s.rho_init);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.deviation_scale = j.value("deviation_scale", s.deviation_scale);
    s.seed = j.value("seed", s.seed);
    s.planted.clear();
    if (j.contains("planted")) {
      for (const auto& p : j.at("planted")) {
        PlantedDeviation pd;
        pd.component = parse_component(p.at("component").get<std::string>());
        pd.zones = p.at("zones").get<std::vector<int>>();
        pd.amplitude_sigmas = p.value("amplitude_sigmas", pd.amplitude_sigmas);
        s.planted.push_back(pd);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario spec: ") + e.what());
  }
  s.validate();
}

Scenario generate(const ScenarioSpec& spec) {
  spec.validate();
  const int K = spec.n_freqs;
  const int n = spec.state_dim();
  const int d = spec.obs_dim();
  Scenario sc;
  Dataset& data = sc.dataset;
  data.n_zones = spec.n_zones;
  data.seed = spec.seed;
  for (int k = 0; k < K; ++k) {
    const double t = K == 1 ? 0.0 : static_cast<double>(k) / (K - 1);
    data.frequencies.push_back(spec.f_min * std::pow(spec.f_max / spec.f_min, t));
  }

  auto meta_rng = Rng::substream(spec.seed, {stream::metamodel});
  const double a_sd = 1.0 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < K; ++k) {
    MetamodelEntry e;
    e.A.resize(d, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < d; ++i) e.A(i, j) = a_sd * meta_rng.normal();
    e.y0.resize(d);
    for (auto& v : e.y0) v = meta_rng.normal();
    e.R = Eigen::MatrixXd::Identity(d, d) * (spec.noise_level * spec.noise_level);
    data.metamodel.entries.push_back(std::move(e));
  }

  DeviationModel dev;
  dev.spatial = {spec.sigma > 0.0 ? spec.sigma : 1.0, spec.length_scale, spec.n_zones};
  dev.rho_walk = {spec.sigma_rho, spec.rho_init};
  if (spec.sigma > 0.0) data.deviation_model = dev;

  auto dev_rng = Rng::substream(spec.seed, {stream::deviation});
  GroundTruth& truth = sc.truth;
  truth.psi = spec.true_psi;
  truth.delta_x = Eigen::MatrixXd::Zero(K, n);
  truth.planted_mask = Eigen::MatrixXi::Zero(K, n);
  DeviationState state;
  for (int k = 0; k < K; ++k) {
    if (spec.sigma > 0.0) {
      state = k == 0 ? initial_state(dev, dev_rng) : transition(dev, state, dev_rng);
    } else {
      state.rho = dev.rho_walk.step(k == 0 ? dev.rho_walk.rho_init : state.rho, dev_rng.normal());
      state.delta_x = Eigen::VectorXd::Zero(n);
    }
    truth.rho.push_back(state.rho);
    truth.delta_x.row(k) = spec.deviation_scale * state.delta_x.transpose();
  }
  for (const auto& p : spec.planted)
    for (int z : p.zones) {
      const int col = static_cast<int>(p.component) * spec.n_zones + z;
      truth.delta_x.col(col).array() += p.amplitude_sigmas * spec.sigma;
      truth.planted_mask.col(col).setOnes();
    }

  auto noise_rng = Rng::substream(spec.seed, {stream::noise});
  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Eigen::VectorXd x = material_eval(spec.true_psi, data.frequencies[ku], spec.n_zones) +
                              truth.delta_x.row(k).transpose();
    data.observations.push_back(observe(data.metamodel.entries[ku], x, spec.noise_level > 0.0 ? &noise_rng : nullptr));
  }
  return sc;
}

void write_scenario(const std::filesystem::path& dir, const ScenarioSpec& spec, const Scenario& sc) {
  write_dataset(dir, sc.dataset, nlohmann::json{{"generator", {{"spec", spec}}}});
  nlohmann::json gt{{"psi", sc.truth.psi}, {"rho", sc.truth.rho}, {"spec", spec}};
  write_json_file(dir / "ground_truth.json", gt);
  PathRecord rec;
  rec.iter = 0;
  rec.rho = sc.truth.rho;
  rec.delta_x = sc.truth.delta_x;
  PathWriter w(dir / "ground_truth_dx.csv", static_cast<int>(sc.truth.delta_x.cols()));
  w.write(rec);
}

GroundTruth read_ground_truth(const std::filesystem::path& dir) {
  const auto j = read_json_file(dir / "ground_truth.json");
  GroundTruth t;
  t.psi = j.at("psi").get<MaterialParams>();
  t.rho = j.at("rho").get<std::vector<double>>();
  const auto paths = read_paths_csv(dir / "ground_truth_dx.csv");
  if (paths.size() != 1) throw std::runtime_error("ground_truth_dx.csv must hold exactly one path");
  t.delta_x = paths.front().delta_x;
  const ScenarioSpec spec = j.at("spec").get<ScenarioSpec>();
  t.planted_mask = Eigen::MatrixXi::Zero(t.delta_x.rows(), t.delta_x.cols());
  for (const auto& p : spec.planted)
    for (int z : p.zones) t.planted_mask.col(static_cast<int>(p.component) * spec.n_zones + z).setOnes();
  return t;
}

std::vector<DeviationRow> deviation_report(const GroundTruth& truth, const std::vector<PathRecord>& paths,
                                           int burn_in) {
  const Eigen::Index K = truth.delta_x.rows();
  const Eigen::Index n = truth.delta_x.cols();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, n);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(K, n);
  int count = 0;
  for (const auto& p : paths) {
    if (p.iter <= burn_in) continue;
    if (p.delta_x.rows() != K || p.delta_x.cols() != n)
      throw ContractViolation("deviation_report: path and ground truth dimensions differ");
    sum += p.delta_x;
    sq += p.delta_x.cwiseProduct(p.delta_x);
    ++count;
  }
  if (count == 0) throw ContractViolation("deviation_report: no sampled paths after burn-in");
  const Eigen::MatrixXd mean = sum / count;
  Eigen::MatrixXd var = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
  if (count > 1) var *= static_cast<double>(count) / (count - 1);
  const Eigen::Index N = n / 4;
  std::vector<DeviationRow> rows;
  rows.reserve(static_cast<std::size_t>(K * n));
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < n; ++j) {
      DeviationRow r;
      r.k = static_cast<int>(k + 1);
      r.component = static_cast<Component>(j / N);
      r.zone = static_cast<int>(j % N);
      r.truth = truth.delta_x(k, j);
      r.post_mean = mean(k, j);
      r.post_sd = std::sqrt(var(k, j));
      r.planted = truth.planted_mask.size() > 0 && truth.planted_mask(k, j) != 0;
      r.detectable = std::abs(r.truth) > 2.0 * r.post_sd;
      r.detected = std::abs(r.post_mean) > 2.0 * r.post_sd;
      rows.push_back(r);
    }
  return rows;
}

void write_deviation_report(const std::filesystem::path& file, const std::vector<DeviationRow>& rows) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "k,component,zone,truth,post_mean,post_sd,lower,upper,planted,detectable,detected\n";
  for (const auto& r : rows)
    out << r.k << ',' << component_name(r.component) << ',' << r.zone << ',' << format_double(r.truth) << ','
        << format_double(r.post_mean) << ',' << format_double(r.post_sd) << ','
        << format_double(r.post_mean - 2.0 * r.post_sd) << ',' << format_double(r.post_mean + 2.0 * r.post_sd)
        << ',' << r.planted << ',' << r.detectable << ',' << r.detected << '\n';
}

}  // namespace rbpmmh
