#include "rbpmmh/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rbpmmh/chain_io.hpp"
#include "rbpmmh/dataset_io.hpp"
#include "rbpmmh/diagnostics.hpp"
#include "rbpmmh/kalman.hpp"
#include "rbpmmh/pmmh.hpp"
#include "rbpmmh/scenario.hpp"

#ifndef RBPMMH_VERSION
#define RBPMMH_VERSION "unknown"
#endif
#ifndef RBPMMH_GIT_REVISION
#define RBPMMH_GIT_REVISION "unknown"
#endif

namespace fs = std::filesystem;

namespace rbpmmh::cli {

namespace {

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw MissingArtifact("cannot create " + dir.string() + ": " + ec.message());
}

void write_beliefs(const fs::path& file, const LinearGaussianModel& model, const MaterialParams& psi,
                   const std::vector<double>& rho) {
  const FilterTrace trace = kf_filter(model, psi, rho);
  const Eigen::MatrixXd L = model.prior().spatial.sqrt_dense();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingArtifact("cannot write " + file.string());
  out << "k,index,mean,sd\n";
  for (std::size_t k = 0; k < trace.filtered.size(); ++k) {
    const GaussianBelief b = to_belief(trace.filtered[k]);
    const Eigen::VectorXd mean = L * b.mean;
    const Eigen::VectorXd var = (L * b.cov * L.transpose()).diagonal();
    for (Eigen::Index i = 0; i < mean.size(); ++i)
      out << (k + 1) << ',' << i << ',' << format_double(mean[i]) << ',' << format_double(std::sqrt(std::max(var[i], 0.0)))
          << '\n';
  }
}

}  // namespace

void cmd_generate(const fs::path& spec_file, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  ScenarioSpec spec = read_json_file(spec_file).get<ScenarioSpec>();
  if (seed) spec.seed = *seed;
  const Scenario sc = generate(spec);
  make_dir(out_dir);
  write_scenario(out_dir, spec, sc);
}

void cmd_infer(const fs::path& dataset_dir, const fs::path& config_file, const fs::path& out_dir,
               const InferOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  PmmhConfig config = read_json_file(config_file).get<PmmhConfig>();
  if (opts.seed) config.seed = *opts.seed;
  if (opts.threads) config.threads = *opts.threads;
  if (opts.thin) config.thin = *opts.thin;
  if (opts.iters) config.n_iters = *opts.iters;
  config.validate();

  const Dataset data = read_dataset(dataset_dir);
  const DeviationModel prior = inference_prior(config, data);
  const LinearGaussianModel model(data, prior);
  make_dir(out_dir);

  ChainWriter chain(out_dir / "chain.csv", config.init.parameter_names());
  std::optional<PathWriter> paths;
  if (config.thin > 0) paths.emplace(out_dir / "paths.csv", model.state_dim());
  std::ofstream diag(out_dir / "diagnostics.csv", std::ios::binary | std::ios::trunc);
  if (!diag) throw MissingArtifact("cannot write diagnostics.csv");
  diag << "iter,accepted,acceptance_rate,log_lik_hat,proposal_log_lik_hat,min_ess,resample_events,mean_spread\n";
  std::optional<SmcDiagnosticsWriter> trace;
  if (opts.diagnostics) trace.emplace(out_dir / "smc_trace.csv");

  std::optional<SmcResult> last_smc;
  PmmhObserver obs;
  obs.on_smc = [&](int iter, const SmcResult& r) {
    if (trace) trace->write(iter, r);
    last_smc = r;
    last_smc->sampled_delta_x.resize(0, 0);
  };
  obs.on_record = [&](const ChainRecord& rec) {
    chain.write(rec);
    double min_ess = 0.0;
    int resamples = 0;
    double spread = 0.0;
    double prop_ll = std::nan("");
    if (last_smc) {
      prop_ll = last_smc->log_lik_hat;
      min_ess = last_smc->ess_trace.empty() ? 0.0 : *std::min_element(last_smc->ess_trace.begin(), last_smc->ess_trace.end());
      for (bool f : last_smc->resample_flags) resamples += f ? 1 : 0;
      for (double s : last_smc->spread_trace) spread += s;
      if (!last_smc->spread_trace.empty()) spread /= static_cast<double>(last_smc->spread_trace.size());
    }
    diag << rec.iter << ',' << (rec.accepted ? 1 : 0) << ',' << format_double(rec.acceptance_rate) << ','
         << format_double(rec.log_lik_hat) << ',' << format_double(prop_ll) << ',' << format_double(min_ess) << ','
         << resamples << ',' << format_double(spread) << '\n';
    last_smc.reset();
  };
  if (paths) obs.on_path = [&](const PathRecord& p) { paths->write(p); };

  const PmmhResult result = pmmh_run(model, config, obs);
  chain.flush();
  diag.flush();

  if (opts.dump_beliefs && !result.chain.empty()) {
    // Kalman moments at the final psi along a rho path drawn by a fresh SMC run.
    SmcOptions so;
    so.n_particles = config.n_particles;
    so.ess_threshold = config.ess_threshold;
    so.sample_path = false;
    const MaterialParams& psi = result.chain.back().psi;
    const SmcResult r = smc_run(model, psi, so, derive_seed(config.seed, {stream::path}));
    write_beliefs(out_dir / "beliefs.csv", model, psi, r.sampled_rho_path);
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json cfg = config;
  nlohmann::json manifest{
      {"format", "rbpmmh-run"},
      {"version", RBPMMH_VERSION},
      {"git_revision", RBPMMH_GIT_REVISION},
      {"config_hash", fnv1a(cfg.dump())},
      {"config", cfg},
      {"seed", config.seed},
      {"backend", backend_name(result.backend)},
      {"exact_likelihood_estimator", result.backend == Backend::kf},
      {"threads", config.threads},
      {"dataset", fs::absolute(dataset_dir).lexically_normal().string()},
      {"dataset_manifest_checksum", file_checksum(dataset_dir / "manifest.json")},
      {"deviation_model", prior},
      {"n_records", result.chain.size()},
      {"counters",
       {{"smc_calls", result.counters.smc_calls},
        {"accepted", result.counters.accepted},
        {"resample_events", result.counters.resample_events},
        {"regularization_warnings", result.counters.regularized_solves},
        {"degenerate_rejections", result.counters.degenerate_rejections}}},
      {"outputs", {"chain.csv", "diagnostics.csv"}},
      {"wall_time_seconds", wall},
      {"timestamp", utc_timestamp()}};
  if (paths) manifest["outputs"].push_back("paths.csv");
  if (trace) manifest["outputs"].push_back("smc_trace.csv");
  if (opts.dump_beliefs) manifest["outputs"].push_back("beliefs.csv");
  write_json_file(out_dir / "run_manifest.json", manifest);
}

void cmd_diagnose(const fs::path& out_dir, const DiagnoseOptions& opts) {
  const fs::path chain_file = out_dir / "chain.csv";
  const fs::path manifest_file = out_dir / "run_manifest.json";
  if (!fs::exists(chain_file)) throw MissingArtifact("missing " + chain_file.string());
  if (!fs::exists(manifest_file)) throw MissingArtifact("missing " + manifest_file.string());
  const auto manifest = read_json_file(manifest_file);
  const ChainTable chain = read_chain_csv(chain_file);
  const int burn_in = opts.burn_in ? *opts.burn_in : manifest.at("config").value("burn_in", 0);
  const ChainSummary s = summarize_chain(chain, burn_in);

  nlohmann::json summary{{"n_records", s.n_records},
                         {"burn_in", s.burn_in},
                         {"acceptance_rate", s.acceptance_rate},
                         {"acceptance_rate_post_burn_in", s.acceptance_rate_post_burn_in},
                         {"backend", manifest.value("backend", "")},
                         {"quantile_probs", summary_probs()}};
  auto params = nlohmann::json::array();
  for (const auto& p : s.parameters)
    params.push_back({{"name", p.name}, {"mean", p.mean}, {"sd", p.sd}, {"ess", p.ess}, {"quantiles", p.quantiles}});
  summary["parameters"] = params;

  {
    std::ofstream q(out_dir / "quantiles.csv", std::ios::binary | std::ios::trunc);
    q << "parameter,mean,sd,ess";
    for (double p : summary_probs()) q << ",q" << format_double(p);
    q << '\n';
    for (const auto& p : s.parameters) {
      q << p.name << ',' << format_double(p.mean) << ',' << format_double(p.sd) << ',' << format_double(p.ess);
      for (double v : p.quantiles) q << ',' << format_double(v);
      q << '\n';
    }
  }
  {
    std::ofstream t(out_dir / "traces.csv", std::ios::binary | std::ios::trunc);
    t << "iter";
    for (const auto& n : chain.parameter_names) t << ',' << n;
    t << ",log_lik_hat,acceptance_rate\n";
    for (int r = 0; r < chain.size(); ++r) {
      const auto ru = static_cast<std::size_t>(r);
      t << chain.iter[ru];
      for (Eigen::Index p = 0; p < chain.params.cols(); ++p) t << ',' << format_double(chain.params(r, p));
      t << ',' << format_double(chain.log_lik_hat[ru]) << ',' << format_double(chain.acceptance_rate[ru]) << '\n';
    }
  }
  {
    std::ofstream a(out_dir / "autocorrelation.csv", std::ios::binary | std::ios::trunc);
    a << "lag";
    for (const auto& n : chain.parameter_names) a << ',' << n;
    a << '\n';
    std::vector<std::vector<double>> acf;
    for (Eigen::Index p = 0; p < chain.params.cols(); ++p) {
      std::vector<double> x;
      for (int r = 0; r < chain.size(); ++r)
        if (chain.iter[static_cast<std::size_t>(r)] > burn_in) x.push_back(chain.params(r, p));
      acf.push_back(autocorrelation(x, opts.max_lag));
    }
    for (int lag = 0; lag <= opts.max_lag; ++lag) {
      a << lag;
      for (const auto& c : acf) a << ',' << format_double(c[static_cast<std::size_t>(lag)]);
      a << '\n';
    }
  }

  fs::path dataset_dir;
  if (opts.dataset)
    dataset_dir = *opts.dataset;
  else if (manifest.contains("dataset"))
    dataset_dir = manifest.at("dataset").get<std::string>();
  const fs::path paths_file = out_dir / "paths.csv";
  if (!dataset_dir.empty() && fs::exists(dataset_dir / "ground_truth.json") && fs::exists(paths_file)) {
    const GroundTruth truth = read_ground_truth(dataset_dir);
    const auto paths = read_paths_csv(paths_file);
    const bool any = std::any_of(paths.begin(), paths.end(), [&](const PathRecord& p) { return p.iter > burn_in; });
    if (!any) {
      summary["deviations"] = nullptr;
      write_json_file(out_dir / "summary.json", summary);
      return;
    }
    const auto rows = deviation_report(truth, paths, burn_in);
    write_deviation_report(out_dir / "deviations.csv", rows);
    int planted = 0, planted_hit = 0, null = 0, null_hit = 0;
    for (const auto& r : rows) {
      if (r.planted) {
        ++planted;
        planted_hit += r.detected ? 1 : 0;
      } else {
        ++null;
        null_hit += r.detected ? 1 : 0;
      }
    }
    summary["deviations"] = {{"rows", rows.size()},
                             {"planted", planted},
                             {"planted_detected", planted_hit},
                             {"unplanted", null},
                             {"unplanted_detected", null_hit}};
    nlohmann::json coverage = nlohmann::json::object();
    const auto names = truth.psi.parameter_names();
    const Eigen::VectorXd tv = truth.psi.flatten();
    for (const auto& p : s.parameters)
      for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == p.name && p.quantiles.size() == summary_probs().size())
          coverage[p.name] = {{"truth", tv[static_cast<Eigen::Index>(i)]},
                              {"in_95_interval", tv[static_cast<Eigen::Index>(i)] >= p.quantiles.front() &&
                                                     tv[static_cast<Eigen::Index>(i)] <= p.quantiles.back()}};
    summary["truth_coverage"] = coverage;
  }
  write_json_file(out_dir / "summary.json", summary);
}

int report_current_exception() {
  try {
    throw;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  } catch (const ContractViolation& e) {
    std::cerr << "dimension error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::dimension);
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return static_cast<int>(ExitCode::missing_artifact);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what();
    if (e.condition_estimate() > 0.0) std::cerr << " (condition estimate " << e.condition_estimate() << ")";
    std::cerr << '\n';
    return static_cast<int>(ExitCode::numerical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int main(int argc, char** argv) {
  CLI::App app{"Particle marginal Metropolis-Hastings with Rao-Blackwellised SMC"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(RBPMMH_VERSION) + " (" + RBPMMH_GIT_REVISION + ")");

  std::string spec_file, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Simulate a synthetic dataset from a scenario spec");
  gen->add_option("spec", spec_file, "Scenario spec JSON")->required();
  gen->add_option("out_dir", gen_out, "Output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  std::string dataset_dir, config_file, infer_out;
  InferOptions infer_opts;
  auto* inf = app.add_subcommand("infer", "Run PMMH on a dataset");
  inf->add_option("dataset", dataset_dir, "Dataset directory")->required();
  inf->add_option("config", config_file, "Inference config JSON")->required();
  inf->add_option("out_dir", infer_out, "Output directory")->required();
  inf->add_option("--seed", infer_opts.seed, "Override the config seed");
  inf->add_option("--threads", infer_opts.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  inf->add_option("--thin", infer_opts.thin, "Write a path sample every T iterations (0 disables)")
      ->check(CLI::NonNegativeNumber);
  inf->add_option("--iters", infer_opts.iters, "Override n_iters")->check(CLI::NonNegativeNumber);
  inf->add_flag("--diagnostics", infer_opts.diagnostics, "Write per-step SMC traces to smc_trace.csv");
  inf->add_flag("--dump-beliefs", infer_opts.dump_beliefs, "Write filtered Kalman moments for the final state");

  std::string diag_out;
  DiagnoseOptions diag_opts;
  std::optional<std::string> diag_dataset;
  auto* dia = app.add_subcommand("diagnose", "Summarize an inference output directory");
  dia->add_option("out_dir", diag_out, "Directory written by infer")->required();
  dia->add_option("--burn-in", diag_opts.burn_in, "Override the config burn_in")->check(CLI::NonNegativeNumber);
  dia->add_option("--dataset", diag_dataset, "Dataset directory holding ground_truth.json");
  dia->add_option("--max-lag", diag_opts.max_lag, "Largest autocorrelation lag")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (gen->parsed()) {
      cmd_generate(spec_file, gen_out, gen_seed);
    } else if (inf->parsed()) {
      cmd_infer(dataset_dir, config_file, infer_out, infer_opts);
    } else if (dia->parsed()) {
      if (diag_dataset) diag_opts.dataset = fs::path(*diag_dataset);
      cmd_diagnose(diag_out, diag_opts);
    }
  } catch (...) {
    return report_current_exception();
  }
  return 0;
}

}  // namespace rbpmmh::cli
