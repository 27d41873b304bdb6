#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rbpmmh/chain_io.hpp"
#include "rbpmmh/cli.hpp"
#include "rbpmmh/dataset_io.hpp"
#include "rbpmmh/diagnostics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "rbpmmh");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream err;
  auto* old = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = rbpmmh::cli::main(static_cast<int>(argv.size()), argv.data());
  std::cerr.rdbuf(old);
  r.err = err.str();
  return r;
}

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("rbpmmh_test_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string write(const std::string& file, const std::string& text) const {
    std::ofstream(root / file) << text;
    return (root / file).string();
  }
  std::string write(const std::string& file, const json& j) const { return write(file, j.dump(2)); }
  std::string path(const std::string& p) const { return (root / p).string(); }
};

json material() {
  return {{"debye", {{{"eps_inf", 2.5}, {"eps_s", 6.0}, {"f_d", 1.5e9}}}},
          {"lorentz", {{{"mu_s", 2.2}, {"f_r", 3e9}, {"gamma", 4e8}}}}};
}

json small_spec() {
  return {{"n_zones", 2},        {"n_freqs", 4},        {"freq_band", {1e8, 1e10}},
          {"n_angles", 3},       {"true_psi", material()}, {"sigma", 0.1},
          {"length_scale", 2.0}, {"sigma_rho", 0.05},   {"rho_init", 0.9},
          {"noise_level", 0.02}, {"seed", 3}};
}

json small_config(int iters) {
  return {{"n_iters", iters}, {"n_particles", 20}, {"proposal_scale", 0.02}, {"thin", 5}, {"burn_in", iters / 4},
          {"seed", 11},       {"init", material()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("malformed JSON reports line and column with exit code 2") {
  Workspace w("json");
  const auto spec = w.write("bad.json", std::string("{\n  \"n_zones\": 2,\n  \"n_freqs\": ,\n}\n"));
  const Run r = run({"generate", spec, w.path("ds")});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.json:3:14") != std::string::npos);
  // Unknown key, wrong type, bad range: also configuration errors.
  json j = small_spec();
  j["n_zone"] = 1;
  CHECK(run({"generate", w.write("s1.json", j), w.path("ds")}).code == 2);
  j = small_spec();
  j["sigma"] = "wide";
  CHECK(run({"generate", w.write("s2.json", j), w.path("ds")}).code == 2);
  CHECK(run({"infer", "--threads", "0", "a", "b", "c"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("missing inputs exit with code 4, dimension mismatches with 3") {
  Workspace w("missing");
  CHECK(run({"generate", w.path("nope.json"), w.path("ds")}).code == 4);
  const auto spec = w.write("spec.json", small_spec());
  REQUIRE(run({"generate", spec, w.path("ds")}).code == 0);
  const auto cfg = w.write("cfg.json", small_config(5));
  CHECK(run({"infer", w.path("no_dataset"), cfg, w.path("out")}).code == 4);
  CHECK(run({"infer", w.path("ds"), w.path("no_cfg.json"), w.path("out")}).code == 4);
  CHECK(run({"diagnose", w.path("empty_out")}).code == 4);
  fs::remove(w.root / "ds" / "y_2.csv");
  CHECK(run({"infer", w.path("ds"), cfg, w.path("out")}).code == 4);

  // Truncated observation file: wrong length.
  REQUIRE(run({"generate", spec, w.path("ds2")}).code == 0);
  w.write("ds2/y_1.csv", std::string("0.5\n"));
  CHECK(run({"infer", w.path("ds2"), cfg, w.path("out")}).code == 3);
  // Config model declares a different zone count.
  json c = small_config(5);
  c["model"] = {{"sigma", 0.1}, {"length_scale", 2.0}, {"n_zones", 7}, {"sigma_rho", 0.05}, {"rho_init", 0.9}};
  REQUIRE(run({"generate", spec, w.path("ds3")}).code == 0);
  CHECK(run({"infer", w.path("ds3"), w.write("c3.json", c), w.path("out")}).code == 3);
}

TEST_CASE("zero iterations give an empty chain and a manifest") {
  Workspace w("zero");
  REQUIRE(run({"generate", w.write("spec.json", small_spec()), w.path("ds")}).code == 0);
  const Run r = run({"infer", w.path("ds"), w.write("cfg.json", small_config(50)), w.path("out"), "--iters", "0"});
  CHECK(r.code == 0);
  const auto chain = rbpmmh::read_chain_csv(w.root / "out" / "chain.csv");
  CHECK(chain.size() == 0);
  CHECK(chain.parameter_names.size() == 6);
  const json m = rbpmmh::read_json_file(w.root / "out" / "run_manifest.json");
  CHECK(m.at("n_records") == 0);
  CHECK(m.at("counters").at("smc_calls") == 1);
  CHECK(run({"diagnose", w.path("out")}).code == 0);
}

TEST_CASE("end-to-end smoke run: generate, infer with both backends, diagnose") {
  Workspace w("smoke");
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(run({"generate", w.write("spec.json", small_spec()), w.path("ds")}).code == 0);
  const auto cfg = w.write("cfg.json", small_config(200));
  REQUIRE(run({"infer", w.path("ds"), cfg, w.path("kf"), "--diagnostics", "--dump-beliefs"}).code == 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("generate + 200-iteration infer: " << secs << " s");
  CHECK(secs < 60.0);

  json ec = small_config(40);
  ec["backend"] = "enkf";
  ec["ensemble_size"] = 30;
  REQUIRE(run({"infer", w.path("ds"), w.write("ecfg.json", ec), w.path("enkf")}).code == 0);

  const json mk = rbpmmh::read_json_file(w.root / "kf" / "run_manifest.json");
  const json me = rbpmmh::read_json_file(w.root / "enkf" / "run_manifest.json");
  CHECK(mk.at("backend") == "kf");
  CHECK(mk.at("exact_likelihood_estimator") == true);
  CHECK(me.at("backend") == "enkf");
  CHECK(me.at("exact_likelihood_estimator") == false);
  CHECK(mk.at("counters").at("smc_calls") == 201);
  CHECK(mk.at("n_records") == 200);
  CHECK(mk.at("seed") == 11);
  for (const char* key : {"version", "git_revision", "config_hash", "dataset_manifest_checksum", "timestamp"})
    CHECK(mk.contains(key));
  for (const char* f : {"chain.csv", "paths.csv", "diagnostics.csv", "smc_trace.csv", "beliefs.csv"})
    CHECK(fs::exists(w.root / "kf" / f));

  const auto paths = rbpmmh::read_paths_csv(w.root / "kf" / "paths.csv");
  CHECK(paths.size() == 40);

  REQUIRE(run({"diagnose", w.path("kf")}).code == 0);
  const json s = rbpmmh::read_json_file(w.root / "kf" / "summary.json");
  CHECK(s.at("n_records") == 200);
  CHECK(s.at("burn_in") == 50);
  CHECK(s.at("parameters").size() == 6);
  CHECK(s.at("deviations").at("rows") == 4 * 8);
  CHECK(s.contains("truth_coverage"));
  for (const char* f : {"summary.json", "quantiles.csv", "traces.csv", "autocorrelation.csv", "deviations.csv"})
    CHECK(fs::exists(w.root / "kf" / f));
  CHECK(run({"diagnose", w.path("enkf"), "--burn-in", "10", "--max-lag", "5"}).code == 0);
}

TEST_CASE("reruns reproduce datasets and chains byte for byte") {
  Workspace w("rerun");
  const auto spec = w.write("spec.json", small_spec());
  REQUIRE(run({"generate", spec, w.path("a")}).code == 0);
  REQUIRE(run({"generate", spec, w.path("b")}).code == 0);
  CHECK(rbpmmh::read_json_file(w.root / "a" / "manifest.json").at("checksums") ==
        rbpmmh::read_json_file(w.root / "b" / "manifest.json").at("checksums"));
  REQUIRE(run({"generate", spec, w.path("c"), "--seed", "99"}).code == 0);
  CHECK(rbpmmh::read_json_file(w.root / "a" / "manifest.json").at("checksums") !=
        rbpmmh::read_json_file(w.root / "c" / "manifest.json").at("checksums"));

  const auto cfg = w.write("cfg.json", small_config(60));
  REQUIRE(run({"infer", w.path("a"), cfg, w.path("r1")}).code == 0);
  REQUIRE(run({"infer", w.path("a"), cfg, w.path("r2"), "--threads", "3"}).code == 0);
  CHECK(slurp(w.root / "r1" / "chain.csv") == slurp(w.root / "r2" / "chain.csv"));
  CHECK(slurp(w.root / "r1" / "paths.csv") == slurp(w.root / "r2" / "paths.csv"));
}

TEST_CASE("full-size generate writes twenty frequencies") {
  Workspace w("fullsize");
  json spec = {{"n_zones", 50}, {"n_freqs", 20}, {"freq_band", {0.1e9, 10e9}}, {"n_angles", 100},
               {"true_psi", material()}, {"seed", 5}};
  REQUIRE(run({"generate", w.write("spec.json", spec), w.path("ds")}).code == 0);
  int y_files = 0;
  for (const auto& e : fs::directory_iterator(w.root / "ds"))
    y_files += e.path().filename().string().rfind("y_", 0) == 0 ? 1 : 0;
  CHECK(y_files == 20);
  const json m = rbpmmh::read_json_file(w.root / "ds" / "manifest.json");
  CHECK(m.at("state_dim") == 200);
  CHECK(m.at("obs_dim") == 400);
}

TEST_CASE("prior-only chain quantiles match the prior") {
  Workspace w("prior");
  REQUIRE(run({"generate", w.write("spec.json", small_spec()), w.path("ds")}).code == 0);
  json c = small_config(20000);
  c["prior_only"] = true;
  c["proposal_scale"] = 0.8;
  c["n_particles"] = 2;
  c["thin"] = 0;
  c["burn_in"] = 0;
  c["adapt_start"] = 1000000;
  c["parameters"] = {{"lorentz[0].gamma", {{"prior_median", 5e8}, {"prior_log_sd", 0.4}}}};
  REQUIRE(run({"infer", w.path("ds"), w.write("cfg.json", c), w.path("out")}).code == 0);
  REQUIRE(run({"diagnose", w.path("out")}).code == 0);
  const json s = rbpmmh::read_json_file(w.root / "out" / "summary.json");
  const auto probs = s.at("quantile_probs").get<std::vector<double>>();
  for (const auto& p : s.at("parameters")) {
    if (p.at("name") != "lorentz[0].gamma") continue;
    const auto q = p.at("quantiles").get<std::vector<double>>();
    const double ess = p.at("ess").get<double>();
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double expect = 5e8 * std::exp(0.4 * rbpmmh::normal_quantile(probs[i]));
      // Quantile standard error in log space: sqrt(p(1-p)/ess) / density.
      const double z = rbpmmh::normal_quantile(probs[i]);
      const double se = std::sqrt(probs[i] * (1 - probs[i]) / ess) / (std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI)) * 0.4;
      CHECK(std::abs(std::log(q[i] / expect)) < 4.0 * se);
    }
  }
  CHECK(rbpmmh::read_json_file(w.root / "out" / "run_manifest.json").at("config").at("prior_only") == true);
}

TEST_CASE("version flag") {
  CHECK(run({"--version"}).code == 0);
}
