#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rbpmmh/cli.hpp"
#include "rbpmmh/dataset_io.hpp"
#include "rbpmmh/enkf.hpp"
#include "rbpmmh/error.hpp"
#include "rbpmmh/kalman.hpp"
#include "rbpmmh/material.hpp"
#include "rbpmmh/pmmh.hpp"
#include "rbpmmh/rbsmc.hpp"
#include "rbpmmh/scenario.hpp"

namespace py = pybind11;
using namespace rbpmmh;

namespace {

// JSON crosses the boundary as text; the Python wrapper does the dumps/loads.
MaterialParams parse_params(const std::string& text) { return nlohmann::json::parse(text).get<MaterialParams>(); }

// A dataset together with the preprocessed likelihood model.
class Model {
public:
  Model(const std::string& dataset_dir, const std::string& deviation_json)
      : data_(read_dataset(dataset_dir)) {
    DeviationModel prior;
    if (!deviation_json.empty()) {
      PmmhConfig tmp;
      tmp.model = nlohmann::json::parse(deviation_json).get<DeviationModel>();
      if (!nlohmann::json::parse(deviation_json).contains("n_zones")) tmp.model->spatial.n_zones = 0;
      prior = inference_prior(tmp, data_);
    } else {
      prior = inference_prior(PmmhConfig{}, data_);
    }
    model_ = std::make_unique<LinearGaussianModel>(data_, prior);
  }

  int n_freqs() const { return model_->n_freqs(); }
  int state_dim() const { return model_->state_dim(); }
  int obs_dim() const { return data_.metamodel.obs_dim(); }
  std::vector<double> frequencies() const { return data_.frequencies; }

  double kf_loglik(const std::string& psi, const std::vector<double>& rho) const {
    return rbpmmh::kf_loglik(*model_, parse_params(psi), rho);
  }

  py::dict smc(const std::string& psi, int n_particles, std::uint64_t seed, const std::string& backend,
               int ensemble_size, double ess_threshold, int threads) const {
    SmcOptions o;
    o.n_particles = n_particles;
    o.ess_threshold = ess_threshold;
    o.threads = threads;
    SmcResult r;
    {
      py::gil_scoped_release release;
      if (parse_backend(backend) == Backend::kf) {
        r = smc_run(*model_, parse_params(psi), o, seed);
      } else {
        EnkfOptions eo;
        eo.ensemble_size = ensemble_size;
        r = smc_run_enkf(*model_, parse_params(psi), o, eo, seed);
      }
    }
    py::dict out;
    out["log_lik_hat"] = r.log_lik_hat;
    out["ess"] = r.ess_trace;
    out["resampled"] = r.resample_flags;
    out["rho_path"] = r.sampled_rho_path;
    out["delta_x"] = r.sampled_delta_x;
    out["spread"] = r.spread_trace;
    return out;
  }

  py::dict pmmh(const std::string& config_json) const {
    const PmmhConfig config = nlohmann::json::parse(config_json).get<PmmhConfig>();
    PmmhResult r;
    {
      py::gil_scoped_release release;
      r = pmmh_run(*model_, config);
    }
    const auto n = static_cast<Eigen::Index>(r.chain.size());
    const auto p = static_cast<Eigen::Index>(r.parameter_names.size());
    Eigen::MatrixXd params(n, p);
    Eigen::VectorXd ll(n), lp(n), beta(n);
    std::vector<bool> accepted;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& rec = r.chain[static_cast<std::size_t>(i)];
      params.row(i) = rec.psi.flatten().transpose();
      ll[i] = rec.log_lik_hat;
      lp[i] = rec.log_prior;
      beta[i] = rec.beta;
      accepted.push_back(rec.accepted);
    }
    py::list paths;
    for (const auto& path : r.paths) {
      py::dict d;
      d["iter"] = path.iter;
      d["rho"] = path.rho;
      d["delta_x"] = path.delta_x;
      paths.append(d);
    }
    py::dict counters;
    counters["smc_calls"] = r.counters.smc_calls;
    counters["accepted"] = r.counters.accepted;
    counters["resample_events"] = r.counters.resample_events;
    counters["regularized_solves"] = r.counters.regularized_solves;
    counters["degenerate_rejections"] = r.counters.degenerate_rejections;
    py::dict out;
    out["names"] = r.parameter_names;
    out["params"] = params;
    out["log_lik_hat"] = ll;
    out["log_prior"] = lp;
    out["beta"] = beta;
    out["accepted"] = accepted;
    out["paths"] = paths;
    out["counters"] = counters;
    out["backend"] = backend_name(r.backend);
    return out;
  }

private:
  Dataset data_;
  std::unique_ptr<LinearGaussianModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "PMMH with Rao-Blackwellised SMC for dispersive material identification";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<ContractViolation> contract_error(m, "DimensionError", PyExc_ValueError);
  static py::exception<NumericalError> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const DomainError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ContractViolation& e) {
      contract_error(e.what());
    } catch (const MissingArtifact& e) {
      PyErr_SetString(PyExc_FileNotFoundError, e.what());
    } catch (const NumericalError& e) {
      numerical_error(e.what());
    } catch (const nlohmann::json::exception& e) {
      config_error(e.what());
    }
  });

  m.def("debye_eval", [](double eps_inf, double eps_s, double f_d, double f) {
    return rbpmmh::debye_eval(DebyeTerm{eps_inf, eps_s, f_d}, f);
  }, py::arg("eps_inf"), py::arg("eps_s"), py::arg("f_d"), py::arg("f"));
  m.def("lorentz_eval", [](double mu_s, double f_r, double gamma, double f) {
    return rbpmmh::lorentz_eval(LorentzTerm{mu_s, f_r, gamma}, f);
  }, py::arg("mu_s"), py::arg("f_r"), py::arg("gamma"), py::arg("f"));
  m.def("material_eval", [](const std::string& params, double f, int n_zones) {
    return rbpmmh::material_eval(parse_params(params), f, n_zones);
  }, py::arg("params_json"), py::arg("f"), py::arg("n_zones"));
  m.def("generate", [](const std::string& spec_json, const std::string& out_dir) {
    const ScenarioSpec spec = nlohmann::json::parse(spec_json).get<ScenarioSpec>();
    const Scenario sc = generate(spec);
    std::filesystem::create_directories(out_dir);
    write_scenario(out_dir, spec, sc);
  }, py::arg("spec_json"), py::arg("out_dir"));
  m.def("cli_main", [](std::vector<std::string> args) {
    args.insert(args.begin(), "rbpmmh");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    py::gil_scoped_release release;
    return cli::main(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"));

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, const std::string&>(), py::arg("dataset_dir"), py::arg("deviation_json") = "")
      .def_property_readonly("n_freqs", &Model::n_freqs)
      .def_property_readonly("state_dim", &Model::state_dim)
      .def_property_readonly("obs_dim", &Model::obs_dim)
      .def_property_readonly("frequencies", &Model::frequencies)
      .def("kf_loglik", &Model::kf_loglik, py::arg("psi_json"), py::arg("rho"))
      .def("smc", &Model::smc, py::arg("psi_json"), py::arg("n_particles") = 100, py::arg("seed") = 1,
           py::arg("backend") = "kf", py::arg("ensemble_size") = 100, py::arg("ess_threshold") = 0.5,
           py::arg("threads") = 1)
      .def("pmmh", &Model::pmmh, py::arg("config_json"));
}
