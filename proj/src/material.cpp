#include "rbpmmh/material.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rbpmmh/error.hpp"

namespace rbpmmh {

namespace {

using cplx = std::complex<double>;
constexpr cplx I1{0.0, 1.0};

void require_frequency(double f) {
  if (!(f > 0.0) || !std::isfinite(f))
    throw DomainError("material model evaluated at non-positive frequency " + std::to_string(f));
}

}  // namespace

void DebyeTerm::validate() const {
  if (!(eps_inf >= 1.0) || !(eps_s >= eps_inf) || !(f_d > 0.0))
    throw ContractViolation("DebyeTerm requires eps_inf >= 1, eps_s >= eps_inf, f_d > 0");
}

void LorentzTerm::validate() const {
  if (!(mu_s >= 1.0) || !(f_r > 0.0) || !(gamma > 0.0))
    throw ContractViolation("LorentzTerm requires mu_s >= 1, f_r > 0, gamma > 0");
}

void MaterialParams::validate() const {
  if (debye.empty() && lorentz.empty())
    throw ContractViolation("MaterialParams needs at least one term");
  for (const auto& t : debye) t.validate();
  for (const auto& t : lorentz) t.validate();
}

Eigen::VectorXd MaterialParams::flatten() const {
  Eigen::VectorXd v(n_params());
  Eigen::Index i = 0;
  for (const auto& t : debye) {
    v[i++] = t.eps_inf;
    v[i++] = t.eps_s;
    v[i++] = t.f_d;
  }
  for (const auto& t : lorentz) {
    v[i++] = t.mu_s;
    v[i++] = t.f_r;
    v[i++] = t.gamma;
  }
  return v;
}

void MaterialParams::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(n_params()))
    throw ContractViolation("MaterialParams::assign: wrong parameter count");
  Eigen::Index i = 0;
  for (auto& t : debye) {
    t.eps_inf = flat[i++];
    t.eps_s = flat[i++];
    t.f_d = flat[i++];
  }
  for (auto& t : lorentz) {
    t.mu_s = flat[i++];
    t.f_r = flat[i++];
    t.gamma = flat[i++];
  }
}

std::vector<std::string> MaterialParams::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < debye.size(); ++i)
    for (const char* f : {"eps_inf", "eps_s", "f_d"})
      names.push_back("debye[" + std::to_string(i) + "]." + f);
  for (std::size_t i = 0; i < lorentz.size(); ++i)
    for (const char* f : {"mu_s", "f_r", "gamma"})
      names.push_back("lorentz[" + std::to_string(i) + "]." + f);
  return names;
}

std::complex<double> debye_eval(const DebyeTerm& term, double f) {
  require_frequency(f);
  return term.eps_inf + (term.eps_s - term.eps_inf) / (1.0 + I1 * (f / term.f_d));
}

std::complex<double> lorentz_eval(const LorentzTerm& term, double f) {
  require_frequency(f);
  const double fr2 = term.f_r * term.f_r;
  return 1.0 + (term.mu_s - 1.0) * fr2 / cplx(fr2 - f * f, term.gamma * f);
}

std::complex<double> permittivity(const MaterialParams& params, double f) {
  require_frequency(f);
  if (params.debye.empty()) return 1.0;
  cplx eps = 0.0;
  for (const auto& t : params.debye) eps += debye_eval(t, f);
  return eps;
}

std::complex<double> permeability(const MaterialParams& params, double f) {
  require_frequency(f);
  cplx mu = 1.0;
  for (const auto& t : params.lorentz) mu += lorentz_eval(t, f) - 1.0;
  return mu;
}

Eigen::VectorXd material_eval(const MaterialParams& params, double f, int n_zones) {
  if (n_zones < 1) throw ContractViolation("material_eval: n_zones must be >= 1");
  const cplx eps = permittivity(params, f);
  const cplx mu = permeability(params, f);
  Eigen::VectorXd g(4 * n_zones);
  g.segment(0 * n_zones, n_zones).setConstant(eps.real());
  g.segment(1 * n_zones, n_zones).setConstant(-eps.imag());
  g.segment(2 * n_zones, n_zones).setConstant(mu.real());
  g.segment(3 * n_zones, n_zones).setConstant(-mu.imag());
  return g;
}

Eigen::MatrixXd material_jacobian(const MaterialParams& params, double f) {
  require_frequency(f);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(4, static_cast<Eigen::Index>(params.n_params()));
  Eigen::Index col = 0;
  auto put_eps = [&](cplx d) {
    J(0, col) = d.real();
    J(1, col) = -d.imag();
    ++col;
  };
  auto put_mu = [&](cplx d) {
    J(2, col) = d.real();
    J(3, col) = -d.imag();
    ++col;
  };
  for (const auto& t : params.debye) {
    const cplx den = 1.0 + I1 * (f / t.f_d);
    const double delta = t.eps_s - t.eps_inf;
    put_eps(1.0 - 1.0 / den);
    put_eps(1.0 / den);
    put_eps(I1 * delta * f / (t.f_d * t.f_d * den * den));
  }
  for (const auto& t : params.lorentz) {
    const double fr2 = t.f_r * t.f_r;
    const cplx den(fr2 - f * f, t.gamma * f);
    const double amp = t.mu_s - 1.0;
    put_mu(fr2 / den);
    put_mu(amp * 2.0 * t.f_r * (den - fr2) / (den * den));
    put_mu(-amp * fr2 * I1 * f / (den * den));
  }
  return J;
}

void to_json(nlohmann::json& j, const MaterialParams& p) {
  j = nlohmann::json{{"debye", nlohmann::json::array()}, {"lorentz", nlohmann::json::array()}};
  for (const auto& t : p.debye)
    j["debye"].push_back({{"eps_inf", t.eps_inf}, {"eps_s", t.eps_s}, {"f_d", t.f_d}});
  for (const auto& t : p.lorentz)
    j["lorentz"].push_back({{"mu_s", t.mu_s}, {"f_r", t.f_r}, {"gamma", t.gamma}});
}

void from_json(const nlohmann::json& j, MaterialParams& p) {
  p = MaterialParams{};
  if (j.contains("debye"))
    for (const auto& t : j.at("debye"))
      p.debye.push_back({t.at("eps_inf").get<double>(), t.at("eps_s").get<double>(),
                         t.at("f_d").get<double>()});
  if (j.contains("lorentz"))
    for (const auto& t : j.at("lorentz"))
      p.lorentz.push_back({t.at("mu_s").get<double>(), t.at("f_r").get<double>(),
                           t.at("gamma").get<double>()});
}

}  // namespace rbpmmh
