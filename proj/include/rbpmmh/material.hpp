#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace rbpmmh {

/// First-order Debye relaxation of the permittivity.
struct DebyeTerm {
  double eps_inf = 1.0;  ///< high-frequency permittivity
  double eps_s = 1.0;    ///< static permittivity
  double f_d = 1e9;      ///< relaxation frequency [Hz]

  void validate() const;
  bool operator==(const DebyeTerm&) const = default;
};

/// Second-order Lorentzian resonance of the permeability.
struct LorentzTerm {
  double mu_s = 1.0;   ///< static permeability
  double f_r = 1e9;    ///< resonance frequency [Hz]
  double gamma = 1e8;  ///< damping [Hz]

  void validate() const;
  bool operator==(const LorentzTerm&) const = default;
};

/// Material hyperparameters: a set of Debye and Lorentz terms.
struct MaterialParams {
  std::vector<DebyeTerm> debye;
  std::vector<LorentzTerm> lorentz;

  void validate() const;
  std::size_t n_params() const { return 3 * (debye.size() + lorentz.size()); }

  /// Flattened parameters: per Debye term (eps_inf, eps_s, f_d), then per
  /// Lorentz term (mu_s, f_r, gamma).
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  std::vector<std::string> parameter_names() const;

  bool operator==(const MaterialParams&) const = default;
};

/// Complex permittivity of one Debye term, eps' - i eps'' convention:
/// eps(f) = eps_inf + (eps_s - eps_inf) / (1 + i f / f_d).
/// The returned imaginary part is -eps'' (<= 0 for a passive material).
std::complex<double> debye_eval(const DebyeTerm& term, double f);

/// Complex permeability of one Lorentz term, mu' - i mu'' convention:
/// mu(f) = 1 + (mu_s - 1) f_r^2 / (f_r^2 - f^2 + i gamma f).
std::complex<double> lorentz_eval(const LorentzTerm& term, double f);

/// Zone-uniform permittivity and permeability of the full model at f.
/// eps is the sum of the Debye terms (1 when there are none); mu is 1 plus
/// the resonant parts of the Lorentz terms.
std::complex<double> permittivity(const MaterialParams& params, double f);
std::complex<double> permeability(const MaterialParams& params, double f);

/// g(f, psi): the 4N state mean [eps'*1_N, eps''*1_N, mu'*1_N, mu''*1_N].
Eigen::VectorXd material_eval(const MaterialParams& params, double f, int n_zones);

/// d[eps', eps'', mu', mu''] / d(flattened params), a 4 x n_params matrix for
/// one zone (every zone has the same derivative).
Eigen::MatrixXd material_jacobian(const MaterialParams& params, double f);

void to_json(nlohmann::json& j, const MaterialParams& p);
void from_json(const nlohmann::json& j, MaterialParams& p);

}  // namespace rbpmmh
