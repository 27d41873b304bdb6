#include "rbpmmh/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rbpmmh {

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  const auto n = static_cast<int>(x.size());
  std::vector<double> out(static_cast<std::size_t>(std::max(max_lag, 0) + 1), 0.0);
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  out[0] = 1.0;
  if (c0 <= 0.0) return out;
  for (int lag = 1; lag <= max_lag && lag < n; ++lag) {
    double c = 0.0;
    for (int i = 0; i + lag < n; ++i) c += (x[static_cast<std::size_t>(i)] - mean) * (x[static_cast<std::size_t>(i + lag)] - mean);
    out[static_cast<std::size_t>(lag)] = c / c0;
  }
  return out;
}

double effective_sample_size(std::span<const double> x) {
  const auto n = static_cast<int>(x.size());
  if (n < 4) return n;
  const auto rho = autocorrelation(x, std::min(n - 1, 1000));
  double tau = 1.0;
  // Geyer's initial positive sequence on pairs of lags.
  for (std::size_t t = 1; t + 1 < rho.size(); t += 2) {
    const double pair = rho[t] + rho[t + 1];
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return n / tau;
}

double quantile(std::vector<double> x, double p) {
  if (x.empty()) return std::nan("");
  std::sort(x.begin(), x.end());
  const double pos = p * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (p <= 0.0) return -INFINITY;
  if (p >= 1.0) return INFINITY;
  // Acklam's rational approximation (relative error ~1e-9), then one Halley
  // step against the erfc-based CDF.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x = 0.0;
  if (p < plow || p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(p < plow ? p : 1.0 - p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    if (p > 1.0 - plow) x = -x;
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

const std::vector<double>& summary_probs() {
  static const std::vector<double> probs{0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975};
  return probs;
}

ChainSummary summarize_chain(const ChainTable& chain, int burn_in) {
  ChainSummary s;
  s.n_records = chain.size();
  s.burn_in = burn_in;
  std::vector<int> rows;
  int acc_all = 0;
  int acc_post = 0;
  for (int r = 0; r < chain.size(); ++r) {
    const auto ru = static_cast<std::size_t>(r);
    acc_all += chain.accepted[ru] ? 1 : 0;
    if (chain.iter[ru] > burn_in) {
      rows.push_back(r);
      acc_post += chain.accepted[ru] ? 1 : 0;
    }
  }
  if (rows.empty()) {
    for (int r = 0; r < chain.size(); ++r) rows.push_back(r);
    acc_post = acc_all;
  }
  if (chain.size() > 0) s.acceptance_rate = static_cast<double>(acc_all) / chain.size();
  if (!rows.empty()) s.acceptance_rate_post_burn_in = static_cast<double>(acc_post) / static_cast<double>(rows.size());
  for (std::size_t p = 0; p < chain.parameter_names.size(); ++p) {
    ParameterSummary ps;
    ps.name = chain.parameter_names[p];
    std::vector<double> x;
    x.reserve(rows.size());
    for (int r : rows) x.push_back(chain.params(r, static_cast<Eigen::Index>(p)));
    if (!x.empty()) {
      double m = 0.0;
      for (double v : x) m += v;
      m /= static_cast<double>(x.size());
      double v2 = 0.0;
      for (double v : x) v2 += (v - m) * (v - m);
      ps.mean = m;
      ps.sd = x.size() > 1 ? std::sqrt(v2 / static_cast<double>(x.size() - 1)) : 0.0;
      ps.ess = effective_sample_size(x);
      for (double q : summary_probs()) ps.quantiles.push_back(quantile(x, q));
    }
    s.parameters.push_back(std::move(ps));
  }
  return s;
}

}  // namespace rbpmmh
