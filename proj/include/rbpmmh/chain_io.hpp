#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rbpmmh/pmmh.hpp"

namespace rbpmmh {

/// chain.csv: iter, <parameter names...>, log_lik_hat, log_prior, beta,
/// accepted, acceptance_rate. Doubles use the shortest round-trip form.
class ChainWriter {
public:
  ChainWriter(const std::filesystem::path& file, const std::vector<std::string>& parameter_names);
  void write(const ChainRecord& rec);
  void flush() { out_.flush(); }

private:
  std::ofstream out_;
};

/// paths.csv: iter, k, rho, dx_0 .. dx_{4N-1}; one row per frequency.
class PathWriter {
public:
  PathWriter(const std::filesystem::path& file, int state_dim);
  void write(const PathRecord& rec);
  void flush() { out_.flush(); }

private:
  std::ofstream out_;
  int state_dim_;
};

/// smc_trace.csv: iter, k, ess, resampled, spread (one row per SMC step).
class SmcDiagnosticsWriter {
public:
  explicit SmcDiagnosticsWriter(const std::filesystem::path& file);
  void write(int iter, const SmcResult& r);
  void flush() { out_.flush(); }

private:
  std::ofstream out_;
};

/// Parsed chain.csv.
struct ChainTable {
  std::vector<std::string> parameter_names;
  std::vector<int> iter;
  Eigen::MatrixXd params;  ///< rows are iterations
  std::vector<double> log_lik_hat;
  std::vector<double> log_prior;
  std::vector<double> beta;
  std::vector<bool> accepted;
  std::vector<double> acceptance_rate;

  int size() const { return static_cast<int>(iter.size()); }
};

ChainTable read_chain_csv(const std::filesystem::path& file);
std::vector<PathRecord> read_paths_csv(const std::filesystem::path& file);

}  // namespace rbpmmh
