#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "rbpmmh/error.hpp"

namespace rbpmmh::cli {

struct InferOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> thin;
  std::optional<int> iters;
  bool diagnostics = false;   ///< also write smc_trace.csv (per-step ESS, resampling, spread)
  bool dump_beliefs = false;  ///< write beliefs.csv for the final state
};

struct DiagnoseOptions {
  std::optional<int> burn_in;
  std::optional<std::filesystem::path> dataset;  ///< defaults to the run manifest's dataset
  int max_lag = 100;
};

/// Each command throws the library exceptions; exit_code_for maps them.
void cmd_generate(const std::filesystem::path& spec_file, const std::filesystem::path& out_dir,
                  std::optional<std::uint64_t> seed);
void cmd_infer(const std::filesystem::path& dataset_dir, const std::filesystem::path& config_file,
               const std::filesystem::path& out_dir, const InferOptions& opts);
void cmd_diagnose(const std::filesystem::path& out_dir, const DiagnoseOptions& opts);

/// Map the exception currently being handled to an exit code and print the
/// message to stderr. Call only from inside a catch block.
int report_current_exception();

/// Full command-line entry point.
int main(int argc, char** argv);

}  // namespace rbpmmh::cli
