#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rbpmmh/ssm.hpp"

namespace rbpmmh {

/// Dataset directory layout:
///   manifest.json          dimensions, seed, R_k diagonals, checksums
///   frequencies.csv        one frequency [Hz] per line
///   y_<k>.csv              observation k (1-based), one value per line
///   A_<k>.bin, y0_<k>.bin  float64 little-endian, column-major
///   R_<k>.bin              only when R_k is not diagonal
///
/// `extra` is merged into the manifest (e.g. generator provenance).
void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const nlohmann::json& extra = nlohmann::json::object());

Dataset read_dataset(const std::filesystem::path& dir);

/// Raw column-major float64 matrix I/O.
void write_matrix_bin(const std::filesystem::path& file, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_bin(const std::filesystem::path& file, Eigen::Index rows, Eigen::Index cols);

void write_vector_csv(const std::filesystem::path& file, const Eigen::VectorXd& v);
Eigen::VectorXd read_vector_csv(const std::filesystem::path& file);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& file);

nlohmann::json read_json_file(const std::filesystem::path& file);
void write_json_file(const std::filesystem::path& file, const nlohmann::json& j);

}  // namespace rbpmmh
