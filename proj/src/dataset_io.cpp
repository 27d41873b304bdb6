#include "rbpmmh/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "rbpmmh/error.hpp"

namespace rbpmmh {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary dataset format assumes little-endian");

std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_matrix_bin(const fs::path& file, const Eigen::MatrixXd& m) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw MissingArtifact("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Eigen::MatrixXd read_matrix_bin(const fs::path& file, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifact("missing " + file.string());
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(m.size() * sizeof(double)))
    throw ContractViolation(file.string() + " is shorter than its manifest dimensions");
  return m;
}

void write_vector_csv(const fs::path& file, const Eigen::VectorXd& v) {
  std::ofstream out(file);
  if (!out) throw MissingArtifact("cannot write " + file.string());
  for (double x : v) out << format_double(x) << '\n';
}

Eigen::VectorXd read_vector_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingArtifact("missing " + file.string());
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double x = 0.0;
    auto res = std::from_chars(line.data(), line.data() + line.size(), x);
    if (res.ec != std::errc()) throw ConfigError("malformed number in " + file.string() + ": " + line);
    values.push_back(x);
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string file_checksum(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifact("missing " + file.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

nlohmann::json read_json_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifact("missing " + file.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(file.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": JSON parse error: " + e.what());
  }
}

void write_json_file(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file);
  if (!out) throw MissingArtifact("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

void write_dataset(const fs::path& dir, const Dataset& data, const nlohmann::json& extra) {
  data.validate();
  fs::create_directories(dir);
  const int K = data.n_freqs();
  const auto& mm = data.metamodel;

  write_vector_csv(dir / "frequencies.csv",
                   Eigen::Map<const Eigen::VectorXd>(data.frequencies.data(), K));
  nlohmann::json r_diag = nlohmann::json::array();
  bool all_diag = true;
  std::vector<std::string> files{"frequencies.csv"};
  for (int k = 0; k < K; ++k) {
    const std::string idx = std::to_string(k + 1);
    write_vector_csv(dir / ("y_" + idx + ".csv"), data.observations[k]);
    write_matrix_bin(dir / ("A_" + idx + ".bin"), mm.entries[k].A);
    write_matrix_bin(dir / ("y0_" + idx + ".bin"), mm.entries[k].y0);
    files.insert(files.end(), {"y_" + idx + ".csv", "A_" + idx + ".bin", "y0_" + idx + ".bin"});
    if (mm.entries[k].r_is_diagonal()) {
      const Eigen::VectorXd d = mm.entries[k].R.diagonal();
      r_diag.push_back(std::vector<double>(d.data(), d.data() + d.size()));
    } else {
      all_diag = false;
      write_matrix_bin(dir / ("R_" + idx + ".bin"), mm.entries[k].R);
      files.push_back("R_" + idx + ".bin");
      r_diag.push_back(nullptr);
    }
  }

  nlohmann::json manifest = extra;
  manifest["format"] = "rbpmmh-dataset";
  manifest["version"] = 1;
  manifest["n_zones"] = data.n_zones;
  manifest["n_freqs"] = K;
  manifest["state_dim"] = mm.state_dim();
  manifest["obs_dim"] = mm.obs_dim();
  manifest["seed"] = data.seed;
  manifest["R_diag"] = r_diag;
  manifest["R_all_diagonal"] = all_diag;
  if (data.deviation_model) manifest["deviation_model"] = *data.deviation_model;
  nlohmann::json sums = nlohmann::json::object();
  for (const auto& f : files) sums[f] = file_checksum(dir / f);
  manifest["checksums"] = sums;
  write_json_file(dir / "manifest.json", manifest);
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw MissingArtifact("dataset manifest not found: " + mpath.string());
  const nlohmann::json manifest = read_json_file(mpath);
  if (manifest.value("format", "") != "rbpmmh-dataset")
    throw ConfigError(mpath.string() + " is not an rbpmmh dataset manifest");

  Dataset data;
  data.n_zones = manifest.at("n_zones").get<int>();
  data.seed = manifest.at("seed").get<std::uint64_t>();
  const int K = manifest.at("n_freqs").get<int>();
  const Eigen::Index n = manifest.at("state_dim").get<Eigen::Index>();
  const Eigen::Index d = manifest.at("obs_dim").get<Eigen::Index>();
  if (manifest.contains("deviation_model"))
    data.deviation_model = manifest.at("deviation_model").get<DeviationModel>();

  const Eigen::VectorXd f = read_vector_csv(dir / "frequencies.csv");
  if (f.size() != K) throw ContractViolation("frequencies.csv has " + std::to_string(f.size()) + " rows, manifest says " + std::to_string(K));
  data.frequencies.assign(f.data(), f.data() + f.size());

  const auto& r_diag = manifest.at("R_diag");
  for (int k = 0; k < K; ++k) {
    const std::string idx = std::to_string(k + 1);
    Eigen::VectorXd y = read_vector_csv(dir / ("y_" + idx + ".csv"));
    if (y.size() != d) throw ContractViolation("y_" + idx + ".csv length does not match obs_dim");
    data.observations.push_back(std::move(y));
    MetamodelEntry e;
    e.A = read_matrix_bin(dir / ("A_" + idx + ".bin"), d, n);
    e.y0 = read_matrix_bin(dir / ("y0_" + idx + ".bin"), d, 1).col(0);
    if (r_diag.at(k).is_null()) {
      e.R = read_matrix_bin(dir / ("R_" + idx + ".bin"), d, d);
    } else {
      const auto diag = r_diag.at(k).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(diag.size()) != d) throw ContractViolation("R_diag length mismatch");
      e.R = Eigen::Map<const Eigen::VectorXd>(diag.data(), d).asDiagonal();
    }
    data.metamodel.entries.push_back(std::move(e));
  }
  data.validate();
  return data;
}

}  // namespace rbpmmh
