#include "rbpmmh/chain_io.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "rbpmmh/dataset_io.hpp"
#include "rbpmmh/error.hpp"

namespace rbpmmh {

namespace {

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, const std::filesystem::path& file) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error("malformed number \"" + s + "\" in " + file.string());
  return v;
}

std::ifstream open_in(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw MissingArtifact("missing " + file.string());
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifact("cannot read " + file.string());
  return in;
}

}  // namespace

ChainWriter::ChainWriter(const std::filesystem::path& file, const std::vector<std::string>& names)
    : out_(open_out(file)) {
  out_ << "iter";
  for (const auto& n : names) out_ << ',' << n;
  out_ << ",log_lik_hat,log_prior,beta,accepted,acceptance_rate\n";
}

void ChainWriter::write(const ChainRecord& rec) {
  out_ << rec.iter;
  const Eigen::VectorXd flat = rec.psi.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) out_ << ',' << format_double(flat[i]);
  out_ << ',' << format_double(rec.log_lik_hat) << ',' << format_double(rec.log_prior) << ','
       << format_double(rec.beta) << ',' << (rec.accepted ? 1 : 0) << ',' << format_double(rec.acceptance_rate)
       << '\n';
}

PathWriter::PathWriter(const std::filesystem::path& file, int state_dim) : out_(open_out(file)), state_dim_(state_dim) {
  out_ << "iter,k,rho";
  for (int i = 0; i < state_dim; ++i) out_ << ",dx_" << i;
  out_ << '\n';
}

void PathWriter::write(const PathRecord& rec) {
  if (rec.delta_x.cols() != state_dim_) throw ContractViolation("PathWriter: state dimension mismatch");
  for (Eigen::Index k = 0; k < rec.delta_x.rows(); ++k) {
    out_ << rec.iter << ',' << (k + 1) << ',' << format_double(rec.rho[static_cast<std::size_t>(k)]);
    for (Eigen::Index i = 0; i < rec.delta_x.cols(); ++i) out_ << ',' << format_double(rec.delta_x(k, i));
    out_ << '\n';
  }
}

SmcDiagnosticsWriter::SmcDiagnosticsWriter(const std::filesystem::path& file) : out_(open_out(file)) {
  out_ << "iter,k,ess,resampled,spread\n";
}

void SmcDiagnosticsWriter::write(int iter, const SmcResult& r) {
  for (std::size_t k = 0; k < r.ess_trace.size(); ++k) {
    out_ << iter << ',' << (k + 1) << ',' << format_double(r.ess_trace[k]) << ',' << (r.resample_flags[k] ? 1 : 0)
         << ',';
    if (k < r.spread_trace.size()) out_ << format_double(r.spread_trace[k]);
    out_ << '\n';
  }
}

ChainTable read_chain_csv(const std::filesystem::path& file) {
  auto in = open_in(file);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty chain file " + file.string());
  const auto header = split(line);
  const std::size_t tail = 5;
  if (header.size() < tail + 1 || header.front() != "iter" || header[header.size() - tail] != "log_lik_hat")
    throw std::runtime_error("unexpected chain.csv header in " + file.string());
  ChainTable t;
  t.parameter_names.assign(header.begin() + 1, header.end() - static_cast<std::ptrdiff_t>(tail));
  const auto P = static_cast<Eigen::Index>(t.parameter_names.size());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw std::runtime_error("ragged row in " + file.string());
    t.iter.push_back(static_cast<int>(parse_double(cells[0], file)));
    std::vector<double> row(static_cast<std::size_t>(P));
    for (Eigen::Index i = 0; i < P; ++i)
      row[static_cast<std::size_t>(i)] = parse_double(cells[static_cast<std::size_t>(i) + 1], file);
    rows.push_back(std::move(row));
    const std::size_t b = cells.size() - tail;
    t.log_lik_hat.push_back(parse_double(cells[b], file));
    t.log_prior.push_back(parse_double(cells[b + 1], file));
    t.beta.push_back(parse_double(cells[b + 2], file));
    t.accepted.push_back(cells[b + 3] == "1");
    t.acceptance_rate.push_back(parse_double(cells[b + 4], file));
  }
  t.params.resize(static_cast<Eigen::Index>(rows.size()), P);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index i = 0; i < P; ++i) t.params(static_cast<Eigen::Index>(r), i) = rows[r][static_cast<std::size_t>(i)];
  return t;
}

std::vector<PathRecord> read_paths_csv(const std::filesystem::path& file) {
  auto in = open_in(file);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty paths file " + file.string());
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "iter") throw std::runtime_error("unexpected paths.csv header");
  const std::size_t n = header.size() - 3;
  std::map<int, std::vector<std::pair<double, std::vector<double>>>> by_iter;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw std::runtime_error("ragged row in " + file.string());
    std::vector<double> dx(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] = parse_double(cells[i + 3], file);
    by_iter[static_cast<int>(parse_double(cells[0], file))].emplace_back(parse_double(cells[2], file), std::move(dx));
  }
  std::vector<PathRecord> out;
  for (auto& [iter, rows] : by_iter) {
    PathRecord rec;
    rec.iter = iter;
    rec.delta_x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      rec.rho.push_back(rows[k].first);
      for (std::size_t i = 0; i < n; ++i)
        rec.delta_x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rows[k].second[i];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace rbpmmh
