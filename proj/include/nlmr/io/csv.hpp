#ifndef NLMR_IO_CSV_HPP
#define NLMR_IO_CSV_HPP

// Comma-separated input and output. Numbers are written with 17 significant
// digits so doubles survive a write/read cycle unchanged.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nlmr/data.hpp"
#include "nlmr/error.hpp"

namespace nlmr::io {

struct ColumnMapping {
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
  std::string exposure;
  std::string outcome;
  Family family = Family::gaussian;
};

struct CsvLoad {
  DataSet data;
  int dropped_rows = 0;
  std::vector<std::string> warnings;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "nan";
}

}  // namespace detail

// Reads the mapped columns of a headed CSV file. Rows with a missing mapped
// cell (empty, NA or NaN) are dropped and counted.
inline CsvLoad load_csv(const std::string& path, const ColumnMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileError, "io", "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::FileError, "io", "'" + path + "' has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::unordered_map<std::string, std::size_t> index;
  const auto header = detail::split(line);
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(std::string(header[j]), j);
  auto locate = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorKind::MissingColumn, "io", "column '" + name + "' not found in '" + path + "'");
    return it->second;
  };
  if (mapping.instruments.empty()) throw Error(ErrorKind::MissingColumn, "io", "no instrument columns mapped");

  // mapped order: instruments, covariates, exposure, outcome
  std::vector<std::string> names = mapping.instruments;
  names.insert(names.end(), mapping.covariates.begin(), mapping.covariates.end());
  names.push_back(mapping.exposure);
  names.push_back(mapping.outcome);
  std::vector<std::size_t> cols;
  for (const auto& nm : names) cols.push_back(locate(nm));

  std::vector<std::vector<double>> values(names.size());
  CsvLoad out;
  std::size_t row = 0;
  std::vector<double> cells(names.size());
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::NonNumericCell, "io",
                  "row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    bool missing = false;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::string_view cell = fields[cols[j]];
      if (detail::is_missing(cell)) {
        missing = true;
        break;
      }
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::NonNumericCell, "io",
                    "row " + std::to_string(row) + ", column '" + names[j] + "': '" + std::string(cell) +
                        "' is not a finite number");
      }
      cells[j] = v;
    }
    if (missing) {
      ++out.dropped_rows;
      continue;
    }
    const double y = cells.back();
    if (mapping.family == Family::binomial && y != 0.0 && y != 1.0) {
      throw Error(ErrorKind::NonNumericCell, "io",
                  "row " + std::to_string(row) + ", column '" + mapping.outcome + "': binomial outcome must be 0 or 1");
    }
    for (std::size_t j = 0; j < cells.size(); ++j) values[j].push_back(cells[j]);
  }

  const auto n = static_cast<Eigen::Index>(values.front().size());
  if (n == 0) throw Error(ErrorKind::EmptyAfterFiltering, "io", "no complete rows in '" + path + "'");
  if (out.dropped_rows > 0) {
    out.warnings.push_back("dropped " + std::to_string(out.dropped_rows) + " row(s) with missing values in mapped columns");
  }

  auto column = [&](std::size_t j) { return Eigen::Map<const Vec>(values[j].data(), n); };
  DataSet& d = out.data;
  const std::size_t n1 = mapping.instruments.size();
  const std::size_t n2 = mapping.covariates.size();
  d.Z.resize(n, static_cast<Eigen::Index>(n1));
  for (std::size_t j = 0; j < n1; ++j) d.Z.col(static_cast<Eigen::Index>(j)) = column(j);
  d.C.resize(n, static_cast<Eigen::Index>(n2));
  for (std::size_t j = 0; j < n2; ++j) d.C.col(static_cast<Eigen::Index>(j)) = column(n1 + j);
  d.X = column(n1 + n2);
  d.Y = column(n1 + n2 + 1);
  d.family = mapping.family;
  d.iv_names = mapping.instruments;
  d.covariate_names = mapping.covariates;
  d.exposure_name = mapping.exposure;
  d.outcome_name = mapping.outcome;
  return out;
}

// Opens path for binary writing, creating missing parent directories.
inline std::ofstream open_output(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::FileError, "io", "cannot write '" + path + "'");
  return out;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out = open_output(path);
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << r[j];
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw Error(ErrorKind::FileError, "io", "write to '" + path + "' failed");
}

// Columns: instruments, covariates, exposure, outcome.
inline void write_dataset_csv(const std::string& path, const DataSet& d) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < d.num_ivs(); ++j) header.push_back(d.iv_name(j));
  for (Eigen::Index j = 0; j < d.num_covariates(); ++j) header.push_back(d.covariate_name(j));
  header.push_back(d.exposure_name);
  header.push_back(d.outcome_name);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(d.n()));
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    std::vector<std::string> r;
    for (Eigen::Index j = 0; j < d.num_ivs(); ++j) r.push_back(format_double(d.Z(i, j)));
    for (Eigen::Index j = 0; j < d.num_covariates(); ++j) r.push_back(format_double(d.C(i, j)));
    r.push_back(format_double(d.X(i)));
    r.push_back(format_double(d.Y(i)));
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

}  // namespace nlmr::io

#endif  // NLMR_IO_CSV_HPP
