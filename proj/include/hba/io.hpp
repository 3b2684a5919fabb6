#pragma once

// Delimited-text matrix files.
//
// Layout:
//   # comment lines and blank lines are ignored
//   <n_rows> <n_cols> <resolution> <first_stamp> [periods_per_response]
//   time <stamp_1> ... <stamp_n>        (optional; validated when present)
//   <row 1: n_cols cells>
//   ...
// Cells are separated by whitespace or commas. Location metadata lives in a
// sidecar file (default: "<matrix path>.loc") with one "id lon lat" row per
// matrix row.

#include <Eigen/Dense>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hba/error.hpp"
#include "hba/fields.hpp"
#include "hba/time.hpp"

namespace hba {

struct MatrixFormat {
  char delimiter = '\0';  // '\0': whitespace and/or commas
  std::optional<std::filesystem::path> sidecar;
};

inline std::filesystem::path default_sidecar(const std::filesystem::path& matrix_path) {
  return std::filesystem::path(matrix_path.string() + ".loc");
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf.data(), p);
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_cells(std::string_view line, char delimiter) {
  std::vector<std::string> out;
  char sep = delimiter;
  if (sep == '\0' && line.find(',') != std::string_view::npos) sep = ',';
  if (sep != '\0') {
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(sep, start);
      out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return out;
  }
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

struct RawMatrixFile {
  int n_rows = 0;
  int n_cols = 0;
  Resolution resolution = Resolution::kYearly;
  std::vector<TimeStamp> times;
  std::optional<int> periods_per_response;
  std::vector<std::vector<std::string>> cells;
};

inline RawMatrixFile read_raw_matrix(const std::filesystem::path& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  RawMatrixFile raw;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  bool have_times = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    if (!have_header) {
      auto tok = split_cells(view, '\0');
      if (tok.size() < 4 || tok.size() > 5) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": header must be 'n_rows n_cols resolution first_stamp [periods_per_response]'");
      }
      try {
        raw.n_rows = std::stoi(tok[0]);
        raw.n_cols = std::stoi(tok[1]);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad matrix dimensions");
      }
      if (raw.n_rows < 1 || raw.n_cols < 1) throw ParseError(path.string() + ": matrix dimensions must be >= 1");
      raw.resolution = parse_resolution(tok[2]);
      raw.times = regular_stamps(parse_stamp(tok[3]), raw.resolution, raw.n_cols);
      if (tok.size() == 5) raw.periods_per_response = std::stoi(tok[4]);
      have_header = true;
      continue;
    }
    auto tok = split_cells(view, delimiter);
    if (!have_times && raw.cells.empty() && !tok.empty() && tok.front() == "time") {
      have_times = true;
      if (static_cast<int>(tok.size()) - 1 != raw.n_cols) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": time row has " +
                         std::to_string(tok.size() - 1) + " stamps, expected " + std::to_string(raw.n_cols));
      }
      for (int j = 0; j < raw.n_cols; ++j) {
        TimeStamp got = parse_stamp(tok[static_cast<std::size_t>(j) + 1]);
        const TimeStamp& want = raw.times[static_cast<std::size_t>(j)];
        if (raw.resolution == Resolution::kYearly ? got.year != want.year : got != want) {
          throw ParseError(path.string() + ": time gap, missing " + format_stamp(want) + " (found " +
                           format_stamp(got) + " in column " + std::to_string(j + 1) + ")");
        }
        raw.times[static_cast<std::size_t>(j)] = got;
      }
      continue;
    }
    if (static_cast<int>(tok.size()) != raw.n_cols) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": ragged row with " +
                       std::to_string(tok.size()) + " cells, expected " + std::to_string(raw.n_cols));
    }
    raw.cells.push_back(std::move(tok));
    if (static_cast<int>(raw.cells.size()) > raw.n_rows)
      throw ParseError(path.string() + ": more data rows than the declared " + std::to_string(raw.n_rows));
  }
  if (!have_header) throw ParseError(path.string() + ": missing header");
  if (static_cast<int>(raw.cells.size()) != raw.n_rows) {
    throw ParseError(path.string() + ": found " + std::to_string(raw.cells.size()) + " data rows, expected " +
                     std::to_string(raw.n_rows));
  }
  return raw;
}

inline std::vector<Location> read_locations(const std::optional<std::filesystem::path>& sidecar,
                                            const std::filesystem::path& matrix_path, int n_rows) {
  auto path = sidecar.value_or(default_sidecar(matrix_path));
  std::vector<Location> out;
  if (!std::filesystem::exists(path)) {
    if (sidecar) throw ParseError("cannot open location sidecar " + path.string());
    for (int i = 0; i < n_rows; ++i) out.push_back(Location{std::to_string(i + 1), 0.0, 0.0});
    return out;
  }
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto tok = split_cells(view, '\0');
    auto lon = tok.size() == 3 ? parse_double(tok[1]) : std::nullopt;
    auto lat = tok.size() == 3 ? parse_double(tok[2]) : std::nullopt;
    if (!lon || !lat) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 'id lon lat'");
    out.push_back(Location{tok[0], *lon, *lat});
  }
  if (static_cast<int>(out.size()) != n_rows) {
    throw ParseError(path.string() + ": " + std::to_string(out.size()) + " locations for " + std::to_string(n_rows) +
                     " matrix rows");
  }
  return out;
}

inline void write_locations(const std::filesystem::path& path, const std::vector<Location>& locations) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& loc : locations) out << loc.id << ' ' << format_double(loc.lon) << ' ' << format_double(loc.lat) << '\n';
}

inline void write_header(std::ostream& out, int rows, int cols, Resolution res, const std::vector<TimeStamp>& times,
                         std::optional<int> periods_per_response) {
  out << rows << ' ' << cols << ' ' << to_string(res) << ' ' << format_stamp(times.front());
  if (periods_per_response) out << ' ' << *periods_per_response;
  out << "\ntime";
  for (const auto& ts : times) out << ' ' << format_stamp(ts);
  out << '\n';
}

}  // namespace detail

inline CountField load_count_field(const std::filesystem::path& path, const MatrixFormat& format = {}) {
  auto raw = detail::read_raw_matrix(path, format.delimiter);
  CountField field;
  field.resolution = raw.resolution;
  field.times = raw.times;
  field.counts.resize(raw.n_rows, raw.n_cols);
  for (int i = 0; i < raw.n_rows; ++i) {
    for (int j = 0; j < raw.n_cols; ++j) {
      const std::string& cell = raw.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      std::string where = " at row " + std::to_string(i + 1) + ", column " + std::to_string(j + 1);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        auto d = parse_double(cell);
        if (d && std::isfinite(*d) && *d == std::floor(*d) && *d >= 0) {
          v = static_cast<std::int64_t>(*d);
        } else if (d) {
          throw InvalidArgument(path.string() + ": non-integer or negative count '" + cell + "'" + where);
        } else {
          throw ParseError(path.string() + ": unparsable count '" + cell + "'" + where);
        }
      }
      if (v < 0) throw InvalidArgument(path.string() + ": negative count '" + cell + "'" + where);
      field.counts(i, j) = v;
    }
  }
  field.locations = detail::read_locations(format.sidecar, path, raw.n_rows);
  field.validate();
  return field;
}

inline ForcingField load_forcing_field(const std::filesystem::path& path, const MatrixFormat& format = {}) {
  auto raw = detail::read_raw_matrix(path, format.delimiter);
  ForcingField field;
  field.resolution = raw.resolution;
  field.times = raw.times;
  field.periods_per_response = raw.periods_per_response.value_or(raw.resolution == Resolution::kMonthly ? 12 : 1);
  field.values.resize(raw.n_rows, raw.n_cols);
  for (int i = 0; i < raw.n_rows; ++i) {
    for (int j = 0; j < raw.n_cols; ++j) {
      const std::string& cell = raw.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      auto v = parse_double(cell);
      if (!v || !std::isfinite(*v)) {
        throw InvalidArgument(path.string() + ": missing or non-finite forcing value '" + cell + "' at row " +
                              std::to_string(i + 1) + ", column " + std::to_string(j + 1) + " (" +
                              format_stamp(field.times[static_cast<std::size_t>(j)]) + ")");
      }
      field.values(i, j) = *v;
    }
  }
  field.locations = detail::read_locations(format.sidecar, path, raw.n_rows);
  field.validate();
  return field;
}

inline void write_count_field(const std::filesystem::path& path, const CountField& field) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  detail::write_header(out, field.n_locations(), field.n_periods(), field.resolution, field.times, std::nullopt);
  for (Eigen::Index i = 0; i < field.counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < field.counts.cols(); ++j) out << (j ? " " : "") << field.counts(i, j);
    out << '\n';
  }
  detail::write_locations(default_sidecar(path), field.locations);
}

inline void write_forcing_field(const std::filesystem::path& path, const ForcingField& field) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  detail::write_header(out, field.n_locations(), field.n_periods(), field.resolution, field.times,
                       field.periods_per_response);
  for (Eigen::Index i = 0; i < field.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < field.values.cols(); ++j) out << (j ? " " : "") << format_double(field.values(i, j));
    out << '\n';
  }
  detail::write_locations(default_sidecar(path), field.locations);
}

// Plain "rows cols" + rows format for intermediate artifacts.
inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_double(m(i, j));
    out << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("bad matrix block header");
  Eigen::MatrixXd m(rows, cols);
  std::string tok;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(in >> tok)) throw ParseError("truncated matrix block");
      auto v = parse_double(tok);
      if (!v) throw ParseError("bad matrix cell '" + tok + "'");
      m(i, j) = *v;
    }
  }
  return m;
}

}  // namespace hba
