#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fars/error.hpp"

namespace fars::csv {

/// A parsed comma-separated numeric table.
struct Table {
  std::vector<std::string> header;      // column names, empty when absent
  std::vector<std::string> row_labels;  // first-column labels, empty when absent
  Eigen::MatrixXd values;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

/// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view cell) {
  cell = detail::trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

/// Reads a rectangular numeric CSV. When `has_row_labels` is set the first
/// column is kept verbatim as a label (dates, period ids) instead of parsed.
inline Table read(const std::filesystem::path& path, bool has_row_labels, bool has_header) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path.string());

  Table table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (line_no == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
    if (detail::trim(view).empty()) continue;
    auto cells = detail::split(view);
    if (header_pending) {
      header_pending = false;
      for (std::size_t c = has_row_labels ? 1 : 0; c < cells.size(); ++c)
        table.header.push_back(detail::unquote(cells[c]));
      width = table.header.size();
      continue;
    }
    const std::size_t first = has_row_labels ? 1 : 0;
    if (cells.size() <= first)
      throw InputError(path.string() + ": line " + std::to_string(line_no) + " has no data cells");
    const std::size_t n = cells.size() - first;
    if (width == 0) width = n;
    if (n != width)
      throw InputError(path.string() + ": ragged row at line " + std::to_string(line_no) + " (expected " +
                       std::to_string(width) + " cells, found " + std::to_string(n) + ")");
    std::vector<double> row(n);
    for (std::size_t c = 0; c < n; ++c) {
      const auto v = parse_double(cells[first + c]);
      if (!v) {
        std::string col = std::to_string(c + 1);
        if (c < table.header.size()) col += " (" + table.header[c] + ")";
        throw InputError(path.string() + ": missing or non-numeric value '" +
                         std::string(detail::trim(cells[first + c])) + "' at row " +
                         std::to_string(rows.size() + 1) + ", column " + col);
      }
      row[c] = *v;
    }
    if (has_row_labels) table.row_labels.push_back(detail::unquote(cells[0]));
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < width; ++c)
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return table;
}

/// Writes `values` with an optional header and optional first label column.
/// Numbers use round-trip formatting so a re-read reproduces them exactly.
inline void write(const std::filesystem::path& path, const Eigen::MatrixXd& values,
                  const std::vector<std::string>& header = {},
                  const std::vector<std::string>& row_labels = {},
                  const std::string& label_name = "period") {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path.string());
  const bool labels = !row_labels.empty();
  if (!header.empty()) {
    if (labels) out << label_name << ',';
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
  }
  std::string buf;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    buf.clear();
    if (labels) {
      buf += row_labels[static_cast<std::size_t>(r)];
      buf += ',';
    }
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) buf += ',';
      buf += format_double(values(r, c));
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw InputError("failed writing file: " + path.string());
}

}  // namespace fars::csv
