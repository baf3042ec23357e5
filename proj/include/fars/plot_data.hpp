#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <filesystem>
#include <ostream>
#include <string>

#include "fars/csv.hpp"
#include "fars/error.hpp"

namespace fars {

enum class PlotKind { Factors, Quantiles, Density, Risk };

inline PlotKind parse_plot_kind(const std::string& s) {
  if (s == "factors") return PlotKind::Factors;
  if (s == "quantiles") return PlotKind::Quantiles;
  if (s == "density") return PlotKind::Density;
  if (s == "risk") return PlotKind::Risk;
  throw InputError("unknown plot kind '" + s + "' (expected factors, quantiles, density or risk)");
}

inline std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::Factors: return "factors";
    case PlotKind::Quantiles: return "quantiles";
    case PlotKind::Density: return "density";
    case PlotKind::Risk: return "risk";
  }
  return "?";
}

namespace detail {

inline bool factor_name(const std::string& s) {
  if (s.size() < 2) return false;
  if (s[0] == 'G') {
    for (std::size_t i = 1; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  }
  if (s[0] != 'F') return false;
  const auto us = s.find('_');
  if (us == std::string::npos || us == 1 || us + 1 == s.size()) return false;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (i != us && !std::isdigit(static_cast<unsigned char>(s[i])) && s[i] != '-') return false;
  return true;
}

}  // namespace detail

/// Recognizes an artifact from its header.
inline std::optional<PlotKind> classify_artifact(const csv::Table& t) {
  const auto& h = t.header;
  if (h.empty() || t.row_labels.size() != static_cast<std::size_t>(t.values.rows())) return std::nullopt;
  if (h.size() == 1 && h[0] == "risk") return PlotKind::Risk;
  auto all = [&](auto pred) { return std::all_of(h.begin(), h.end(), pred); };
  if (all([](const std::string& s) { return csv::parse_double(s).has_value(); })) return PlotKind::Density;
  if (all([](const std::string& s) { return s.size() > 1 && s[0] == 'q' && csv::parse_double(s.substr(1)); }))
    return PlotKind::Quantiles;
  if (all(detail::factor_name)) return PlotKind::Factors;
  return std::nullopt;
}

/// Long-format CSV of an artifact: (period, series, value) rows, or
/// (period, abscissa, density) for density grids. Returns the row count.
inline std::size_t plot_data(const std::filesystem::path& artifact, PlotKind kind, std::ostream& out) {
  if (!std::filesystem::is_regular_file(artifact)) throw InputError("artifact not found: " + artifact.string());
  const auto t = csv::read(artifact, true, true);
  const auto found = classify_artifact(t);
  if (!found) throw InputError(artifact.string() + " is not a factors, quantiles, density or risk artifact");
  if (*found != kind)
    throw InputError(artifact.string() + " holds " + to_string(*found) + ", not " + to_string(kind));
  out << (kind == PlotKind::Density ? "period,abscissa,density\n" : "period,series,value\n");
  std::size_t rows = 0;
  std::string line;
  for (Eigen::Index r = 0; r < t.values.rows(); ++r)
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
      line = t.row_labels[static_cast<std::size_t>(r)];
      line += ',';
      line += t.header[static_cast<std::size_t>(c)];
      line += ',';
      line += csv::format_double(t.values(r, c));
      line += '\n';
      out << line;
      ++rows;
    }
  return rows;
}

}  // namespace fars
