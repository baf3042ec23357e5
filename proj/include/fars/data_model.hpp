#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fars/csv.hpp"
#include "fars/error.hpp"

namespace fars {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// T x N panel of observations, optionally labelled by period and variable.
class Panel {
 public:
  explicit Panel(Matrix values, std::optional<std::vector<std::string>> dates = std::nullopt,
                 std::optional<std::vector<std::string>> var_names = std::nullopt)
      : values_(std::move(values)), dates_(std::move(dates)), var_names_(std::move(var_names)) {
    if (values_.rows() < 2) throw InputError("panel needs at least 2 periods, got " + std::to_string(values_.rows()));
    if (values_.cols() < 1) throw InputError("panel needs at least 1 variable");
    if (!values_.allFinite()) throw InputError("panel contains missing or non-finite values");
    if (dates_ && static_cast<Index>(dates_->size()) != values_.rows())
      throw InputError("dates length " + std::to_string(dates_->size()) + " does not match T=" +
                       std::to_string(values_.rows()));
    if (var_names_ && static_cast<Index>(var_names_->size()) != values_.cols())
      throw InputError("var_names length " + std::to_string(var_names_->size()) + " does not match N=" +
                       std::to_string(values_.cols()));
  }

  const Matrix& values() const noexcept { return values_; }
  Index periods() const noexcept { return values_.rows(); }
  Index variables() const noexcept { return values_.cols(); }
  const std::optional<std::vector<std::string>>& dates() const noexcept { return dates_; }
  const std::optional<std::vector<std::string>>& var_names() const noexcept { return var_names_; }

  std::string variable_label(Index i) const {
    if (var_names_) return (*var_names_)[static_cast<std::size_t>(i)];
    return "column " + std::to_string(i + 1);
  }

  /// Same labels, different values (shape must match).
  Panel with_values(Matrix values) const { return Panel(std::move(values), dates_, var_names_); }

  /// Keeps only the listed columns, in the given order.
  Panel select_columns(const std::vector<Index>& columns) const {
    Matrix sub(values_.rows(), static_cast<Index>(columns.size()));
    std::optional<std::vector<std::string>> names;
    if (var_names_) names.emplace();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      sub.col(static_cast<Index>(c)) = values_.col(columns[c]);
      if (names) names->push_back((*var_names_)[static_cast<std::size_t>(columns[c])]);
    }
    return Panel(std::move(sub), dates_, std::move(names));
  }

 private:
  Matrix values_;
  std::optional<std::vector<std::string>> dates_;
  std::optional<std::vector<std::string>> var_names_;
};

/// Partition of the N columns into K consecutive blocks, given by the
/// 1-based index of each block's last column (e.g. {63, 311, 519}).
class BlockSpec {
 public:
  explicit BlockSpec(std::vector<Index> block_end_indices) : ends_(std::move(block_end_indices)) {
    if (ends_.empty()) throw InputError("block spec needs at least one block");
    Index prev = 0;
    for (Index e : ends_) {
      if (e <= prev) throw InputError("block end indices must be strictly increasing and positive");
      prev = e;
    }
  }

  /// Single block covering all N variables.
  static BlockSpec single(Index n) { return BlockSpec({n}); }

  int block_count() const noexcept { return static_cast<int>(ends_.size()); }
  Index total() const noexcept { return ends_.back(); }
  const std::vector<Index>& block_end_indices() const noexcept { return ends_; }

  /// Zero-based first column of block k (k is 1-based).
  Index start(int k) const { return k == 1 ? 0 : ends_[static_cast<std::size_t>(k - 2)]; }
  Index size(int k) const { return ends_[static_cast<std::size_t>(k - 1)] - start(k); }

  /// 1-based block of zero-based column i.
  int block_of(Index i) const {
    const auto it = std::upper_bound(ends_.begin(), ends_.end(), i);
    return static_cast<int>(it - ends_.begin()) + 1;
  }

  /// Zero-based column indices of all blocks in `blocks`, ascending.
  std::vector<Index> columns(const std::vector<int>& blocks) const {
    std::vector<Index> cols;
    for (int k : blocks)
      for (Index i = start(k); i < start(k) + size(k); ++i) cols.push_back(i);
    std::sort(cols.begin(), cols.end());
    return cols;
  }

  void check_matches(Index n) const {
    if (total() != n)
      throw InputError("last block end index " + std::to_string(total()) + " does not equal N=" + std::to_string(n));
  }

 private:
  std::vector<Index> ends_;
};

/// One level-node of the factor hierarchy: the blocks it loads on and how
/// many factors it carries.
struct FactorNode {
  std::vector<int> blocks;  // sorted, 1-based
  int count = 0;

  /// "1-2-3" style label.
  std::string label() const {
    std::string s;
    for (std::size_t i = 0; i < blocks.size(); ++i) s += (i ? "-" : "") + std::to_string(blocks[i]);
    return s;
  }
};

/// Ordered node hierarchy: global first, then larger overlaps, then
/// block-specific nodes; lexicographic on the block set within a size.
class FactorStructure {
 public:
  FactorStructure() = default;

  explicit FactorStructure(std::vector<FactorNode> nodes) {
    for (auto& n : nodes) {
      if (n.count < 0) throw InputError("negative factor count for node " + n.label());
      if (n.blocks.empty()) throw InputError("factor node with an empty block set");
      std::sort(n.blocks.begin(), n.blocks.end());
      if (std::adjacent_find(n.blocks.begin(), n.blocks.end()) != n.blocks.end())
        throw InputError("repeated block in node " + n.label());
      if (n.blocks.front() < 1) throw InputError("block indices are 1-based, got node " + n.label());
    }
    std::sort(nodes.begin(), nodes.end(), [](const FactorNode& a, const FactorNode& b) {
      if (a.blocks.size() != b.blocks.size()) return a.blocks.size() > b.blocks.size();
      return a.blocks < b.blocks;
    });
    for (std::size_t i = 1; i < nodes.size(); ++i)
      if (nodes[i].blocks == nodes[i - 1].blocks) throw InputError("duplicate factor node " + nodes[i].label());
    for (auto& n : nodes)
      if (n.count > 0) nodes_.push_back(std::move(n));
    if (factor_count() < 1) throw InputError("factor structure has no factors");
  }

  /// Builds the structure from the usual global / middle-layer / local counts.
  /// Middle-layer keys are "1-3" style block lists.
  static FactorStructure from_counts(int block_count, int global, const std::vector<int>& local = {},
                                     const std::map<std::string, int>& middle_layer = {}) {
    if (block_count < 1) throw InputError("block count must be >= 1");
    std::vector<FactorNode> nodes;
    FactorNode g;
    for (int k = 1; k <= block_count; ++k) g.blocks.push_back(k);
    g.count = global;
    nodes.push_back(g);
    for (const auto& [key, count] : middle_layer) nodes.push_back({parse_block_list(key), count});
    if (!local.empty()) {
      if (static_cast<int>(local.size()) != block_count)
        throw InputError("local factor counts must have one entry per block (" + std::to_string(block_count) + ")");
      if (block_count == 1) {
        nodes.front().count += local.front();
      } else {
        for (int k = 1; k <= block_count; ++k) nodes.push_back({{k}, local[static_cast<std::size_t>(k - 1)]});
      }
    }
    return FactorStructure(std::move(nodes));
  }

  static std::vector<int> parse_block_list(const std::string& key) {
    std::vector<int> blocks;
    std::size_t pos = 0;
    while (pos <= key.size()) {
      const auto dash = key.find('-', pos);
      const std::string part = key.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
      try {
        std::size_t used = 0;
        const int b = std::stoi(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
        blocks.push_back(b);
      } catch (const std::exception&) {
        throw InputError("malformed block group '" + key + "' (expected e.g. \"1-3\")");
      }
      if (dash == std::string::npos) break;
      pos = dash + 1;
    }
    return blocks;
  }

  const std::vector<FactorNode>& nodes() const noexcept { return nodes_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  int factor_count() const noexcept {
    int r = 0;
    for (const auto& n : nodes_) r += n.count;
    return r;
  }

  /// First factor column of node j.
  int offset(std::size_t j) const {
    int off = 0;
    for (std::size_t i = 0; i < j; ++i) off += nodes_[i].count;
    return off;
  }

  /// Node owning factor column c.
  std::size_t node_of_column(int c) const {
    for (std::size_t j = 0; j < nodes_.size(); ++j) {
      if (c < nodes_[j].count) return j;
      c -= nodes_[j].count;
    }
    throw InputError("factor column out of range");
  }

  /// True when node `j` loads on every block of node `i` and is a strict
  /// superset, i.e. sits above it in the hierarchy.
  bool is_ancestor(std::size_t j, std::size_t i) const {
    const auto& a = nodes_[j].blocks;
    const auto& b = nodes_[i].blocks;
    return a.size() > b.size() && std::includes(a.begin(), a.end(), b.begin(), b.end());
  }

  /// Column names: G1.. for the all-blocks node, F13_1 style otherwise.
  std::vector<std::string> column_names(int block_count) const {
    std::vector<std::string> names;
    const bool wide = block_count > 9;
    for (const auto& n : nodes_) {
      const bool global = static_cast<int>(n.blocks.size()) == block_count;
      std::string stem;
      if (global) {
        stem = "G";
      } else {
        stem = "F";
        for (std::size_t i = 0; i < n.blocks.size(); ++i)
          stem += (wide && i ? "-" : "") + std::to_string(n.blocks[i]);
        stem += "_";
      }
      for (int c = 1; c <= n.count; ++c) names.push_back(stem + std::to_string(c));
    }
    return names;
  }

  void validate(const BlockSpec& spec) const {
    for (const auto& n : nodes_)
      if (n.blocks.back() > spec.block_count())
        throw InputError("factor node " + n.label() + " references a block beyond K=" +
                         std::to_string(spec.block_count()));
  }

 private:
  std::vector<FactorNode> nodes_;
};

/// N x r zero-restriction pattern of the loading matrix.
struct LoadingPattern {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;

  Index variables() const noexcept { return allowed.rows(); }
  Index factors() const noexcept { return allowed.cols(); }

  /// Allowed factor columns of variable i.
  std::vector<Index> columns_for(Index i) const {
    std::vector<Index> cols;
    for (Index j = 0; j < allowed.cols(); ++j)
      if (allowed(i, j)) cols.push_back(j);
    return cols;
  }

  static LoadingPattern all_true(Index n, Index r) {
    LoadingPattern p;
    p.allowed.setConstant(n, r, true);
    return p;
  }
};

inline LoadingPattern build_pattern(const BlockSpec& spec, const FactorStructure& structure) {
  structure.validate(spec);
  const Index n = spec.total();
  LoadingPattern p;
  p.allowed.setConstant(n, structure.factor_count(), false);
  int col = 0;
  for (const auto& node : structure.nodes()) {
    for (int c = 0; c < node.count; ++c, ++col)
      for (int k : node.blocks)
        p.allowed.block(spec.start(k), col, spec.size(k), 1).setConstant(true);
  }
  return p;
}

/// Reads a panel from CSV. With `has_dates` the first column holds period
/// labels; with `has_header` the first row holds variable names.
inline Panel load_panel(const std::filesystem::path& path, bool has_dates, bool has_header) {
  auto table = csv::read(path, has_dates, has_header);
  std::optional<std::vector<std::string>> dates;
  std::optional<std::vector<std::string>> names;
  if (has_dates) dates = std::move(table.row_labels);
  if (has_header) names = std::move(table.header);
  return Panel(std::move(table.values), std::move(dates), std::move(names));
}

/// Column-wise z-scores with the T-1 divisor.
inline Panel standardize(const Panel& panel) {
  Matrix x = panel.values();
  const double t = static_cast<double>(x.rows());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    x.col(j).array() -= mean;
    const double sd = std::sqrt(x.col(j).squaredNorm() / (t - 1.0));
    if (!(sd > 1e-14 * std::max(1.0, std::abs(mean))))
      throw InputError("constant column cannot be standardized: " + panel.variable_label(j));
    x.col(j) /= sd;
  }
  return panel.with_values(std::move(x));
}

}  // namespace fars
