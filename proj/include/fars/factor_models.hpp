#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"

namespace fars {

enum class InitMethod { CCA, PCA };

inline std::string to_string(InitMethod m) { return m == InitMethod::CCA ? "CCA" : "PCA"; }

inline InitMethod parse_init_method(const std::string& s) {
  if (s == "CCA" || s == "cca" || s == "0") return InitMethod::CCA;
  if (s == "PCA" || s == "pca" || s == "PC" || s == "pc" || s == "1") return InitMethod::PCA;
  throw InputError("unknown initialization method '" + s + "' (expected CCA or PCA)");
}

/// Factors, loadings and residuals of a fitted factor model.
struct FactorEstimate {
  Matrix factors;    // T x r
  Matrix loadings;   // N x r
  Matrix residuals;  // T x N
};

/// Output of the multi-level estimator.
struct MldfmResult {
  Matrix factors;
  Matrix loadings;
  Matrix residuals;
  InitMethod method = InitMethod::CCA;
  int iterations = 0;
  std::vector<double> rss_trace;
  bool converged = true;
  FactorStructure structure;
  BlockSpec blocks = BlockSpec::single(1);

  Index periods() const noexcept { return factors.rows(); }
  Index factor_count() const noexcept { return factors.cols(); }
  double rss() const { return residuals.squaredNorm(); }
  Matrix common_component() const { return factors * loadings.transpose(); }
  std::vector<std::string> factor_names() const { return structure.column_names(blocks.block_count()); }
};

/// Options of the alternating least-squares loop.
struct EstimationOptions {
  InitMethod method = InitMethod::CCA;
  double tol = 1e-6;
  int max_iter = 1000;
};

namespace detail {

/// Flips each factor column whose loading column sums to a negative value.
inline void apply_sign_convention(Matrix& factors, Matrix& loadings) {
  for (Index c = 0; c < factors.cols(); ++c) {
    if (loadings.col(c).sum() < 0.0) {
      factors.col(c) = -factors.col(c);
      loadings.col(c) = -loadings.col(c);
    }
  }
}

/// sqrt(T) times the leading `count` left singular vectors of `data`.
inline Matrix principal_factors(const Matrix& data, int count, const std::string& what) {
  const Index t = data.rows();
  if (count < 1) return Matrix(t, 0);
  if (count > std::min(t, data.cols()))
    throw NumericError(what + ": requested " + std::to_string(count) + " factor(s) but the data has dimension " +
                       std::to_string(t) + "x" + std::to_string(data.cols()));
  Eigen::BDCSVD<Matrix> svd(data, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  if (!(s(0) > 0.0) || !(s(count - 1) > 1e-10 * s(0)))
    throw NumericError(what + ": residual data has fewer than " + std::to_string(count) +
                       " non-degenerate principal directions");
  return std::sqrt(static_cast<double>(t)) * svd.matrixU().leftCols(count);
}

/// Orthonormal basis of the leading principal subspace of `data`, at most
/// `max_dim` columns, dropping numerically null directions.
inline Matrix principal_basis(const Matrix& data, int max_dim) {
  Eigen::BDCSVD<Matrix> svd(data, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  Index keep = 0;
  const Index limit = std::min<Index>(max_dim, s.size());
  while (keep < limit && s(0) > 0.0 && s(keep) > 1e-10 * s(0)) ++keep;
  return svd.matrixU().leftCols(keep);
}

/// Generalized (MAXVAR) canonical variates: leading eigenvectors of the sum
/// of projectors onto each block's principal subspace, scaled by sqrt(T).
inline Matrix maxvar_factors(const Matrix& residual, const BlockSpec& spec, const FactorNode& node) {
  const Index t = residual.rows();
  std::vector<Matrix> bases;
  Index total = 0;
  for (int k : node.blocks) {
    bases.push_back(principal_basis(residual.middleCols(spec.start(k), spec.size(k)), node.count + 2));
    total += bases.back().cols();
  }
  if (total < node.count)
    throw NumericError("CCA initialization of node " + node.label() + ": block subspaces span only " +
                       std::to_string(total) + " dimension(s), fewer than the " + std::to_string(node.count) +
                       " requested factor(s)");
  Matrix stacked(t, total);
  Index col = 0;
  for (const auto& b : bases) {
    stacked.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  // Left singular vectors of [U_1 ... U_B] are the eigenvectors of sum U_b U_b'.
  Eigen::BDCSVD<Matrix> svd(stacked, Eigen::ComputeThinU);
  if (!(svd.singularValues()(node.count - 1) > 1e-10 * svd.singularValues()(0)))
    throw NumericError("CCA initialization of node " + node.label() + ": degenerate canonical variates");
  return std::sqrt(static_cast<double>(t)) * svd.matrixU().leftCols(node.count);
}

/// True when the symmetric positive semidefinite Gram matrix is
/// numerically invertible (eigenvalue ratio above 1e-12).
inline bool well_conditioned(const Matrix& gram) {
  if (gram.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  return hi > 0.0 && eig.eigenvalues().minCoeff() > 1e-12 * hi;
}

/// Residuals of the columns of `y` after OLS on the columns of `regressors`.
inline Matrix residualize(const Matrix& y, const Matrix& regressors) {
  if (regressors.cols() == 0) return y;
  Eigen::ColPivHouseholderQR<Matrix> qr(regressors);
  return y - regressors * qr.solve(y);
}

}  // namespace detail

/// Principal-components estimate: factors are sqrt(T) times the leading
/// eigenvectors of XX', loadings P' = F'X / T.
inline FactorEstimate pc_estimate(const Matrix& x, int r) {
  const Index t = x.rows();
  if (r < 1 || r > std::min(t, x.cols()))
    throw InputError("number of factors must satisfy 1 <= r <= min(T, N); got r=" + std::to_string(r));
  if (!x.allFinite()) throw InputError("pc_estimate: data contains non-finite values");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(x * x.transpose());
  if (eig.info() != Eigen::Success) throw NumericError("pc_estimate: eigendecomposition failed");
  const auto& values = eig.eigenvalues();  // ascending
  const double top = values(t - 1);
  if (!(top > 0.0) || !(values(t - r) > 1e-10 * top))
    throw NumericError("pc_estimate: XX' has fewer than " + std::to_string(r) + " non-zero eigenvalues");
  FactorEstimate est;
  est.factors.resize(t, r);
  for (int c = 0; c < r; ++c) est.factors.col(c) = eig.eigenvectors().col(t - 1 - c);
  est.factors *= std::sqrt(static_cast<double>(t));
  est.loadings = x.transpose() * est.factors / static_cast<double>(t);
  detail::apply_sign_convention(est.factors, est.loadings);
  est.residuals = x - est.factors * est.loadings.transpose();
  return est;
}

/// Factor step of the alternation: F = X P (P'P)^{-1}.
inline Matrix update_factors(const Matrix& x, const Matrix& loadings) {
  if (x.cols() != loadings.rows()) throw InputError("update_factors: shape mismatch between X and P");
  const Matrix ptp = loadings.transpose() * loadings;
  if (!detail::well_conditioned(ptp))
    throw NumericError("update_factors: P'P is singular; consider extracting fewer factors");
  return Eigen::LLT<Matrix>(ptp).solve(loadings.transpose() * x.transpose()).transpose();
}

/// Loading step: per-variable OLS of x_i on its allowed factor columns.
/// Disallowed entries are exactly zero.
inline Matrix update_loadings(const Matrix& x, const Matrix& factors, const LoadingPattern& pattern,
                              const Panel* labels = nullptr) {
  const Index n = x.cols();
  const Index r = factors.cols();
  if (pattern.variables() != n || pattern.factors() != r || factors.rows() != x.rows())
    throw InputError("update_loadings: shape mismatch");
  Matrix loadings = Matrix::Zero(n, r);
  // Variables sharing a pattern row share one factorization.
  std::map<std::vector<Index>, std::vector<Index>> groups;
  for (Index i = 0; i < n; ++i) groups[pattern.columns_for(i)].push_back(i);
  for (const auto& [cols, vars] : groups) {
    if (cols.empty()) continue;
    Matrix f(factors.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) f.col(static_cast<Index>(c)) = factors.col(cols[c]);
    const Matrix gram = f.transpose() * f;
    if (!detail::well_conditioned(gram)) {
      const Index v = vars.front();
      throw NumericError("update_loadings: allowed factors are rank deficient for variable " +
                         (labels ? labels->variable_label(v) : "column " + std::to_string(v + 1)));
    }
    Matrix y(x.rows(), static_cast<Index>(vars.size()));
    for (std::size_t k = 0; k < vars.size(); ++k) y.col(static_cast<Index>(k)) = x.col(vars[k]);
    const Matrix b = Eigen::LLT<Matrix>(gram).solve(f.transpose() * y);  // |cols| x |vars|
    for (std::size_t k = 0; k < vars.size(); ++k)
      for (std::size_t c = 0; c < cols.size(); ++c)
        loadings(vars[k], cols[c]) = b(static_cast<Index>(c), static_cast<Index>(k));
  }
  return loadings;
}

/// Residual sum of squares ||X - F P'||_F^2.
inline double rss(const Matrix& x, const Matrix& factors, const Matrix& loadings) {
  if (factors.rows() != x.rows() || loadings.rows() != x.cols() || factors.cols() != loadings.cols())
    throw InputError("rss: shape mismatch");
  return (x - factors * loadings.transpose()).squaredNorm();
}

/// Top-down initial factors: each node is extracted from the current
/// residual data of its blocks and then filtered out of those blocks.
inline Matrix initialize_factors(const Matrix& x, const BlockSpec& spec, const FactorStructure& structure,
                                 InitMethod method) {
  spec.check_matches(x.cols());
  structure.validate(spec);
  const Index t = x.rows();
  Matrix residual = x;
  Matrix factors(t, structure.factor_count());
  for (std::size_t j = 0; j < structure.node_count(); ++j) {
    const auto& node = structure.nodes()[j];
    const auto cols = spec.columns(node.blocks);
    Matrix nf;
    if (method == InitMethod::CCA && node.blocks.size() >= 2) {
      nf = detail::maxvar_factors(residual, spec, node);
    } else {
      Matrix pooled(t, static_cast<Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) pooled.col(static_cast<Index>(c)) = residual.col(cols[c]);
      nf = detail::principal_factors(pooled, node.count, "initialization of node " + node.label());
    }
    factors.middleCols(structure.offset(j), node.count) = nf;
    for (int k : node.blocks) {
      auto block = residual.middleCols(spec.start(k), spec.size(k));
      block = detail::residualize(block, nf);
    }
  }
  return factors;
}

inline Matrix initialize_factors(const Panel& panel, const BlockSpec& spec, const FactorStructure& structure,
                                 InitMethod method) {
  return initialize_factors(panel.values(), spec, structure, method);
}

/// Result of the factor/loading alternation.
struct AlternationResult {
  Matrix factors;
  Matrix loadings;
  int iterations = 0;
  std::vector<double> rss_trace;
  bool converged = false;
};

/// Alternates update_factors / update_loadings from `initial_factors` until
/// the relative RSS change drops below `tol` or `max_iter` rounds ran.
/// rss_trace[0] is the fit of the initial factors with their optimal loadings.
inline AlternationResult alternate_least_squares(const Matrix& x, const LoadingPattern& pattern,
                                                 const Matrix& initial_factors, double tol, int max_iter) {
  if (!(tol > 0.0)) throw InputError("tolerance must be positive");
  if (max_iter < 0) throw InputError("max_iter must be non-negative");
  AlternationResult out;
  out.factors = initial_factors;
  out.loadings = update_loadings(x, out.factors, pattern);
  out.rss_trace.push_back(rss(x, out.factors, out.loadings));
  for (int it = 1; it <= max_iter; ++it) {
    out.factors = update_factors(x, out.loadings);
    out.loadings = update_loadings(x, out.factors, pattern);
    const double prev = out.rss_trace.back();
    const double cur = rss(x, out.factors, out.loadings);
    out.rss_trace.push_back(cur);
    out.iterations = it;
    if (std::abs(cur - prev) / std::max(prev, 1.0) < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// Identifies the multi-level factors: Gram-Schmidt across levels (each node
/// residualized on the factors of the nodes above it), then within each node
/// the principal components of its common component, scaled so F'F/T = I.
inline MldfmResult orthonormalize_levels(const Matrix& x, MldfmResult result) {
  const auto& structure = result.structure;
  const LoadingPattern pattern = build_pattern(result.blocks, structure);
  const Index t = result.factors.rows();
  Matrix& f = result.factors;

  for (std::size_t i = 0; i < structure.node_count(); ++i) {
    std::vector<Index> above;
    for (std::size_t j = 0; j < i; ++j)
      if (structure.is_ancestor(j, i))
        for (int c = 0; c < structure.nodes()[j].count; ++c) above.push_back(structure.offset(j) + c);
    if (above.empty()) continue;
    Matrix a(t, static_cast<Index>(above.size()));
    for (std::size_t c = 0; c < above.size(); ++c) a.col(static_cast<Index>(c)) = f.col(above[c]);
    auto node_cols = f.middleCols(structure.offset(i), structure.nodes()[i].count);
    node_cols = detail::residualize(node_cols, a);
  }
  Matrix p = update_loadings(x, f, pattern);

  for (std::size_t i = 0; i < structure.node_count(); ++i) {
    const auto& node = structure.nodes()[i];
    const Index off = structure.offset(i);
    const auto vars = result.blocks.columns(node.blocks);
    Matrix m(static_cast<Index>(vars.size()), node.count);
    for (std::size_t v = 0; v < vars.size(); ++v) m.row(static_cast<Index>(v)) = p.block(vars[v], off, 1, node.count);
    // Common component C = F_node M'. With F_node = Q R, C = Q (R M').
    Eigen::HouseholderQR<Matrix> qr(f.middleCols(off, node.count));
    const Matrix q = qr.householderQ() * Matrix::Identity(t, node.count);
    const Matrix rm = qr.matrixQR().topRows(node.count).triangularView<Eigen::Upper>() * m.transpose();
    Eigen::JacobiSVD<Matrix> svd(rm, Eigen::ComputeFullU);
    const auto& s = svd.singularValues();
    if (!(s(0) > 0.0) || !(s(node.count - 1) > 1e-12 * s(0)))
      throw NumericError("normalization: node " + node.label() + " has a degenerate common component");
    f.middleCols(off, node.count) = std::sqrt(static_cast<double>(t)) * q * svd.matrixU();
  }

  result.loadings = update_loadings(x, f, pattern);
  detail::apply_sign_convention(result.factors, result.loadings);
  result.residuals = x - result.factors * result.loadings.transpose();
  return result;
}

/// Multi-level dynamic factor model by sequential least squares. The
/// single-block single-node case is the plain PC estimator (0 iterations).
inline MldfmResult estimate_mldfm(const Matrix& x, const BlockSpec& spec, const FactorStructure& structure,
                                  const EstimationOptions& options = {}) {
  spec.check_matches(x.cols());
  structure.validate(spec);
  const int r = structure.factor_count();
  if (r > std::min(x.rows(), x.cols()))
    throw InputError("total factor count r=" + std::to_string(r) + " exceeds min(T, N)");

  MldfmResult result;
  result.method = options.method;
  result.structure = structure;
  result.blocks = spec;

  if (spec.block_count() == 1 && structure.node_count() == 1) {
    auto pc = pc_estimate(x, r);
    result.factors = std::move(pc.factors);
    result.loadings = std::move(pc.loadings);
    result.residuals = std::move(pc.residuals);
    result.iterations = 0;
    result.rss_trace = {result.residuals.squaredNorm()};
    result.converged = true;
    return result;
  }

  const LoadingPattern pattern = build_pattern(spec, structure);
  const Matrix initial = initialize_factors(x, spec, structure, options.method);
  auto alt = alternate_least_squares(x, pattern, initial, options.tol, options.max_iter);
  result.factors = std::move(alt.factors);
  result.loadings = std::move(alt.loadings);
  result.iterations = alt.iterations;
  result.rss_trace = std::move(alt.rss_trace);
  result.converged = alt.converged;
  return orthonormalize_levels(x, std::move(result));
}

inline MldfmResult estimate_mldfm(const Panel& panel, const BlockSpec& spec, const FactorStructure& structure,
                                  const EstimationOptions& options = {}) {
  return estimate_mldfm(panel.values(), spec, structure, options);
}

}  // namespace fars
