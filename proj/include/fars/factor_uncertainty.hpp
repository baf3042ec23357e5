#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"
#include "fars/factor_models.hpp"
#include "fars/parallel.hpp"

namespace fars {

/// Which estimator of the factor-score covariance kernel to use: the
/// period-specific cross-sectionally uncorrelated one, or the constant
/// adaptively thresholded one.
enum class GammaMode { BN, FPR };

inline std::string to_string(GammaMode m) { return m == GammaMode::BN ? "bn" : "fpr"; }

inline GammaMode parse_gamma_mode(const std::string& s) {
  if (s == "bn" || s == "BN") return GammaMode::BN;
  if (s == "fpr" || s == "FPR") return GammaMode::FPR;
  throw InputError("unknown gamma mode '" + s + "' (expected bn or fpr)");
}

struct GammaEstimate {
  Matrix value;                      // r x r, symmetric
  GammaMode mode = GammaMode::BN;
  std::optional<Index> time_index;   // set in BN mode; FPR is constant over time
};

/// (1/N) sum_i p_i p_i' e_it^2 at zero-based period t.
inline GammaEstimate gamma_bn(const Matrix& loadings, const Matrix& residuals, Index t) {
  if (loadings.rows() != residuals.cols()) throw InputError("gamma_bn: loadings and residuals disagree on N");
  if (t < 0 || t >= residuals.rows()) throw InputError("gamma_bn: period index out of range");
  const double n = static_cast<double>(loadings.rows());
  const Vector w = residuals.row(t).transpose().array().square();
  GammaEstimate g;
  g.value = loadings.transpose() * w.asDiagonal() * loadings / n;
  g.value = 0.5 * (g.value + g.value.transpose()).eval();
  g.mode = GammaMode::BN;
  g.time_index = t;
  return g;
}

/// Threshold scale 1/sqrt(N) + sqrt(log(N)/T).
inline double fpr_rate(Index n, Index t) {
  return 1.0 / std::sqrt(static_cast<double>(n)) +
         std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(t));
}

/// Residual covariance with entries below delta * rate * sd(e_i e_j) zeroed;
/// diagonal entries are always kept.
inline Matrix thresholded_residual_covariance(const Matrix& residuals, double delta) {
  if (!(delta > 0.0)) throw InputError("gamma_fpr: delta must be positive");
  const Index t = residuals.rows();
  const Index n = residuals.cols();
  if (t < 2) throw InputError("gamma_fpr: need at least 2 periods");
  const double td = static_cast<double>(t);
  Matrix sigma = residuals.transpose() * residuals / td;
  const Matrix sq = residuals.array().square().matrix();
  const Matrix fourth = sq.transpose() * sq / td;
  const double omega = fpr_rate(n, t);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const double var = std::max(0.0, fourth(i, j) - sigma(i, j) * sigma(i, j));
      if (std::abs(sigma(i, j)) < delta * omega * std::sqrt(var)) sigma(i, j) = 0.0;
    }
  }
  return sigma;
}

/// (1/N) sum_ij p_i p_j' s_ij 1{|s_ij| >= c_ij}.
inline GammaEstimate gamma_fpr(const Matrix& loadings, const Matrix& residuals, double delta) {
  if (loadings.rows() != residuals.cols()) throw InputError("gamma_fpr: loadings and residuals disagree on N");
  const Matrix s = thresholded_residual_covariance(residuals, delta);
  GammaEstimate g;
  g.value = loadings.transpose() * s * loadings / static_cast<double>(loadings.rows());
  g.value = 0.5 * (g.value + g.value.transpose()).eval();
  g.mode = GammaMode::FPR;
  return g;
}

/// One cross-sectional subsample: the retained columns and the model
/// re-estimated on them.
struct Subsample {
  std::vector<Index> columns;  // zero-based, ascending
  MldfmResult result;
};

namespace detail {

/// Unbiased integer in [0, n) from a 64-bit engine, independent of the
/// standard library's distribution implementations.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

inline Index subsample_block_size(double sample_size, Index block_size) {
  return static_cast<Index>(std::floor(sample_size * static_cast<double>(block_size) + 1e-9));
}

}  // namespace detail

/// Column draws for `n_samples` subsamples: within each block, floor(sample_size
/// * N_k) columns without replacement. Reproducible from `seed`.
inline std::vector<std::vector<Index>> draw_subsample_columns(const BlockSpec& spec, const FactorStructure& structure,
                                                              int n_samples, double sample_size, std::uint64_t seed) {
  if (n_samples < 1) throw InputError("n_samples must be >= 1");
  if (!(sample_size > 0.0 && sample_size <= 1.0)) throw InputError("sample_size must lie in (0, 1]");
  structure.validate(spec);
  for (int k = 1; k <= spec.block_count(); ++k) {
    int needed = 0;
    for (const auto& node : structure.nodes())
      if (std::find(node.blocks.begin(), node.blocks.end(), k) != node.blocks.end()) needed += node.count;
    const Index m = detail::subsample_block_size(sample_size, spec.size(k));
    if (m < std::max(needed, 1))
      throw InputError("subsample of block " + std::to_string(k) + " keeps " + std::to_string(m) +
                       " variable(s), fewer than the " + std::to_string(std::max(needed, 1)) +
                       " factor(s) loading on it");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Index>> draws;
  draws.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    std::vector<Index> cols;
    for (int k = 1; k <= spec.block_count(); ++k) {
      const Index nk = spec.size(k);
      const Index m = detail::subsample_block_size(sample_size, nk);
      std::vector<Index> pool(static_cast<std::size_t>(nk));
      for (Index i = 0; i < nk; ++i) pool[static_cast<std::size_t>(i)] = spec.start(k) + i;
      for (Index i = 0; i < m; ++i) {
        const auto j = i + static_cast<Index>(detail::uniform_index(rng, static_cast<std::uint64_t>(nk - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      }
      std::sort(pool.begin(), pool.begin() + m);
      cols.insert(cols.end(), pool.begin(), pool.begin() + m);
    }
    draws.push_back(std::move(cols));
  }
  return draws;
}

/// Block spec of a subsample drawn by draw_subsample_columns.
inline BlockSpec subsample_block_spec(const BlockSpec& spec, double sample_size) {
  std::vector<Index> ends;
  Index total = 0;
  for (int k = 1; k <= spec.block_count(); ++k) ends.push_back(total += detail::subsample_block_size(sample_size, spec.size(k)));
  return BlockSpec(std::move(ends));
}

/// Re-estimates the model on `n_samples` cross-sectional subsamples. The
/// estimations run in parallel; output order is the draw order.
inline std::vector<Subsample> subsample_estimates(const Matrix& x, const BlockSpec& spec,
                                                  const FactorStructure& structure, int n_samples,
                                                  double sample_size, const EstimationOptions& options,
                                                  std::uint64_t seed) {
  spec.check_matches(x.cols());
  auto draws = draw_subsample_columns(spec, structure, n_samples, sample_size, seed);
  const BlockSpec sub_spec = subsample_block_spec(spec, sample_size);
  std::vector<Subsample> out(draws.size());
  parallel_for(draws.size(), [&](std::size_t s) {
    Matrix xs(x.rows(), static_cast<Index>(draws[s].size()));
    for (std::size_t c = 0; c < draws[s].size(); ++c) xs.col(static_cast<Index>(c)) = x.col(draws[s][c]);
    out[s].columns = std::move(draws[s]);
    out[s].result = estimate_mldfm(xs, sub_spec, structure, options);
  });
  return out;
}

/// Sign-aligns subsample factors to the full-sample factors column by column.
inline Matrix align_factors(const Matrix& sub, const Matrix& full) {
  if (sub.rows() != full.rows() || sub.cols() != full.cols())
    throw InputError("align_factors: subsample and full-sample factors differ in shape");
  Matrix out = sub;
  for (Index c = 0; c < sub.cols(); ++c) {
    const Vector a = sub.col(c).array() - sub.col(c).mean();
    const Vector b = full.col(c).array() - full.col(c).mean();
    if (!(a.norm() > 0.0) || !(b.norm() > 0.0))
      throw NumericError("align_factors: factor column " + std::to_string(c + 1) + " has zero variance");
    if (a.dot(b) < 0.0) out.col(c) = -out.col(c);
  }
  return out;
}

inline Matrix align_factors(const MldfmResult& sub, const MldfmResult& full) {
  return align_factors(sub.factors, full.factors);
}

/// Per-period factor covariance with the subsampling correction.
struct MseSeries {
  std::vector<Matrix> per_t;
  int subsample_count = 0;
  Index subsample_dim = 0;
  GammaMode mode = GammaMode::BN;
  double delta = 0.0;
};

namespace detail {

inline Matrix symmetrize_and_floor(const Matrix& a, double floor = 1e-12) {
  Matrix s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.eigenvalues().minCoeff() >= floor) return s;
  const Vector lam = eig.eigenvalues().cwiseMax(floor);
  s = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

}  // namespace detail

/// Uncorrected finite-sample covariance (1/N) S^{-1} Gamma_t S^{-1},
/// S = P'P/N, for every period.
inline std::vector<Matrix> asymptotic_mse(const MldfmResult& full, GammaMode mode, double delta) {
  const Index n = full.loadings.rows();
  const double nd = static_cast<double>(n);
  const Matrix s = full.loadings.transpose() * full.loadings / nd;
  if (!detail::well_conditioned(s)) throw NumericError("corrected_mse: P'P is singular");
  const Matrix s_inv = Eigen::LLT<Matrix>(s).solve(Matrix::Identity(s.rows(), s.cols()));
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(full.periods()));
  std::optional<Matrix> constant;
  if (mode == GammaMode::FPR) constant = gamma_fpr(full.loadings, full.residuals, delta).value;
  for (Index t = 0; t < full.periods(); ++t) {
    const Matrix gamma = constant ? *constant : gamma_bn(full.loadings, full.residuals, t).value;
    Matrix m = s_inv * gamma * s_inv / nd;
    out.push_back(0.5 * (m + m.transpose()));
  }
  return out;
}

/// MSE*_t = asymptotic term + (N*/(N S)) sum_s (F*_t(s) - F_t)(F*_t(s) - F_t)',
/// with subsample factors sign-aligned to the full-sample factors.
inline MseSeries corrected_mse(const MldfmResult& full, std::span<const MldfmResult> subs, GammaMode mode,
                               double delta) {
  if (subs.empty()) throw InputError("corrected_mse: need at least one subsample");
  const Index r = full.factor_count();
  const Index t_count = full.periods();
  const Index n_star = subs.front().loadings.rows();
  for (const auto& s : subs)
    if (s.loadings.rows() != n_star || s.factors.rows() != t_count || s.factors.cols() != r)
      throw InputError("corrected_mse: subsamples disagree in shape");
  std::vector<Matrix> aligned;
  aligned.reserve(subs.size());
  for (const auto& s : subs) aligned.push_back(align_factors(s.factors, full.factors));

  MseSeries out;
  out.per_t = asymptotic_mse(full, mode, delta);
  out.subsample_count = static_cast<int>(subs.size());
  out.subsample_dim = n_star;
  out.mode = mode;
  out.delta = delta;
  const double scale = static_cast<double>(n_star) /
                       (static_cast<double>(full.loadings.rows()) * static_cast<double>(subs.size()));
  for (Index t = 0; t < t_count; ++t) {
    Matrix correction = Matrix::Zero(r, r);
    for (const auto& a : aligned) {
      const Vector d = (a.row(t) - full.factors.row(t)).transpose();
      correction.noalias() += d * d.transpose();
    }
    out.per_t[static_cast<std::size_t>(t)] =
        detail::symmetrize_and_floor(out.per_t[static_cast<std::size_t>(t)] + scale * correction);
  }
  return out;
}

inline MseSeries corrected_mse(const MldfmResult& full, std::span<const Subsample> subs, GammaMode mode,
                               double delta) {
  std::vector<MldfmResult> results;
  results.reserve(subs.size());
  for (const auto& s : subs) results.push_back(s.result);
  return corrected_mse(full, std::span<const MldfmResult>(results), mode, delta);
}

/// Inverse CDF of the chi-square distribution.
inline double chi2_quantile(int df, double alpha) {
  if (df < 1) throw InputError("chi2_quantile: degrees of freedom must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("chi2_quantile: alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), alpha);
}

/// Unit-sphere mesh from a regular grid on the surface of [-1, 1]^r with
/// `phi` subdivisions per edge, each point radially normalized.
inline Matrix hypercube_sphere_mesh(int r, int phi = 8) {
  if (r < 1 || phi < 1) throw InputError("hypercube mesh needs r >= 1 and phi >= 1");
  const int per_axis = phi + 1;
  std::vector<int> k(static_cast<std::size_t>(r), 0);
  std::vector<Vector> points;
  std::set<std::vector<long long>> seen;
  for (;;) {
    bool on_surface = false;
    for (int v : k) on_surface = on_surface || v == 0 || v == phi;
    if (on_surface) {
      Vector p(r);
      for (int d = 0; d < r; ++d) p(d) = -1.0 + 2.0 * k[static_cast<std::size_t>(d)] / phi;
      p.normalize();
      std::vector<long long> key(static_cast<std::size_t>(r));
      for (int d = 0; d < r; ++d) key[static_cast<std::size_t>(d)] = std::llround(p(d) * 1e12);
      if (seen.insert(key).second) points.push_back(p);
    }
    int d = r - 1;
    while (d >= 0 && k[static_cast<std::size_t>(d)] == phi) k[static_cast<std::size_t>(d--)] = 0;
    if (d < 0) break;
    ++k[static_cast<std::size_t>(d)];
  }
  (void)per_axis;
  Matrix out(static_cast<Index>(points.size()), r);
  for (std::size_t i = 0; i < points.size(); ++i) out.row(static_cast<Index>(i)) = points[i].transpose();
  return out;
}

/// Directions on the unit sphere used for an r-dimensional ellipsoid:
/// {-1, +1} for r = 1, 300 equally spaced angles for r = 2, the hypercube
/// mesh with phi = 8 beyond.
inline Matrix unit_sphere_points(int r) {
  if (r == 1) {
    Matrix u(2, 1);
    u << -1.0, 1.0;
    return u;
  }
  if (r == 2) {
    constexpr int z = 300;
    Matrix u(z, 2);
    for (int j = 0; j < z; ++j) {
      const double theta = 2.0 * std::numbers::pi * j / z;
      u(j, 0) = std::cos(theta);
      u(j, 1) = std::sin(theta);
    }
    return u;
  }
  return hypercube_sphere_mesh(r, 8);
}

/// Symmetric square root V diag(sqrt(lambda)) V' of an SPD matrix.
inline Matrix symmetric_sqrt(const Matrix& a) {
  if (a.rows() != a.cols()) throw NumericError("covariance matrix is not square");
  if (!a.allFinite()) throw NumericError("covariance matrix has non-finite entries");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw NumericError("covariance matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw NumericError("covariance matrix is not positive definite");
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

/// Points on the boundary {p : (p - c)' mse^{-1} (p - c) = chi2_r(alpha)}.
inline Matrix ellipsoid_points(const Vector& center, const Matrix& mse, double alpha) {
  const int r = static_cast<int>(center.size());
  if (r < 1 || mse.rows() != r || mse.cols() != r) throw InputError("ellipsoid_points: dimension mismatch");
  const double radius = std::sqrt(chi2_quantile(r, alpha));
  const Matrix l = symmetric_sqrt(mse);
  const Matrix u = unit_sphere_points(r);
  Matrix pts = (radius * u * l).rowwise() + center.transpose();  // l symmetric
  return pts;
}

/// Per-period stressed factor sets on the alpha-level ellipsoid boundary.
struct Scenario {
  std::vector<Matrix> per_t;  // each z x r
  double alpha = 0.95;
  double chi2_value = 0.0;
  Index z = 0;
  GammaMode mode = GammaMode::BN;
  double delta = 0.0;
  int subsample_count = 0;
  Index subsample_dim = 0;

  Index periods() const noexcept { return static_cast<Index>(per_t.size()); }
  Index dimension() const noexcept { return per_t.empty() ? 0 : per_t.front().cols(); }
};

inline Scenario create_scenario(const Matrix& factors, const MseSeries& mse, double alpha) {
  if (static_cast<Index>(mse.per_t.size()) != factors.rows())
    throw InputError("create_scenario: MSE series length differs from the number of periods");
  Scenario sc;
  sc.alpha = alpha;
  sc.chi2_value = chi2_quantile(static_cast<int>(factors.cols()), alpha);
  sc.mode = mse.mode;
  sc.delta = mse.delta;
  sc.subsample_count = mse.subsample_count;
  sc.subsample_dim = mse.subsample_dim;
  sc.per_t.resize(mse.per_t.size());
  parallel_for(mse.per_t.size(), [&](std::size_t t) {
    sc.per_t[t] = ellipsoid_points(factors.row(static_cast<Index>(t)).transpose(), mse.per_t[t], alpha);
  });
  sc.z = sc.per_t.empty() ? 0 : sc.per_t.front().rows();
  return sc;
}

inline Scenario create_scenario(const MldfmResult& full, std::span<const MldfmResult> subs, double alpha,
                                GammaMode mode = GammaMode::BN, double delta = 2.0) {
  return create_scenario(full.factors, corrected_mse(full, subs, mode, delta), alpha);
}

}  // namespace fars
