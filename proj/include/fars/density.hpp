#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"
#include "fars/parallel.hpp"
#include "fars/skewt.hpp"

namespace fars {

struct DensityOptions {
  Index est_points = 512;
  Index random_samples = 5000;
  double lo = -10.0;
  double hi = 10.0;
  std::uint64_t seed = 42;
};

struct DensityResult {
  Vector grid;
  Matrix densities;  // rows x est_points
  Matrix samples;    // rows x random_samples
  std::vector<SkewTParams> params;
  Vector fit_loss;
  std::vector<int> iterations;
  std::string optimization = "nelder-mead";
  std::vector<std::string> errors;  // "row R: message" for rows that could not be fitted
  std::vector<bool> row_ok;
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 0.0;

  Index rows() const noexcept { return densities.rows(); }
};

/// Uniform in (0, 1) from the top 53 bits of a 64-bit draw, offset by half a
/// step so neither end is reachable.
inline double open_unit(std::uint64_t x) { return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53; }

/// Seeded inverse-CDF draws from a fitted skew-t, in draw order.
inline Vector skewt_sample(const SkewTParams& p, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> u(static_cast<std::size_t>(n));
  for (auto& v : u) v = open_unit(rng());
  const auto z = StandardSkewT(p.shape, p.dof).tabulated_quantiles(u);
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = p.location + p.scale * z[static_cast<std::size_t>(i)];
  return out;
}

/// Fits a skew-t to every row of quantile forecasts, evaluates it on a
/// uniform grid and draws seeded samples (row m uses seed + m).
inline DensityResult compute_density(const Matrix& quantiles, const std::array<double, 5>& levels,
                                     const DensityOptions& opt = {}) {
  if (quantiles.cols() != 5) throw InputError("quantile matrix must have five columns");
  if (!(opt.lo < opt.hi) || !std::isfinite(opt.lo) || !std::isfinite(opt.hi))
    throw InputError("support must satisfy lo < hi");
  if (opt.est_points < 2) throw InputError("est_points must be >= 2");
  if (opt.random_samples < 1) throw InputError("random_samples must be >= 1");
  if (!quantiles.allFinite()) throw InputError("quantile matrix has non-finite entries");

  const Index m = quantiles.rows();
  DensityResult out;
  out.grid = Vector::LinSpaced(opt.est_points, opt.lo, opt.hi);
  out.densities = Matrix::Zero(m, opt.est_points);
  out.samples = Matrix::Zero(m, opt.random_samples);
  out.params.resize(static_cast<std::size_t>(m));
  out.fit_loss = Vector::Zero(m);
  out.iterations.assign(static_cast<std::size_t>(m), 0);
  out.row_ok.assign(static_cast<std::size_t>(m), true);
  out.seed = opt.seed;
  out.lo = opt.lo;
  out.hi = opt.hi;
  std::vector<std::string> row_errors(static_cast<std::size_t>(m));

  parallel_for(static_cast<std::size_t>(m), [&](std::size_t row) {
    const auto r = static_cast<Index>(row);
    const Vector qrow = quantiles.row(r).transpose();
    try {
      const auto fit = fit_skewt(qrow, levels);
      out.params[row] = fit.params;
      out.fit_loss(r) = fit.loss;
      out.iterations[row] = fit.iterations;
      const StandardSkewT d(fit.params.shape, fit.params.dof);
      for (Index g = 0; g < opt.est_points; ++g)
        out.densities(r, g) = d.pdf((out.grid(g) - fit.params.location) / fit.params.scale) / fit.params.scale;
      out.samples.row(r) = skewt_sample(fit.params, opt.random_samples, opt.seed + row).transpose();
    } catch (const NumericError& e) {
      // A point mass: no density, every draw equal to the common value.
      const double c = qrow(2);
      out.row_ok[row] = false;
      out.params[row] = {c, kMinScale, 0.0, kMaxDof};
      out.samples.row(r).setConstant(c);
      row_errors[row] = "row " + std::to_string(row + 1) + ": " + e.what();
    }
  });
  for (auto& e : row_errors)
    if (!e.empty()) out.errors.push_back(std::move(e));
  return out;
}

/// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> s, double qtau) {
  if (s.empty()) throw InputError("no samples to take a quantile of");
  if (!(qtau >= 0.0 && qtau <= 1.0)) throw InputError("qtau must lie in [0, 1]");
  std::sort(s.begin(), s.end());
  const double pos = static_cast<double>(s.size() - 1) * qtau;
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= s.size()) return s.back();
  return s[k] + (pos - static_cast<double>(k)) * (s[k + 1] - s[k]);
}

/// Growth-at-risk (or in-stress) per row: the qtau quantile of the draws.
inline Vector quantile_risk(const Matrix& samples, double qtau) {
  if (samples.cols() == 0) throw InputError("density result has no samples");
  Vector out(samples.rows());
  for (Index r = 0; r < samples.rows(); ++r) {
    const Vector row = samples.row(r).transpose();
    out(r) = empirical_quantile(std::vector<double>(row.data(), row.data() + row.size()), qtau);
  }
  return out;
}

inline Vector quantile_risk(const DensityResult& density, double qtau) { return quantile_risk(density.samples, qtau); }

}  // namespace fars
