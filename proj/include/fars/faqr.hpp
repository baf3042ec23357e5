#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"
#include "fars/factor_uncertainty.hpp"
#include "fars/parallel.hpp"
#include "fars/quantile_regression.hpp"

namespace fars {

enum class Direction { Min, Max };

inline std::string to_string(Direction d) { return d == Direction::Min ? "min" : "max"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "min") return Direction::Min;
  if (s == "max") return Direction::Max;
  throw InputError("unknown direction '" + s + "' (expected min or max)");
}

/// Coefficients are ordered intercept, lag of the target, then factors.
struct QuantileFit {
  double tau = 0.5;
  Vector coefficients;
  Vector std_errors;
  Vector p_values;
  int bandwidth_inflations = 0;

  double evaluate(double lag, const Eigen::Ref<const Vector>& f) const {
    return coefficients(0) + coefficients(1) * lag + coefficients.tail(f.size()).dot(f);
  }
};

using Levels = std::array<double, 5>;

inline Levels quantile_levels(double edge) {
  if (!(edge > 0.0 && edge < 0.25)) throw InputError("edge must lie in (0, 0.25), got " + std::to_string(edge));
  return {edge, 0.25, 0.5, 0.75, 1.0 - edge};
}

struct FarsResult {
  int horizon = 1;
  Levels levels{};
  std::vector<QuantileFit> fits;             // one per level
  Matrix quantiles;                          // (T-h+1) x 5
  std::optional<Matrix> stressed_quantiles;  // (T-h+1) x 5
  std::optional<Matrix> stressed_factors;    // (T-h+1) x r
  std::optional<double> qtau;
  Direction direction = Direction::Min;

  Index rows() const noexcept { return quantiles.rows(); }
};

/// Regressor rows (1, y_t, F_t) for t = 0..rows-1.
inline Matrix fars_design(const Vector& dep, const Matrix& factors, Index rows) {
  Matrix z(rows, factors.cols() + 2);
  z.col(0).setOnes();
  z.col(1) = dep.head(rows);
  z.rightCols(factors.cols()) = factors.topRows(rows);
  return z;
}

inline int level_index(const Levels& levels, double qtau) {
  for (int j = 0; j < 5; ++j)
    if (std::abs(levels[static_cast<std::size_t>(j)] - qtau) < 1e-12) return j;
  return -1;
}

/// Evaluates the qtau fit over every ellipsoid point of each forecast row and
/// keeps the extreme one (lowest point index on ties). Only factors are
/// stressed; the observed lag is kept.
inline std::pair<Matrix, Matrix> stress_optimize(const std::vector<QuantileFit>& fits, const Vector& dep,
                                                 const Scenario& scenario, double qtau, Direction direction,
                                                 int h) {
  int target = -1;
  for (std::size_t j = 0; j < fits.size(); ++j)
    if (std::abs(fits[j].tau - qtau) < 1e-12) target = static_cast<int>(j);
  if (target < 0) throw InputError("qtau " + std::to_string(qtau) + " is not one of the fitted quantile levels");
  const Index t_count = dep.size();
  const Index rows = t_count - h + 1;
  if (scenario.periods() < rows) throw InputError("scenario has fewer point sets than forecast rows");
  const Index r = fits.front().coefficients.size() - 2;
  if (scenario.dimension() != r) throw InputError("scenario dimension differs from the number of factors");

  Matrix factors(rows, r);
  Matrix quantiles(rows, static_cast<Index>(fits.size()));
  const QuantileFit& fit = fits[static_cast<std::size_t>(target)];
  const Vector beta = fit.coefficients.tail(r);
  parallel_for(static_cast<std::size_t>(rows), [&](std::size_t tt) {
    const auto t = static_cast<Index>(tt);
    const Matrix& pts = scenario.per_t[tt];
    if (pts.rows() == 0) throw InputError("empty scenario point set at period " + std::to_string(t + 1));
    const Vector obj = pts * beta;
    Index best = 0;
    for (Index z = 1; z < obj.size(); ++z)
      if (direction == Direction::Min ? obj(z) < obj(best) : obj(z) > obj(best)) best = z;
    factors.row(t) = pts.row(best);
    for (std::size_t j = 0; j < fits.size(); ++j)
      quantiles(t, static_cast<Index>(j)) = fits[j].evaluate(dep(t), pts.row(best).transpose());
  });
  return {factors, quantiles};
}

/// Fits the five direct h-step quantile regressions of y_{t+h} on
/// (1, y_t, F_t) and forms fitted quantiles for t = 1..T-h plus the
/// out-of-sample forecast from the last period.
inline FarsResult compute_fars(const Vector& dep, const Matrix& factors, int h = 1, double edge = 0.05,
                               const Scenario* scenario = nullptr, std::optional<double> qtau = std::nullopt,
                               Direction direction = Direction::Min) {
  const Index t_count = dep.size();
  const Index r = factors.cols();
  if (factors.rows() != t_count) throw InputError("target and factors differ in number of periods");
  if (h < 1) throw InputError("horizon must be >= 1");
  if (t_count <= r + 2 + h)
    throw InputError("need more than r + 2 + h = " + std::to_string(r + 2 + h) + " periods, got " +
                     std::to_string(t_count));
  if (!dep.allFinite() || !factors.allFinite()) throw InputError("target and factors must be finite");

  FarsResult out;
  out.horizon = h;
  out.levels = quantile_levels(edge);
  out.direction = direction;
  const Index n_fit = t_count - h;
  const Matrix z_fit = fars_design(dep, factors, n_fit);
  const Vector y_fit = dep.tail(n_fit);
  const Index rows = t_count - h + 1;
  const Matrix z_all = fars_design(dep, factors, rows);

  out.fits.resize(5);
  parallel_for(5, [&](std::size_t j) {
    QuantileFit& f = out.fits[j];
    f.tau = out.levels[j];
    f.coefficients = fit_quantile_regression(y_fit, z_fit, f.tau);
    const auto se = powell_std_errors(y_fit, z_fit, f.coefficients, f.tau);
    f.std_errors = se.se;
    f.p_values = se.pvals;
    f.bandwidth_inflations = se.inflations;
  });
  out.quantiles.resize(rows, 5);
  for (int j = 0; j < 5; ++j) out.quantiles.col(j) = z_all * out.fits[static_cast<std::size_t>(j)].coefficients;

  if (scenario) {
    const double q = qtau.value_or(out.levels[0]);
    if (level_index(out.levels, q) < 0)
      throw InputError("qtau " + std::to_string(q) + " must be one of the fitted levels");
    auto [sf, sq] = stress_optimize(out.fits, dep, *scenario, q, direction, h);
    out.stressed_factors = std::move(sf);
    out.stressed_quantiles = std::move(sq);
    out.qtau = q;
  } else if (qtau) {
    out.qtau = qtau;
  }
  return out;
}

}  // namespace fars
