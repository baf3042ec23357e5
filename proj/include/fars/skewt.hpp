#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"

namespace fars {

namespace detail {
using FastPolicy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;
}

struct SkewTParams {
  double location = 0.0;
  double scale = 1.0;
  double shape = 0.0;
  double dof = 5.0;
};

inline constexpr double kMinScale = 1e-4;
inline constexpr double kMaxScale = 1e3;
inline constexpr double kMaxShape = 40.0;
inline constexpr double kMinDof = 2.01;
inline constexpr double kMaxDof = 200.0;

inline void validate(const SkewTParams& p) {
  if (!std::isfinite(p.location) || !std::isfinite(p.scale) || !std::isfinite(p.shape) || !std::isfinite(p.dof))
    throw InputError("skew-t parameters must be finite");
  if (!(p.scale > 0.0)) throw InputError("skew-t scale must be positive");
  if (!(p.dof > 0.0)) throw InputError("skew-t degrees of freedom must be positive");
}

/// Standardized skew-t (location 0, scale 1). Integrals run in theta =
/// atan(z), which maps the real line onto a bounded interval.
class StandardSkewT {
 public:
  StandardSkewT(double shape, double dof)
      : alpha_(shape),
        nu_(dof),
        log_c_(std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * std::numbers::pi)),
        upper_(dof + 1.0) {}

  double shape() const noexcept { return alpha_; }
  double dof() const noexcept { return nu_; }

  double pdf(double z) const {
    const double t = std::exp(log_c_ - 0.5 * (nu_ + 1.0) * std::log1p(z * z / nu_));
    const double w = alpha_ * z * std::sqrt((nu_ + 1.0) / (nu_ + z * z));
    return 2.0 * t * boost::math::cdf(upper_, w);
  }

  /// Density in theta space: f(tan theta) sec^2 theta.
  double theta_density(double theta) const {
    const double c = std::cos(theta);
    if (std::abs(theta) >= 0.5 * std::numbers::pi || c <= 0.0) return 0.0;
    return pdf(std::tan(theta)) / (c * c);
  }

  /// P(Z <= 0) in closed form.
  double cdf_at_zero() const noexcept { return 0.5 - std::atan(alpha_) / std::numbers::pi; }

  /// Integral of theta_density over [theta_a, theta_b], adaptive with an
  /// absolute error budget proportional to the interval length.
  double integral(double theta_a, double theta_b) const {
    if (theta_a == theta_b) return 0.0;
    const double v = adaptive(theta_a, theta_b, 0);
    if (!std::isfinite(v)) throw NumericError("skew-t cdf quadrature did not converge");
    return v;
  }

  double cdf_theta(double theta) const { return std::clamp(cdf_at_zero() + integral(0.0, theta), 0.0, 1.0); }

  double cdf(double z) const { return cdf_theta(std::atan(z)); }

  /// Quantiles for ascending probabilities, solved in sequence: each root is
  /// a bracketed Newton iteration in theta anchored at the previous root.
  std::vector<double> quantiles_sorted(const std::vector<double>& taus) const {
    std::vector<double> out(taus.size());
    double theta_a = 0.0;
    double f_a = cdf_at_zero();
    const double half_pi = 0.5 * std::numbers::pi;
    for (std::size_t k = 0; k < taus.size(); ++k) {
      const double tau = taus[k];
      if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1)");
      double lo = -half_pi, hi = half_pi;
      (tau > f_a ? lo : hi) = theta_a;
      double theta = theta_a;
      double f_theta = f_a;
      double g = theta_density(theta);
      bool done = std::abs(f_theta - tau) <= 1e-15;
      for (int it = 0; it < 200 && !done; ++it) {
        double next = g > 0.0 ? theta - (f_theta - tau) / g : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double f_next = f_theta + integral(theta, next);
        const double z_old = std::tan(theta), z_new = std::tan(next);
        theta = next;
        f_theta = f_next;
        (f_theta < tau ? lo : hi) = theta;
        g = theta_density(theta);
        if (std::abs(z_new - z_old) <= 1e-12 * std::max(1.0, std::abs(z_new)) || std::abs(f_theta - tau) <= 1e-15)
          done = true;
        if (hi - lo < 1e-15) done = true;
      }
      if (!done) throw NumericError("skew-t quantile iteration failed to bracket the root");
      out[k] = std::tan(theta);
      theta_a = theta;
      f_a = f_theta;
    }
    return out;
  }

  /// Quantiles for arbitrary probabilities, returned in input order.
  std::vector<double> quantiles(const std::vector<double>& taus) const {
    std::vector<std::size_t> order(taus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return taus[a] < taus[b]; });
    std::vector<double> sorted(taus.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = taus[order[i]];
    const auto q = quantiles_sorted(sorted);
    std::vector<double> out(taus.size());
    for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = q[i];
    return out;
  }

  /// Quantiles for many probabilities at once from a tabulated CDF: Gauss
  /// panels on a uniform theta grid, cubic Hermite inversion inside a panel.
  std::vector<double> tabulated_quantiles(const std::vector<double>& taus, int panels = 2048) const {
    const int tail_panels = panels / 32;
    const double half_pi = 0.5 * std::numbers::pi;
    const double h = std::numbers::pi / panels;
    std::vector<double> theta(static_cast<std::size_t>(panels) + 1), g(theta.size()), c(theta.size());
    for (int i = 0; i <= panels; ++i) {
      theta[static_cast<std::size_t>(i)] = i == panels ? half_pi : -half_pi + i * h;
      g[static_cast<std::size_t>(i)] = theta_density(theta[static_cast<std::size_t>(i)]);
    }
    const auto panel = [&](int i) {
      return boost::math::quadrature::gauss<double, 7>::integrate([this](double th) { return theta_density(th); },
                                                                  theta[static_cast<std::size_t>(i)],
                                                                  theta[static_cast<std::size_t>(i) + 1]);
    };
    // Anchor at theta = 0 (an exact node for an even panel count).
    const int mid = panels / 2;
    c[static_cast<std::size_t>(mid)] = cdf_at_zero();
    for (int i = mid; i < panels; ++i) c[static_cast<std::size_t>(i) + 1] = c[static_cast<std::size_t>(i)] + panel(i);
    for (int i = mid - 1; i >= 0; --i) c[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i) + 1] - panel(i);
    for (auto& v : c) v = std::clamp(v, 0.0, 1.0);

    std::vector<double> out(taus.size());
    for (std::size_t k = 0; k < taus.size(); ++k) {
      const double u = taus[k];
      if (!(u > 0.0 && u < 1.0)) throw InputError("quantile level must lie in (0, 1)");
      auto it = std::upper_bound(c.begin(), c.end(), u);
      int i = static_cast<int>(it - c.begin()) - 1;
      i = std::clamp(i, 0, panels - 1);
      const auto iu = static_cast<std::size_t>(i);
      const double c0 = c[iu], c1 = c[iu + 1], m0 = h * g[iu], m1 = h * g[iu + 1];
      const auto hermite = [&](double t) {
        const double t2 = t * t, t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * c0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * c1 + (t3 - t2) * m1;
      };
      const auto slope = [&](double t) {
        const double t2 = t * t;
        return (6 * t2 - 6 * t) * c0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * c1 + (3 * t2 - 2 * t) * m1;
      };
      double lo = 0.0, hi = 1.0;
      double t = c1 > c0 ? std::clamp((u - c0) / (c1 - c0), 0.0, 1.0) : 0.5;
      for (int iter = 0; iter < 60; ++iter) {
        const double f = hermite(t) - u;
        (f < 0.0 ? lo : hi) = t;
        const double d = slope(t);
        double next = d > 0.0 ? t - f / d : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - t) < 1e-15) {
          t = next;
          break;
        }
        t = next;
      }
      double th = theta[iu] + t * h;
      if (i < tail_panels || i >= panels - tail_panels) {
        // The density is not smooth in theta near +-pi/2 for heavy tails:
        // polish with Newton steps on the exact panel integral.
        double plo = theta[iu], phi = theta[iu + 1];
        for (int iter = 0; iter < 50; ++iter) {
          const double f = c0 + integral(theta[iu], th) - u;
          (f < 0.0 ? plo : phi) = th;
          const double d = theta_density(th);
          double next = d > 0.0 ? th - f / d : 0.5 * (plo + phi);
          if (!(next > plo && next < phi)) next = 0.5 * (plo + phi);
          const bool small = std::abs(std::tan(next) - std::tan(th)) <= 1e-12 * std::max(1.0, std::abs(std::tan(next)));
          th = next;
          if (small || phi - plo < 1e-16) break;
        }
      }
      out[k] = std::tan(std::clamp(th, -half_pi + 1e-300, half_pi - 1e-16));
    }
    return out;
  }

 private:
  double adaptive(double a, double b, int depth) const {
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
        [this](double th) { return theta_density(th); }, a, b, 0, 0.0, &err);
    // err is reported on the reference interval [-1, 1]; scale it back.
    if (0.5 * std::abs(b - a) * err <= 1e-13 * std::abs(b - a) + 1e-17) return v;
    if (depth >= 40) throw NumericError("skew-t cdf quadrature did not converge");
    const double m = 0.5 * (a + b);
    return adaptive(a, m, depth + 1) + adaptive(m, b, depth + 1);
  }

  double alpha_;
  double nu_;
  double log_c_;
  boost::math::students_t_distribution<double, detail::FastPolicy> upper_;
};

inline double skewt_pdf(double x, const SkewTParams& p) {
  validate(p);
  return StandardSkewT(p.shape, p.dof).pdf((x - p.location) / p.scale) / p.scale;
}

inline double skewt_cdf(double x, const SkewTParams& p) {
  validate(p);
  return StandardSkewT(p.shape, p.dof).cdf((x - p.location) / p.scale);
}

inline double skewt_quantile(double tau, const SkewTParams& p) {
  validate(p);
  if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1)");
  return p.location + p.scale * StandardSkewT(p.shape, p.dof).quantiles_sorted({tau}).front();
}

struct SkewTFit {
  SkewTParams params;
  double loss = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // best objective after each iteration
};

namespace detail {

struct ProfiledLoss {
  double loss;
  double location;
  double scale;
};

/// Given standardized quantiles, the best location and scale in closed form
/// (scale clamped to its bounds).
inline ProfiledLoss profile_location_scale(const std::array<double, 5>& target, const std::vector<double>& q0) {
  const double n = 5.0;
  double mt = 0.0, mq = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    mt += target[j] / n;
    mq += q0[j] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    sxy += (q0[j] - mq) * (target[j] - mt);
    sxx += (q0[j] - mq) * (q0[j] - mq);
  }
  const double scale = std::clamp(sxx > 0.0 ? sxy / sxx : kMinScale, kMinScale, kMaxScale);
  const double loc = mt - scale * mq;
  double loss = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    const double r = target[j] - loc - scale * q0[j];
    loss += r * r;
  }
  return {loss, loc, scale};
}

}  // namespace detail

/// Least-squares match of five skew-t quantiles to the given values. The
/// inputs are sorted first. Location and scale are profiled out exactly;
/// shape and log(dof - 2) are searched by a bounded Nelder-Mead simplex with
/// restarts.
inline SkewTFit fit_skewt(const std::array<double, 5>& quantile_values, const std::array<double, 5>& levels,
                          int max_iter = 500) {
  for (std::size_t j = 0; j < 5; ++j) {
    if (!std::isfinite(quantile_values[j])) throw InputError("quantile values must be finite");
    if (!(levels[j] > 0.0 && levels[j] < 1.0)) throw InputError("levels must lie in (0, 1)");
    if (j > 0 && !(levels[j] > levels[j - 1])) throw InputError("levels must be strictly increasing");
  }
  std::array<double, 5> q = quantile_values;
  std::sort(q.begin(), q.end());
  if (q[4] - q[0] <= 1e-12 * std::max(1.0, std::abs(q[2])))
    throw NumericError("degenerate quantiles: all five values are equal");
  const std::vector<double> lv(levels.begin(), levels.end());

  const double s_lo = std::log(kMinDof - 2.0), s_hi = std::log(kMaxDof - 2.0);
  using Point = std::array<double, 2>;
  const auto project = [&](Point x) {
    x[0] = std::clamp(x[0], -kMaxShape, kMaxShape);
    x[1] = std::clamp(x[1], s_lo, s_hi);
    return x;
  };
  const auto evaluate = [&](const Point& x) {
    const StandardSkewT d(x[0], 2.0 + std::exp(x[1]));
    return detail::profile_location_scale(q, d.quantiles_sorted(lv));
  };

  const double skew = ((q[4] - q[2]) - (q[2] - q[0])) / std::max(q[4] - q[0], 1e-8);
  Point best = project({std::clamp(skew * 10.0, -5.0, 5.0), std::log(5.0 - 2.0)});
  double best_f = evaluate(best).loss;
  const double abs_floor = 1e-24 * std::pow(q[4] - q[0], 2);

  SkewTFit fit;
  fit.trace.push_back(best_f);
  int iter = 0;
  for (int restart = 0; restart < 4 && iter < max_iter; ++restart) {
    const double start_f = best_f;
    std::array<Point, 3> simplex{best, project({best[0] + 1.0, best[1]}), project({best[0], best[1] + 0.7})};
    if (simplex[1] == best) simplex[1] = project({best[0] - 1.0, best[1]});
    if (simplex[2] == best) simplex[2] = project({best[0], best[1] - 0.7});
    std::array<double, 3> f{best_f, evaluate(simplex[1]).loss, evaluate(simplex[2]).loss};
    for (; iter < max_iter; ++iter) {
      std::array<int, 3> idx{0, 1, 2};
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return f[a] < f[b]; });
      const int lo = idx[0], mid = idx[1], hi = idx[2];
      if (f[lo] < best_f) {
        best_f = f[lo];
        best = simplex[lo];
      }
      fit.trace.push_back(best_f);
      const double size = std::max(std::abs(simplex[hi][0] - simplex[lo][0]) + std::abs(simplex[hi][1] - simplex[lo][1]),
                                   std::abs(simplex[mid][0] - simplex[lo][0]) + std::abs(simplex[mid][1] - simplex[lo][1]));
      if (f[hi] - f[lo] <= 1e-10 * std::abs(f[lo]) + abs_floor && size < 1e-6) break;
      if (f[lo] <= abs_floor) break;

      const Point c{0.5 * (simplex[lo][0] + simplex[mid][0]), 0.5 * (simplex[lo][1] + simplex[mid][1])};
      const auto along = [&](double t) { return project({c[0] + t * (simplex[hi][0] - c[0]), c[1] + t * (simplex[hi][1] - c[1])}); };
      const Point xr = along(-1.0);
      const double fr = evaluate(xr).loss;
      if (fr < f[lo]) {
        const Point xe = along(-2.0);
        const double fe = evaluate(xe).loss;
        if (fe < fr) {
          simplex[hi] = xe;
          f[hi] = fe;
        } else {
          simplex[hi] = xr;
          f[hi] = fr;
        }
      } else if (fr < f[mid]) {
        simplex[hi] = xr;
        f[hi] = fr;
      } else {
        const bool outside = fr < f[hi];
        const Point xc = along(outside ? -0.5 : 0.5);
        const double fc = evaluate(xc).loss;
        if (fc < (outside ? fr : f[hi])) {
          simplex[hi] = xc;
          f[hi] = fc;
        } else {
          for (int v : {mid, hi}) {
            simplex[v] = project({simplex[lo][0] + 0.5 * (simplex[v][0] - simplex[lo][0]),
                                  simplex[lo][1] + 0.5 * (simplex[v][1] - simplex[lo][1])});
            f[v] = evaluate(simplex[v]).loss;
          }
        }
      }
    }
    for (int v = 0; v < 3; ++v)
      if (f[v] < best_f) {
        best_f = f[v];
        best = simplex[v];
      }
    if (start_f - best_f <= 1e-10 * std::abs(start_f) || best_f <= abs_floor) break;
  }
  const auto prof = evaluate(best);
  fit.params = {prof.location, prof.scale, best[0], 2.0 + std::exp(best[1])};
  fit.loss = prof.loss;
  fit.iterations = iter;
  fit.trace.push_back(fit.loss);
  return fit;
}

inline SkewTFit fit_skewt(const Eigen::Ref<const Vector>& quantile_values, const std::array<double, 5>& levels) {
  if (quantile_values.size() != 5) throw InputError("fit_skewt expects five quantile values");
  return fit_skewt(std::array<double, 5>{quantile_values(0), quantile_values(1), quantile_values(2),
                                         quantile_values(3), quantile_values(4)},
                   levels);
}

}  // namespace fars
