#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fars/data_model.hpp"
#include "fars/error.hpp"

namespace fars {

/// Check loss sum_t rho_tau(y_t - z_t' beta).
inline double check_loss(const Vector& y, const Matrix& z, const Vector& beta, double tau) {
  const Vector u = y - z * beta;
  double s = 0.0;
  for (Index i = 0; i < u.size(); ++i) s += u(i) * (u(i) < 0.0 ? tau - 1.0 : tau);
  return s;
}

namespace detail {

inline double rho_slope(double du, double tau) { return du > 0.0 ? tau * du : (tau - 1.0) * du; }

inline void check_qr_inputs(const Vector& y, const Matrix& z, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1), got " + std::to_string(tau));
  if (z.rows() != y.size()) throw InputError("design and response lengths differ");
  if (z.rows() <= z.cols()) throw InputError("quantile regression needs more observations than regressors");
  if (!y.allFinite() || !z.allFinite()) throw InputError("quantile regression inputs must be finite");
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < z.cols()) throw NumericError("quantile regression design is rank deficient");
}

/// Asymmetrically weighted least squares iterations; lands close to the
/// check-loss minimizer and serves as a warm start.
inline Vector irls_start(const Vector& y, const Matrix& z, double tau, int iterations = 60) {
  Vector beta = z.colPivHouseholderQr().solve(y);
  const double scale = std::max(1e-12, (y.array() - y.mean()).abs().mean());
  Vector w(y.size());
  for (int it = 0; it < iterations; ++it) {
    const Vector u = y - z * beta;
    const double eps = scale * 1e-6;
    for (Index i = 0; i < u.size(); ++i) w(i) = (u(i) > 0.0 ? tau : 1.0 - tau) / std::max(std::abs(u(i)), eps);
    const Matrix zw = z.transpose() * w.asDiagonal();
    const Vector next = (zw * z).ldlt().solve(zw * y);
    if (!next.allFinite()) break;
    const double step = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (step < 1e-12 * std::max(1.0, beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

/// p observations with the smallest absolute residuals whose design rows are
/// linearly independent.
inline std::vector<Index> crossover_basis(const Vector& u, const Matrix& z) {
  const Index n = z.rows(), p = z.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(u(a)) < std::abs(u(b)); });
  std::vector<Index> basis;
  Matrix rows(0, p);
  for (Index i : order) {
    Matrix trial(rows.rows() + 1, p);
    trial.topRows(rows.rows()) = rows;
    trial.bottomRows(1) = z.row(i);
    Eigen::FullPivLU<Matrix> lu(trial);
    lu.setThreshold(1e-10);
    if (lu.rank() == trial.rows()) {
      rows = trial;
      basis.push_back(i);
      if (static_cast<Index>(basis.size()) == p) return basis;
    }
  }
  throw NumericError("quantile regression design is rank deficient");
}

}  // namespace detail

/// Result of a quantile regression solve.
struct QrSolution {
  Vector beta;
  double objective = 0.0;
  int pivots = 0;
  std::vector<Index> basis;  // observations interpolated exactly by beta
};

/// Minimizes the check loss. A reweighted least-squares warm start is moved
/// to the nearest vertex of the LP and then polished by exterior simplex
/// steps (one basic observation leaves, the breakpoint that minimizes the
/// loss along the edge enters) until no edge direction decreases the loss.
inline QrSolution solve_quantile_regression(const Vector& y, const Matrix& z, double tau) {
  detail::check_qr_inputs(y, z, tau);
  const Index n = z.rows(), p = z.cols();
  Vector beta = detail::irls_start(y, z, tau);
  std::vector<Index> basis = detail::crossover_basis(y - z * beta, z);

  const double yscale = std::max(1.0, y.cwiseAbs().maxCoeff());
  const int max_pivots = static_cast<int>(50 * n + 1000);
  QrSolution sol;
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  std::vector<std::pair<double, double>> breaks;
  for (int pivot = 0;; ++pivot) {
    Matrix b(p, p);
    Vector yb(p);
    for (Index k = 0; k < p; ++k) {
      b.row(k) = z.row(basis[static_cast<std::size_t>(k)]);
      yb(k) = y(basis[static_cast<std::size_t>(k)]);
    }
    Eigen::PartialPivLU<Matrix> lu(b);
    beta = lu.solve(yb);
    const Matrix binv = lu.inverse();
    Vector u = y - z * beta;
    std::fill(in_basis.begin(), in_basis.end(), 0);
    for (Index k : basis) {
      in_basis[static_cast<std::size_t>(k)] = 1;
      u(k) = 0.0;
    }
    const double zero_tol = 1e-12 * yscale;

    // Most negative directional derivative over the 2p edge directions.
    double best_slope = -1e-12 * std::max(1.0, z.cwiseAbs().sum() / static_cast<double>(p));
    Index best_k = -1;
    Vector best_dir;
    for (Index k = 0; k < p; ++k) {
      for (double sign : {1.0, -1.0}) {
        const Vector dir = sign * binv.col(k);
        const Vector dz = z * dir;  // residual change is -dz
        double slope = detail::rho_slope(-sign, tau);
        for (Index i = 0; i < n; ++i) {
          if (in_basis[static_cast<std::size_t>(i)]) continue;
          if (std::abs(u(i)) > zero_tol)
            slope += -dz(i) * (u(i) > 0.0 ? tau : tau - 1.0);
          else
            slope += detail::rho_slope(-dz(i), tau);
        }
        if (slope < best_slope) {
          best_slope = slope;
          best_k = k;
          best_dir = dir;
        }
      }
    }
    if (best_k < 0) break;
    if (pivot >= max_pivots) throw NumericError("quantile regression did not reach an optimal vertex");

    // Line search along the chosen edge: convex piecewise linear in the step.
    const Vector dz = z * best_dir;
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || std::abs(dz(i)) < 1e-14 || std::abs(u(i)) <= zero_tol) continue;
      const double s = u(i) / dz(i);
      if (s > 0.0) breaks.emplace_back(s, static_cast<double>(i));
    }
    if (breaks.empty()) throw NumericError("quantile regression objective is unbounded");
    std::sort(breaks.begin(), breaks.end());
    double slope = best_slope;
    Index entering = -1;
    for (const auto& [s, idx] : breaks) {
      slope += std::abs(dz(static_cast<Index>(idx)));
      if (slope >= 0.0) {
        entering = static_cast<Index>(idx);
        break;
      }
    }
    if (entering < 0) entering = static_cast<Index>(breaks.back().second);
    basis[static_cast<std::size_t>(best_k)] = entering;
    sol.pivots = pivot + 1;
  }
  sol.beta = beta;
  sol.basis = basis;
  sol.objective = check_loss(y, z, beta, tau);
  return sol;
}

inline Vector fit_quantile_regression(const Vector& y, const Matrix& z, double tau) {
  return solve_quantile_regression(y, z, tau).beta;
}

/// Largest decrease in the check loss from moving any single coefficient by
/// +-step; non-positive at an optimum.
inline double subgradient_violation(const Vector& y, const Matrix& z, const Vector& beta, double tau,
                                    double step = 1e-6) {
  const double base = check_loss(y, z, beta, tau);
  double worst = 0.0;
  for (Index j = 0; j < beta.size(); ++j)
    for (double s : {step, -step}) {
      Vector b = beta;
      b(j) += s;
      worst = std::max(worst, base - check_loss(y, z, b, tau));
    }
  return worst;
}

/// Hall-Sheather bandwidth on the probability scale.
inline double hall_sheather_bandwidth(Index n, double tau, double alpha = 0.05) {
  const boost::math::normal_distribution<double> norm;
  const double x0 = boost::math::quantile(norm, tau);
  const double f0 = boost::math::pdf(norm, x0);
  const double z = boost::math::quantile(norm, 1.0 - alpha / 2.0);
  return std::pow(static_cast<double>(n), -1.0 / 3.0) * std::pow(z, 2.0 / 3.0) *
         std::pow(1.5 * f0 * f0 / (2.0 * x0 * x0 + 1.0), 1.0 / 3.0);
}

struct PowellResult {
  Vector se;
  Vector pvals;
  Matrix covariance;
  double bandwidth = 0.0;  // residual scale, after any inflation
  int inflations = 0;
};

/// Kernel sandwich covariance tau(1-tau) D^{-1} (Z'Z/n) D^{-1} / n with a
/// Gaussian kernel. The Hall-Sheather bandwidth is mapped to the residual
/// scale as Phi^{-1}(tau + b) - Phi^{-1}(tau - b) times a robust residual
/// spread. A singular D doubles the bandwidth, at most three times.
inline PowellResult powell_std_errors(const Vector& y, const Matrix& z, const Vector& beta, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1)");
  if (z.rows() != y.size() || z.cols() != beta.size()) throw InputError("powell_std_errors: dimension mismatch");
  const Index n = z.rows(), p = z.cols();
  const double nd = static_cast<double>(n);
  const Vector u = y - z * beta;

  const boost::math::normal_distribution<double> norm;
  double hp = hall_sheather_bandwidth(n, tau);
  hp = std::min(hp, 0.999 * std::min(tau, 1.0 - tau));
  const double spread_q = boost::math::quantile(norm, tau + hp) - boost::math::quantile(norm, tau - hp);
  std::vector<double> sorted(u.data(), u.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const auto emp_q = [&](double q) {
    const double pos = (nd - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - std::floor(pos)) * (sorted[hi] - sorted[lo]);
  };
  const double sd = std::sqrt((u.array() - u.mean()).square().sum() / (nd - 1.0));
  const double iqr = (emp_q(0.75) - emp_q(0.25)) / 1.34;
  const double spread = iqr > 0.0 ? std::min(sd, iqr) : sd;
  double b = spread_q * spread;

  const Matrix zz = z.transpose() * z / nd;
  PowellResult out;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    if (attempt > 0) {
      b *= 2.0;
      out.inflations = attempt;
    }
    if (!(b > 0.0) || !std::isfinite(b)) continue;
    Vector k(n);
    for (Index i = 0; i < n; ++i) k(i) = boost::math::pdf(norm, u(i) / b);
    const Matrix d = z.transpose() * k.asDiagonal() * z / (nd * b);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(d);
    const double lmax = eig.eigenvalues().maxCoeff();
    if (!(lmax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * lmax) continue;
    const Matrix dinv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    out.covariance = tau * (1.0 - tau) * dinv * zz * dinv / nd;
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.bandwidth = b;
    out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.pvals.resize(p);
    for (Index j = 0; j < p; ++j) {
      if (out.se(j) > 0.0)
        out.pvals(j) = std::erfc(std::abs(beta(j) / out.se(j)) / std::sqrt(2.0));
      else
        out.pvals(j) = beta(j) == 0.0 ? 1.0 : 0.0;
    }
    return out;
  }
  throw NumericError("sandwich density matrix is singular after 3 bandwidth inflations");
}

}  // namespace fars
