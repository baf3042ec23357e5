#pragma once

// Brute-force reference computations used only by the test suites. Nothing
// here calls into the library's numerical routines.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Eigen_ {
  std::vector<double> values;  // descending
  Matrix vectors;              // matching columns
};

/// Cyclic Jacobi rotations on a symmetric matrix.
inline Eigen_ jacobi_eigen(Matrix a) {
  const long n = a.rows();
  Matrix v = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (long p = 0; p < n; ++p)
      for (long q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (long p = 0; p < n; ++p) {
      for (long q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (long k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (long k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (long k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<long> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0L);
  std::sort(idx.begin(), idx.end(), [&](long i, long j) { return a(i, i) > a(j, j); });
  Eigen_ out;
  out.vectors.resize(n, n);
  for (long k = 0; k < n; ++k) {
    out.values.push_back(a(idx[k], idx[k]));
    out.vectors.col(k) = v.col(idx[k]);
  }
  return out;
}

inline double naive_rss(const Matrix& x, const Matrix& f, const Matrix& p) {
  double total = 0.0;
  for (long t = 0; t < x.rows(); ++t)
    for (long i = 0; i < x.cols(); ++i) {
      double fit = 0.0;
      for (long k = 0; k < f.cols(); ++k) fit += p(i, k) * f(t, k);
      total += (x(t, i) - fit) * (x(t, i) - fit);
    }
  return total;
}

inline double check_loss(const Vector& y, const Matrix& z, const Vector& beta, double tau) {
  double loss = 0.0;
  for (long i = 0; i < y.size(); ++i) {
    const double u = y(i) - z.row(i).dot(beta);
    loss += u * (tau - (u < 0.0 ? 1.0 : 0.0));
  }
  return loss;
}

/// Global minimum of the check loss by enumerating every basic solution
/// (p observations fitted exactly).
inline double enumerate_qr(const Vector& y, const Matrix& z, double tau) {
  const long n = z.rows(), p = z.cols();
  std::vector<long> pick(static_cast<std::size_t>(p));
  std::iota(pick.begin(), pick.end(), 0L);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    Matrix a(p, p);
    Vector b(p);
    for (long k = 0; k < p; ++k) {
      a.row(k) = z.row(pick[k]);
      b(k) = y(pick[k]);
    }
    Eigen::FullPivLU<Matrix> lu(a);
    if (lu.isInvertible()) best = std::min(best, check_loss(y, z, lu.solve(b), tau));
    long k = p - 1;
    while (k >= 0 && pick[k] == n - p + k) --k;
    if (k < 0) break;
    ++pick[k];
    for (long j = k + 1; j < p; ++j) pick[j] = pick[j - 1] + 1;
  }
  return best;
}

/// Regularized lower incomplete gamma P(a, x): series below a+1, Lentz
/// continued fraction above.
inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  const double log_pref = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(log_pref);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(log_pref) * h;
}

inline double bisect(const std::function<double(double)>& f, double target, double lo, double hi, int iters = 200) {
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double chi2_quantile(int df, double alpha) {
  return bisect([df](double x) { return gamma_p(0.5 * df, 0.5 * x); }, alpha, 0.0, 1000.0);
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
inline double beta_inc(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  auto cf = [](double a, double b, double x) {
    const double tiny = 1e-300;
    double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m < 10000; ++m) {
      const int m2 = 2 * m;
      double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h;
  };
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * cf(a, b, x) / a;
  return 1.0 - front * cf(b, a, 1.0 - x) / b;
}

inline double t_pdf(double x, double nu) {
  const double logc = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI);
  return std::exp(logc - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
}

inline double t_cdf(double x, double nu) {
  const double tail = 0.5 * beta_inc(0.5 * nu, 0.5, nu / (nu + x * x));
  return x >= 0.0 ? 1.0 - tail : tail;
}

inline double t_quantile(double p, double nu) {
  return bisect([nu](double x) { return t_cdf(x, nu); }, p, -1e4, 1e4);
}

inline double skewt_pdf(double x, double mu, double sigma, double alpha, double nu) {
  const double z = (x - mu) / sigma;
  return 2.0 / sigma * t_pdf(z, nu) * t_cdf(alpha * z * std::sqrt((nu + 1.0) / (nu + z * z)), nu + 1.0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Largest principal angle (radians) between the column spaces of a and b.
inline double max_principal_angle(const Matrix& a, const Matrix& b) {
  const Matrix qa = Eigen::HouseholderQR<Matrix>(a).householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix qb = Eigen::HouseholderQR<Matrix>(b).householderQ() * Matrix::Identity(b.rows(), b.cols());
  // sin of the largest angle is the spectral norm of (I - Qa Qa') Qb.
  Eigen::JacobiSVD<Matrix> svd(qb - qa * (qa.transpose() * qb));
  return std::asin(std::clamp(svd.singularValues()(0), 0.0, 1.0));
}

}  // namespace oracle
