#include <catch_amalgamated.hpp>

#include <random>

#include "fars/faqr.hpp"
#include "fars/synthetic.hpp"
#include "oracles.hpp"

using namespace fars;

namespace {

struct Fixture {
  Vector dep;
  Matrix factors;
};

Fixture simulated(Index t, Index r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Fixture f;
  f.factors.resize(t, r);
  for (Index j = 0; j < r; ++j)
    for (Index i = 0; i < t; ++i) f.factors(i, j) = n(rng);
  f.dep.resize(t);
  f.dep(0) = n(rng);
  for (Index i = 1; i < t; ++i) f.dep(i) = 0.3 * f.dep(i - 1) + 0.8 * f.factors(i - 1, 0) + 0.5 * n(rng);
  return f;
}

Scenario scenario_from(const Matrix& factors, const Matrix& mse, double alpha) {
  MseSeries s;
  s.per_t.assign(static_cast<std::size_t>(factors.rows()), mse);
  return create_scenario(factors, s, alpha);
}

QuantileFit manual_fit(double tau, Vector coef) {
  QuantileFit f;
  f.tau = tau;
  f.coefficients = std::move(coef);
  return f;
}

}  // namespace

TEST_CASE("levels follow the edge setting", "[faqr]") {
  CHECK(quantile_levels(0.01) == Levels{0.01, 0.25, 0.5, 0.75, 0.99});
  CHECK(quantile_levels(0.05) == Levels{0.05, 0.25, 0.5, 0.75, 0.95});
  CHECK_THROWS_AS(quantile_levels(0.3), InputError);
}

TEST_CASE("one-step fits on 59 periods give 59 quantile rows", "[faqr]") {
  const auto f = simulated(59, 2, 1);
  const auto res = compute_fars(f.dep, f.factors, 1, 0.05);
  CHECK(res.quantiles.rows() == 59);
  CHECK(res.quantiles.cols() == 5);
  REQUIRE(res.fits.size() == 5);
  for (const auto& fit : res.fits) {
    CHECK(fit.coefficients.size() == 4);
    CHECK(fit.std_errors.minCoeff() >= 0.0);
    CHECK(fit.p_values.minCoeff() >= 0.0);
    CHECK(fit.p_values.maxCoeff() <= 1.0);
  }
  CHECK_FALSE(res.stressed_quantiles.has_value());
}

TEST_CASE("quantile rows are fitted values plus the last-period forecast", "[faqr]") {
  const auto f = simulated(40, 1, 2);
  for (int h : {1, 3}) {
    const auto res = compute_fars(f.dep, f.factors, h, 0.1);
    REQUIRE(res.quantiles.rows() == 40 - h + 1);
    for (int j = 0; j < 5; ++j) {
      const Vector& b = res.fits[static_cast<std::size_t>(j)].coefficients;
      for (Index t = 0; t < res.quantiles.rows(); ++t)
        CHECK(res.quantiles(t, j) == Catch::Approx(b(0) + b(1) * f.dep(t) + b(2) * f.factors(t, 0)).margin(1e-12));
    }
  }
}

TEST_CASE("every fit satisfies the subgradient optimality check", "[faqr][property]") {
  const auto f = simulated(80, 3, 3);
  const int h = 2;
  const auto res = compute_fars(f.dep, f.factors, h, 0.05);
  const Index n = 80 - h;
  const Matrix z = fars_design(f.dep, f.factors, n);
  const Vector y = f.dep.tail(n);
  for (const auto& fit : res.fits) {
    CHECK(subgradient_violation(y, z, fit.coefficients, fit.tau) <= 1e-10);
    CHECK(check_loss(y, z, fit.coefficients, fit.tau) ==
          Catch::Approx(solve_quantile_regression(y, z, fit.tau).objective).epsilon(1e-12));
  }
}

TEST_CASE("near-zero factors leave the unconditional median", "[faqr]") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector dep(50);
  Matrix factors(50, 1);
  for (Index t = 0; t < 50; ++t) {
    dep(t) = 2.0 + 1e-5 * n(rng);
    factors(t, 0) = 1e-5 * n(rng);
  }
  const auto res = compute_fars(dep, factors, 1, 0.05);
  CHECK(std::abs(res.quantiles(49, 2) - 2.0) < 1e-4);
}

TEST_CASE("shifting the target shifts every forecast", "[faqr][property]") {
  const auto f = simulated(60, 2, 5);
  const auto a = compute_fars(f.dep, f.factors, 1, 0.05);
  const auto b = compute_fars((f.dep.array() + 4.0).matrix(), f.factors, 1, 0.05);
  CHECK(((b.quantiles - a.quantiles).array() - 4.0).abs().maxCoeff() < 1e-6);
  for (int j = 0; j < 5; ++j) {
    const auto& ca = a.fits[static_cast<std::size_t>(j)].coefficients;
    const auto& cb = b.fits[static_cast<std::size_t>(j)].coefficients;
    CHECK((ca.tail(3) - cb.tail(3)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("input validation for compute_fars", "[faqr]") {
  const auto f = simulated(6, 2, 6);
  CHECK_THROWS_AS(compute_fars(f.dep, f.factors, 2, 0.05), InputError);
  const auto g = simulated(30, 1, 7);
  CHECK_THROWS_AS(compute_fars(g.dep, g.factors, 0, 0.05), InputError);
  const auto sc = scenario_from(g.factors, Matrix::Identity(1, 1), 0.9);
  CHECK_THROWS_AS(compute_fars(g.dep, g.factors, 1, 0.05, &sc, 0.1), InputError);
}

TEST_CASE("positive slope picks the lower endpoint under min", "[faqr]") {
  Vector dep = Vector::Zero(3);
  Scenario sc;
  Matrix pts(2, 1);
  pts << -1.96, 1.96;
  sc.per_t.assign(3, pts);
  Vector coef(3);
  coef << 0.0, 0.0, 2.0;
  std::vector<QuantileFit> fits;
  for (double tau : quantile_levels(0.05)) fits.push_back(manual_fit(tau, coef));
  auto [sf, sq] = stress_optimize(fits, dep, sc, 0.05, Direction::Min, 1);
  CHECK(sf(0, 0) == -1.96);
  CHECK(sq(0, 0) == Catch::Approx(-3.92));
  auto [mf, mq] = stress_optimize(fits, dep, sc, 0.05, Direction::Max, 1);
  CHECK(mf(2, 0) == 1.96);
  CHECK_THROWS_AS(stress_optimize(fits, dep, sc, 0.1, Direction::Min, 1), InputError);
}

TEST_CASE("zero factor coefficients make stressing a no-op", "[faqr]") {
  const auto f = simulated(20, 2, 8);
  const auto sc = scenario_from(f.factors, 0.2 * Matrix::Identity(2, 2), 0.95);
  Vector coef(4);
  coef << 0.3, 0.5, 0.0, 0.0;
  std::vector<QuantileFit> fits;
  for (double tau : quantile_levels(0.05)) fits.push_back(manual_fit(tau, coef));
  auto [sf, sq] = stress_optimize(fits, f.dep, sc, 0.05, Direction::Min, 1);
  for (Index t = 0; t < 20; ++t) {
    CHECK(sq(t, 0) == Catch::Approx(0.3 + 0.5 * f.dep(t)).margin(1e-14));
    CHECK(sf.row(t) == sc.per_t[static_cast<std::size_t>(t)].row(0));  // lowest index on ties
  }
}

TEST_CASE("discrete stress optimum tracks the closed-form ellipse optimum", "[faqr]") {
  Vector dep = Vector::Zero(4);
  Matrix centre(4, 2);
  centre << 0, 0, 1, -1, 0.5, 2, -3, 0.2;
  Matrix mse(2, 2);
  mse << 0.5, 0.2, 0.2, 0.3;
  const double alpha = 0.9;
  const auto sc = scenario_from(centre, mse, alpha);
  Vector coef(4);
  coef << 0.0, 0.0, 1.2, -0.7;
  std::vector<QuantileFit> fits;
  for (double tau : quantile_levels(0.05)) fits.push_back(manual_fit(tau, coef));
  auto [sf, sq] = stress_optimize(fits, dep, sc, 0.05, Direction::Min, 1);
  const Vector beta = coef.tail(2);
  const double c2 = oracle::chi2_quantile(2, alpha);
  for (Index t = 0; t < 4; ++t) {
    const Vector opt = centre.row(t).transpose() - std::sqrt(c2) * (mse * beta) / std::sqrt(beta.dot(mse * beta));
    const Matrix& pts = sc.per_t[static_cast<std::size_t>(t)];
    double variation = 0.0;
    for (Index z = 0; z < pts.rows(); ++z)
      variation = std::max(variation, std::abs((pts.row(z) - pts.row((z + 1) % pts.rows())).dot(beta)));
    CHECK(sq(t, 0) - beta.dot(opt) >= -1e-12);
    CHECK(sq(t, 0) - beta.dot(opt) <= variation);
  }
}

TEST_CASE("stressed quantiles dominate unstressed ones", "[faqr][property]") {
  const auto f = simulated(45, 2, 9);
  const auto sc = scenario_from(f.factors, 0.1 * Matrix::Identity(2, 2), 0.95);
  for (Direction dir : {Direction::Min, Direction::Max}) {
    const auto res = compute_fars(f.dep, f.factors, 1, 0.05, &sc, 0.05, dir);
    REQUIRE(res.stressed_quantiles.has_value());
    REQUIRE(res.stressed_factors->rows() == 45);
    const Vector diff = res.stressed_quantiles->col(0) - res.quantiles.col(0);
    if (dir == Direction::Min)
      CHECK(diff.maxCoeff() <= 1e-12);
    else
      CHECK(diff.minCoeff() >= -1e-12);
    const Matrix inv = (0.1 * Matrix::Identity(2, 2)).inverse();
    for (Index t = 0; t < 45; ++t) {
      const Vector d = (res.stressed_factors->row(t) - f.factors.row(t)).transpose();
      CHECK(d.dot(inv * d) == Catch::Approx(sc.chi2_value).epsilon(1e-6));
    }
  }
}
