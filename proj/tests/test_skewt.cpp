#include <catch_amalgamated.hpp>

#include "fars/skewt.hpp"
#include "oracles.hpp"

using namespace fars;

namespace {

constexpr std::array<double, 5> kLevels{0.05, 0.25, 0.5, 0.75, 0.95};

std::array<double, 5> implied(const SkewTParams& p, const std::array<double, 5>& levels = kLevels) {
  std::array<double, 5> q{};
  for (std::size_t j = 0; j < 5; ++j) q[j] = skewt_quantile(levels[j], p);
  return q;
}

}  // namespace

TEST_CASE("symmetric skew-t reduces to Student t", "[skewt]") {
  CHECK(skewt_pdf(0.0, {0.0, 1.0, 0.0, 5.0}) == Catch::Approx(0.37961).margin(1e-4));
  for (double nu : {2.5, 5.0, 30.0})
    for (double x = -6.0; x <= 6.0; x += 0.37) {
      const SkewTParams p{0.3, 1.7, 0.0, nu};
      CHECK(skewt_pdf(x, p) == Catch::Approx(oracle::t_pdf((x - 0.3) / 1.7, nu) / 1.7).margin(1e-10));
      CHECK(skewt_pdf(0.3 + x, p) == Catch::Approx(skewt_pdf(0.3 - x, p)).margin(1e-12));
    }
}

TEST_CASE("skew-t density matches an independent series-based formula", "[skewt]") {
  const SkewTParams p{1.0, 2.0, 3.0, 6.0};
  for (double x : {-5.0, -1.0, 0.0, 0.5, 1.0, 3.0, 9.0})
    CHECK(skewt_pdf(x, p) == Catch::Approx(oracle::skewt_pdf(x, 1.0, 2.0, 3.0, 6.0)).margin(1e-10));
}

TEST_CASE("skew-t cdf basics", "[skewt]") {
  const SkewTParams sym{0.7, 1.3, 0.0, 4.0};
  CHECK(skewt_cdf(0.7, sym) == Catch::Approx(0.5).margin(1e-8));
  const SkewTParams p{-0.5, 0.8, 2.5, 5.0};
  CHECK(skewt_cdf(-0.5 + 50.0 * 0.8, p) >= 1.0 - 1e-6);
  CHECK(skewt_cdf(-0.5, p) == Catch::Approx(0.5 - std::atan(2.5) / M_PI).margin(1e-12));
}

TEST_CASE("skew-t cdf agrees with fine-grid integration", "[skewt]") {
  const SkewTParams p{0.2, 1.5, -1.8, 4.5};
  const double x = p.location + p.scale;
  // Midpoint rule in theta = atan(z) over (-pi/2, atan((x-mu)/sigma)) with 1e6 panels.
  const double top = std::atan((x - p.location) / p.scale);
  const double bottom = -M_PI / 2.0;
  const int panels = 1000000;
  const double h = (top - bottom) / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i) {
    const double th = bottom + (i + 0.5) * h;
    const double c = std::cos(th);
    sum += oracle::skewt_pdf(std::tan(th), 0.0, 1.0, p.shape, p.dof) / (c * c);
  }
  CHECK(skewt_cdf(x, p) == Catch::Approx(sum * h).margin(1e-7));
}

TEST_CASE("skew-t cdf is non-decreasing", "[skewt][property]") {
  for (double a : {-20.0, -2.0, 0.0, 1.0, 35.0})
    for (double nu : {2.01, 4.0, 150.0}) {
      const SkewTParams p{0.0, 1.0, a, nu};
      double prev = 0.0;
      for (double x = -30.0; x <= 30.0; x += 0.25) {
        const double c = skewt_cdf(x, p);
        REQUIRE(c >= prev - 1e-12);
        REQUIRE(c >= 0.0);
        REQUIRE(c <= 1.0);
        prev = c;
      }
    }
}

TEST_CASE("skew-t quantiles", "[skewt]") {
  CHECK(skewt_quantile(0.5, {1.25, 2.0, 0.0, 7.0}) == Catch::Approx(1.25).margin(1e-8));
  CHECK(skewt_quantile(0.95, {0.0, 1.0, 0.0, 10.0}) == Catch::Approx(1.8125).margin(1e-3));
  CHECK(skewt_quantile(0.95, {0.0, 1.0, 0.0, 10.0}) == Catch::Approx(oracle::t_quantile(0.95, 10.0)).margin(1e-8));
  const SkewTParams p{0.4, 0.9, -3.0, 3.0};
  CHECK(skewt_cdf(skewt_quantile(0.05, p), p) == Catch::Approx(0.05).margin(1e-7));
  CHECK_THROWS_AS(skewt_quantile(1.0, p), InputError);
}

TEST_CASE("skew-t quantiles increase with the level", "[skewt][property]") {
  for (double a : {-40.0, -3.0, 0.0, 0.5, 12.0})
    for (double nu : {2.01, 6.0, 200.0}) {
      const SkewTParams p{-1.0, 0.6, a, nu};
      double prev = -std::numeric_limits<double>::infinity();
      for (int k = 1; k <= 99; ++k) {
        const double tau = k / 100.0;
        const double q = skewt_quantile(tau, p);
        REQUIRE(q > prev);
        REQUIRE(skewt_cdf(q, p) == Catch::Approx(tau).margin(1e-9));
        prev = q;
      }
    }
}

TEST_CASE("standardized quantile chains match one-at-a-time solves", "[skewt]") {
  const StandardSkewT d(4.0, 3.0);
  const std::vector<double> taus{0.9, 0.01, 0.5, 0.999999, 1e-9};
  const auto q = d.quantiles(taus);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    CHECK(d.cdf(q[i]) == Catch::Approx(taus[i]).epsilon(1e-8).margin(1e-14));
    CHECK(q[i] == Catch::Approx(d.quantiles_sorted({taus[i]}).front()).epsilon(1e-9));
  }
}

TEST_CASE("fit recovers implied quantiles of a known skew-t", "[skewt]") {
  const SkewTParams truth{0.0, 1.0, 2.0, 8.0};
  const auto q = implied(truth);
  const auto fit = fit_skewt(q, kLevels);
  CHECK(fit.loss <= 1e-8);
  const auto back = implied(fit.params);
  for (std::size_t j = 0; j < 5; ++j) CHECK(back[j] == Catch::Approx(q[j]).margin(1e-4));
}

TEST_CASE("fit of Gaussian quantiles is near symmetric", "[skewt]") {
  const auto fit = fit_skewt(std::array<double, 5>{-1.96, -0.674, 0.0, 0.674, 1.96}, {0.025, 0.25, 0.5, 0.75, 0.975});
  CHECK(std::abs(fit.params.shape) <= 0.2);
  CHECK(std::abs(fit.params.location) <= 0.05);
  const auto fit5 = fit_skewt(std::array<double, 5>{-1.645, -0.674, 0.0, 0.674, 1.645}, kLevels);
  CHECK(std::abs(fit5.params.shape) <= 0.2);
  CHECK(std::abs(fit5.params.location) <= 0.05);
}

TEST_CASE("fit is location equivariant", "[skewt][property]") {
  const std::array<double, 5> q{-2.3, -0.4, 0.3, 0.9, 1.7};
  const auto a = fit_skewt(q, kLevels);
  for (double c : {-7.5, 0.25, 12.0}) {
    std::array<double, 5> s = q;
    for (auto& v : s) v += c;
    const auto b = fit_skewt(s, kLevels);
    CHECK(b.params.location - a.params.location == Catch::Approx(c).margin(1e-4));
    CHECK(b.params.scale == Catch::Approx(a.params.scale).margin(1e-4));
    CHECK(b.params.shape == Catch::Approx(a.params.shape).margin(1e-4));
    CHECK(b.params.dof == Catch::Approx(a.params.dof).margin(1e-4));
  }
}

TEST_CASE("fit objective trace never increases", "[skewt][property]") {
  const std::vector<std::array<double, 5>> inputs{{-3.0, -0.5, 0.1, 0.6, 1.2},
                                                  {-0.2, 0.0, 0.1, 0.5, 3.0},
                                                  {1.0, 1.1, 1.2, 1.3, 1.4},
                                                  {-6.0, 1.0, 1.5, 1.8, 2.0}};
  for (const auto& q : inputs) {
    const auto fit = fit_skewt(q, kLevels);
    REQUIRE(fit.trace.size() >= 2);
    for (std::size_t i = 1; i < fit.trace.size(); ++i) REQUIRE(fit.trace[i] <= fit.trace[i - 1]);
    CHECK(fit.params.scale >= kMinScale);
    CHECK(fit.params.scale <= kMaxScale);
    CHECK(std::abs(fit.params.shape) <= kMaxShape);
    CHECK(fit.params.dof >= kMinDof);
    CHECK(fit.params.dof <= kMaxDof);
  }
}

TEST_CASE("crossing quantiles are sorted before fitting", "[skewt]") {
  const auto a = fit_skewt(std::array<double, 5>{-1.0, 0.2, 0.0, 0.5, 1.5}, kLevels);
  const auto b = fit_skewt(std::array<double, 5>{-1.0, 0.0, 0.2, 0.5, 1.5}, kLevels);
  CHECK(a.loss == b.loss);
  CHECK(a.params.location == b.params.location);
}

TEST_CASE("equal inputs are degenerate", "[skewt]") {
  CHECK_THROWS_AS(fit_skewt(std::array<double, 5>{1.0, 1.0, 1.0, 1.0, 1.0}, kLevels), NumericError);
  CHECK_THROWS_AS(fit_skewt(std::array<double, 5>{0.0, 1.0, 2.0, 3.0, 4.0}, {0.1, 0.1, 0.5, 0.7, 0.9}), InputError);
}

TEST_CASE("tabulated quantiles agree with the Newton solver", "[skewt]") {
  const std::vector<double> taus{1e-4, 0.01, 0.05, 0.3, 0.5, 0.77, 0.95, 0.999, 1.0 - 1e-5};
  const std::vector<double> extreme{1e-9, 1.0 - 1e-9};
  for (double a : {-40.0, -1.5, 0.0, 3.0, 40.0})
    for (double nu : {2.01, 5.0, 200.0}) {
      const StandardSkewT d(a, nu);
      const auto fast = d.tabulated_quantiles(taus);
      const auto exact = d.quantiles(taus);
      for (std::size_t i = 0; i < taus.size(); ++i)
        CHECK(fast[i] == Catch::Approx(exact[i]).epsilon(1e-6).margin(1e-7));
      // Far tails: the cdf itself is only resolved to about 1e-12 there.
      const auto fx = d.tabulated_quantiles(extreme);
      const auto ex = d.quantiles(extreme);
      for (std::size_t i = 0; i < extreme.size(); ++i) CHECK(fx[i] == Catch::Approx(ex[i]).epsilon(1e-2));
    }
}
