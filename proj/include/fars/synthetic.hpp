#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fars/data_model.hpp"

namespace fars::synthetic {

/// A simulated multi-level factor panel with its generating components.
struct Dataset {
  Matrix x;             // T x N observations
  Matrix factors;       // T x r true factors
  Matrix loadings;      // N x r true loadings, zero outside the pattern
  Matrix common;        // factors * loadings'
  Vector target;        // T-vector driven by lagged factors
};

/// Draws AR(1) factors (coefficient `persistence`), loadings N(1, 1) on the
/// allowed entries of the pattern, Gaussian idiosyncratic noise with sd
/// `noise_sd`, and a target y_t = 0.4 y_{t-1} + sum_k b_k F_{k,t-1} + e_t.
inline Dataset generate(Index periods, const BlockSpec& spec, const FactorStructure& structure, double noise_sd,
                        std::uint64_t seed, double persistence = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const LoadingPattern pattern = build_pattern(spec, structure);
  const Index n = spec.total();
  const Index r = structure.factor_count();

  Dataset d;
  d.factors.resize(periods, r);
  const double innov = std::sqrt(1.0 - persistence * persistence);
  for (Index k = 0; k < r; ++k) {
    double prev = normal(rng);
    for (Index t = 0; t < periods; ++t) {
      prev = persistence * prev + innov * normal(rng);
      d.factors(t, k) = prev;
    }
  }
  d.loadings = Matrix::Zero(n, r);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < r; ++k)
      if (pattern.allowed(i, k)) d.loadings(i, k) = 1.0 + normal(rng);
  d.common = d.factors * d.loadings.transpose();
  d.x = d.common;
  if (noise_sd > 0.0)
    for (Index t = 0; t < periods; ++t)
      for (Index i = 0; i < n; ++i) d.x(t, i) += noise_sd * normal(rng);

  Vector beta(r);
  for (Index k = 0; k < r; ++k) beta(k) = 0.8 * normal(rng);
  d.target.resize(periods);
  d.target(0) = normal(rng);
  for (Index t = 1; t < periods; ++t)
    d.target(t) = 0.4 * d.target(t - 1) + d.factors.row(t - 1).dot(beta) + 0.5 * normal(rng);
  return d;
}

}  // namespace fars::synthetic
