#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace itevar::stats {

double mean(std::span<const double> x);

/// Sample standard deviation with denominator n - 1.  Requires n >= 2.
double sd(std::span<const double> x);

/// Empirical quantile, interpolation rule 7 (linear between order statistics
/// at positions (n - 1) * p).  Input need not be sorted.
double quantile(std::span<const double> x, double p);

double correlation(std::span<const double> x, std::span<const double> y);

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Trapezoid rule over an ordered grid.
double trapezoid(std::span<const double> grid, std::span<const double> f);

}  // namespace itevar::stats
