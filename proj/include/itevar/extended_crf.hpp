#pragma once

// Conditional ITE variance on top of a fitted causal forest.
//
// The squared-outcome residual (Y^2 - h^(-i)(x)) is regressed on A~ with the
// same similarity weights as the CATE, giving
//
//   Delta^(x)      = E[(Y1)^2 - (Y0)^2 | x]
//   sigma1^2^(x)   = Delta^(x) - tau^(x)^2 - 2 tau^(x) theta0^(x)
//   theta0^(x_i)   = m^(-i)(x_i) - e^(-i)(x_i) tau^(x_i)
//
// Population SD and PEP then follow under a conditional Gaussian working law.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itevar/causal_forest.hpp"

namespace itevar {

/// Per-row OOB quantities.  sigma1_sq_hat is stored unclamped; NaN marks rows
/// where the weighted treatment variation vanished.
struct ExtendedFit {
  std::vector<double> tau_hat;
  std::vector<double> theta0_hat;
  std::vector<double> delta_hat;
  std::vector<double> sigma1_sq_hat;
  std::vector<double> h_hat_oob;
  double ate = 0.0;
  double ate_se = 0.0;

  std::size_t size() const noexcept { return tau_hat.size(); }
};

/// Fits the causal forest and extends it.
ExtendedFit fit_extended(const ObservedData& data, const ForestParams& params, const CausalOptions& options = {});

/// Extends an already fitted (orthogonalized) causal forest: fits the h-forest
/// for E[Y^2 | x] and reuses the forest's effect trees for the weights.
ExtendedFit extend_causal_forest(const CausalForest& forest);

/// Direct evaluation at one query from explicit weights; used as a reference.
struct ExtendedPoint {
  double tau = 0.0;
  double delta = 0.0;
};
ExtendedPoint extended_from_weights(const SimilarityWeights& w, std::span<const double> y_tilde,
                                    std::span<const double> a_tilde, std::span<const double> y2_tilde,
                                    Denominator denominator);

/// sigma1^2 = Delta - tau^2 - 2 tau theta0.
inline double conditional_variance(double delta, double tau, double theta0) {
  return delta - tau * tau - 2.0 * tau * theta0;
}

/// sqrt(max(0, mean(sigma1^2 + tau^2) - ate^2)).  The raw variances enter
/// unclamped; rows with non-finite entries are skipped.
double population_sd(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat, double ate);
double population_sd(const ExtendedFit& fit);

/// Mean of P(Z_i > 0), Z_i ~ N(tau_i, max(0, sigma1_i^2)).  A zero-variance
/// row contributes 1 when tau_i > 0, 0 when tau_i < 0 and 1/2 when tau_i == 0.
double pep_gaussian(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat);
double pep_gaussian(const ExtendedFit& fit);

/// Fraction of rows with tau_i > 0.
double pep_cate_only(std::span<const double> tau_hat);
/// Sample SD of tau_hat (n - 1 denominator).
double sd_cate_only(std::span<const double> tau_hat);

enum class DensityMethod { KdeOverCates, GaussianMixture };
std::string to_string(DensityMethod m);

/// Evaluation grid.  Without explicit bounds the span is chosen from the data:
/// range +- 3 bw for the KDE, and for the mixture the union of
/// tau_i +- 6 s_i (s_i the component SD) so that the mass stays on the grid.
struct GridSpec {
  std::size_t points = 512;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct ITEDensity {
  std::vector<double> grid;
  std::vector<double> density;
  DensityMethod method = DensityMethod::KdeOverCates;
  double bandwidth = 0.0;
};

/// Rule-of-thumb bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5), with the usual
/// fallbacks when the spread is zero.
double kde_bandwidth(std::span<const double> x);

/// points equally spaced values from lo to hi inclusive.
std::vector<double> make_grid(double lo, double hi, std::size_t points);

ITEDensity kde_over_cates(std::span<const double> tau_hat, const GridSpec& grid = {});

/// n^-1 sum_i phi(y; tau_i, s_i^2), s_i^2 = max(0, sigma1_i^2); components with
/// s_i = 0 use the KDE bandwidth of tau_hat as their SD.
ITEDensity gaussian_mixture_density(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat,
                                    const GridSpec& grid = {});

ITEDensity ite_density(const ExtendedFit& fit, DensityMethod method, const GridSpec& grid = {});

}  // namespace itevar
