#pragma once

// Synthetic data from the calibrated cause-effect relations:
//
//   A  = 1{ expit(a0 + a_sex*X_sex + a_sbp*X_SBP) > N_A },   N_A ~ Uni[0,1]
//   Y0 = b0 + b_sex*X_sex + b_sbp*X_SBP + N_Y
//   Y1 = Y0 + tau(X) + U1
//
// with a measured proxy X0 of the latent modifier U1 (corr(U1, X0) = rho).
// Scenario kinds vary the noise law, the CATE shape and the confounding.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "itevar/data.hpp"

namespace itevar {

enum class ScenarioKind {
  Baseline,
  DependentNoise,  // corr(N_Y, U1) = kappa
  LogNormalU1,     // shifted log-normal U1 with mean 0, variance sigma1^2
  NonlinearCate,   // tau(x) = (tau0 + tau_sex*X_sex) * exp(tau_sbp*X_SBP)
  ConfounderOnly,  // tau_sex = 0; strong variant raises beta_sex, alpha_sex
  Randomized,      // A ~ Ber(randomized_p) independent of everything
};

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& name);

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Baseline;
  std::size_t n = 2000;
  double rho = 0.0;
  double kappa = 0.0;
  bool strong = false;
  double delta = 2.0;
  double p_sex = 0.5;
  double alpha0 = -1.7, alpha_sex = -0.1, alpha_sbp = 0.4;
  double beta0 = 5.9, beta_sex = 0.8, beta_sbp = 0.5;
  double tau0 = 0.45, tau_sex = 0.1, tau_sbp = 0.15;
  double sigma0 = 1.6, sigma1 = 1.4;
  double randomized_p = 0.15;
  std::uint64_t seed = 1;

  /// Defaults for a scenario kind, including its coefficient overrides.
  static ScenarioConfig make(ScenarioKind kind, std::size_t n, double rho, std::uint64_t seed);
  static ScenarioConfig dependent_noise(double kappa, std::size_t n, double rho, std::uint64_t seed);
  static ScenarioConfig confounder_only(bool strong, std::size_t n, double rho, std::uint64_t seed);

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// SD of U1 actually used for generation.  For DependentNoise the nominal
  /// sigma1 is replaced so that var(Y1 | x) = sigma0^2 + sigma1^2 is preserved.
  double effective_sigma1() const;

  /// E[Y1 - Y0 | X_sex, X_SBP].
  double cate(double x_sex, double x_sbp) const;

  /// Whether the ITE law is a Gaussian mixture over X_sex (closed forms apply).
  bool gaussian_ite() const;
};

struct HiddenColumns {
  std::vector<double> y0, y1, ite, tau_x, u1, n_y;
};

/// Generated data.  Estimators only ever receive `observed`; the hidden
/// potential outcomes are for evaluation code.
struct SimulatedDataset {
  ObservedData observed;  // columns: x_sex, x_sbp, x0
  HiddenColumns hidden;

  std::size_t size() const noexcept { return observed.size(); }
};

inline constexpr std::size_t kFeatureSex = 0;
inline constexpr std::size_t kFeatureSbp = 1;
inline constexpr std::size_t kFeatureX0 = 2;
inline constexpr std::size_t kNumFeatures = 3;

/// Row i depends only on (config, i): each row has its own random stream.
SimulatedDataset generate_dataset(const ScenarioConfig& config);

struct TrueTargets {
  double ate = 0.0;
  double sd = 0.0;
  double pep = 0.0;
};

/// ATE, SD and PEP of the ITE distribution.  Closed form for Gaussian-mixture
/// scenarios, Monte Carlo over mc_n hidden ITEs otherwise.
TrueTargets true_targets(const ScenarioConfig& config, std::size_t mc_n = 1'000'000);

/// Always Monte Carlo; also returns the standard errors of each estimate.
struct MonteCarloTargets {
  TrueTargets value;
  TrueTargets se;
};
MonteCarloTargets true_targets_monte_carlo(const ScenarioConfig& config, std::size_t mc_n);

/// Exact ITE density on a grid; only for gaussian_ite() scenarios.
std::vector<double> true_ite_density(const ScenarioConfig& config, std::span<const double> grid);

}  // namespace itevar
