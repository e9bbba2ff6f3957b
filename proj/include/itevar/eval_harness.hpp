#pragma once

// Monte Carlo replications: simulate, fit each estimator, bootstrap, and
// summarize against the true population characteristics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itevar/causal_forest.hpp"
#include "itevar/sim_dgp.hpp"

namespace itevar {

enum class Estimator {
  Crf,        // orthogonalized CRF; SD and PEP of the CATE distribution
  Extended,   // same forest plus the conditional variance; Gaussian PEP
  CrfNoOrth,  // CRF without centering (difference in means)
  Oracle,     // hidden ITEs, for checking the harness itself
};

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const noexcept { return lo <= v && v <= hi; }
};

struct Characteristics {
  double ate = 0.0;
  double sd = 0.0;
  double pep = 0.0;
};

struct EstimatorResult {
  Estimator estimator = Estimator::Crf;
  Characteristics point;
  std::optional<Interval> ci_ate, ci_sd, ci_pep;
  std::vector<double> density;  // on the settings' density grid, if any
  std::size_t bootstrap_used = 0;
};

struct ReplicationResult {
  std::string scenario_id;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<EstimatorResult> estimates;

  const EstimatorResult& at(Estimator e) const;
};

struct HarnessSettings {
  std::vector<Estimator> estimators{Estimator::Crf, Estimator::Extended};
  ForestParams params;
  CausalOptions options;
  std::size_t bootstrap_b = 0;       // 0 disables confidence intervals
  std::vector<double> density_grid;  // empty: no densities
};

/// Point estimates of every requested estimator on one dataset.  crf and
/// extended share a single fitted causal forest.  `hidden` is only read by
/// the oracle estimator.  Densities are evaluated when `grid` is non-empty.
std::vector<EstimatorResult> evaluate_estimators(const ObservedData& data, const HiddenColumns* hidden,
                                                 const HarnessSettings& settings, std::uint64_t forest_seed,
                                                 std::span<const double> grid);

/// Seed of replication `index` under a master seed.
std::uint64_t replication_seed(std::uint64_t master_seed, std::size_t index);

/// One replication: the dataset is generated with seed `seed` (overriding the
/// scenario's own), forests use seeds derived from it, and bootstrap resample
/// b refits the whole pipeline with its own derived seeds.
ReplicationResult run_replication(const ScenarioConfig& scenario, const std::string& scenario_id,
                                  const HarnessSettings& settings, std::size_t index, std::uint64_t seed);

struct MetricSummary {
  double mean = 0.0;
  double bias = 0.0;
  double mse = 0.0;
  std::optional<double> coverage;  // absent when no replication has a CI
};

struct AggregateRow {
  std::string scenario_id;
  ScenarioKind kind = ScenarioKind::Baseline;
  double rho_or_kappa = 0.0;
  std::size_t n = 0;
  Estimator estimator = Estimator::Crf;
  MetricSummary ate, sd, pep;
  std::size_t replications = 0;
};

/// Bias, MSE and coverage over replications.  Requires at least 2 results.
AggregateRow aggregate(std::span<const ReplicationResult> results, Estimator estimator, const TrueTargets& truth,
                       const ScenarioConfig& scenario, const std::string& scenario_id);

struct DensityBand {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> q025;
  std::vector<double> q975;
};

/// Pointwise mean and 2.5% / 97.5% quantiles of the replication densities.
DensityBand density_band(std::span<const ReplicationResult> results, Estimator estimator,
                         std::span<const double> grid);

/// Shared density grid for a scenario: 512 points over ATE +- 5 SD of the
/// true ITE distribution.
std::vector<double> scenario_grid(const TrueTargets& truth, std::size_t points = 512);

struct ScenarioRun {
  std::string id;
  ScenarioConfig config;
};

struct ExperimentPlan {
  std::vector<ScenarioRun> scenarios;
  HarnessSettings settings;
  std::size_t replications = 200;
  std::uint64_t master_seed = 1;
  int workers = 0;            // 0 uses the OpenMP default
  bool densities = true;
  std::size_t truth_mc_n = 1'000'000;
  bool small_n_min_node_size = true;  // scenarios with n <= 200 use min_node_size 1
};

struct ReplicationFailure {
  std::string scenario_id;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct ScenarioOutcome {
  ScenarioRun run;
  TrueTargets truth;
  std::vector<double> grid;
  std::vector<ReplicationResult> replications;  // successful ones, by index
  std::vector<AggregateRow> aggregate;           // one per estimator
  std::vector<std::pair<Estimator, DensityBand>> bands;
};

struct ExperimentOutcome {
  std::vector<ScenarioOutcome> scenarios;
  std::vector<ReplicationFailure> failures;

  bool ok() const noexcept { return failures.empty(); }
};

/// Runs every replication of every scenario, parallel over replications.
/// Results do not depend on the worker count.
ExperimentOutcome run_experiment(const ExperimentPlan& plan);

}  // namespace itevar
