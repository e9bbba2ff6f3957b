#pragma once

// File formats and the three command entry points behind the itevar tool.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "itevar/eval_harness.hpp"
#include "itevar/extended_crf.hpp"

namespace itevar {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fingerprint(const std::string& canonical);

/// Shortest round-trip decimal text of a double ("NA" for NaN).
std::string format_double(double v);

// ---- datasets --------------------------------------------------------------

/// key=value pairs describing a generated dataset, in a fixed order.
std::string canonical_scenario(const ScenarioConfig& config);

/// Header `x_sex,x_sbp,x0,a,y` (plus `y0,y1,ite` with `oracle`), preceded by a
/// `#` line holding the fingerprint and the resolved scenario.
void write_dataset_csv(std::ostream& out, const SimulatedDataset& data, const ScenarioConfig& config, bool oracle);

/// Reads the observed columns; `#` lines are skipped and extra oracle columns
/// ignored.  Malformed input throws CsvError naming the line and column.
ObservedData read_dataset_csv(std::istream& in);
ObservedData read_dataset_csv(const std::string& path);

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, std::size_t column, const std::string& what);
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_, column_;
};

// ---- fits ------------------------------------------------------------------

/// `i,tau_hat,theta0_hat,delta_hat,sigma1_sq_hat`; columns an estimator does
/// not produce are written as NA.
void write_fit_csv(std::ostream& out, const ExtendedFit& fit, const std::string& fingerprint_hex);

/// `y,f_y,method`.
void write_density_csv(std::ostream& out, const ITEDensity& density, const std::string& fingerprint_hex);

// ---- experiment specs ------------------------------------------------------

/// Flat key = value file.  Keys before the first `[scenario]` line set the
/// plan: replications, bootstrap_b, master_seed, estimators (comma list),
/// trees, subsample_fraction, honesty_fraction, mtry, min_node_size,
/// max_depth, imbalance_alpha, stabilize_splits, poisson_mtry, denominator,
/// propensity_clamp, densities, truth_mc_n, small_n_min_node_size.  Each
/// `[scenario]` block takes id, kind, n, rho, kappa, strong and any
/// coefficient override.  Unknown keys, duplicates and bad values throw
/// ConfigError with the line number.
struct ExperimentSpec {
  ExperimentPlan plan;
};

ExperimentSpec parse_experiment_spec(std::istream& in);
ExperimentSpec parse_experiment_spec_file(const std::string& path);

/// Canonical text of a resolved spec (what the fingerprint is computed on).
std::string canonical_spec(const ExperimentSpec& spec);

/// Writes replications.csv, aggregate.csv and density_<estimator>.csv.
void write_experiment_results(const std::string& dir, const ExperimentOutcome& outcome,
                              const ExperimentPlan& plan, const std::string& fingerprint_hex);

// ---- commands --------------------------------------------------------------

struct SimulateOptions {
  std::string scenario = "baseline";
  std::size_t n = 2000;
  double rho = 0.0;
  std::optional<double> kappa;
  bool strong = false;
  std::uint64_t seed = 1;
  std::string out;
  bool oracle = false;
};

struct FitOptions {
  std::string input;
  std::string estimator = "extended";
  std::size_t trees = 2000;
  std::uint64_t seed = 42;
  std::string out;
  bool paper_literal_denominator = false;
  std::size_t min_node_size = 5;
  int threads = 0;
  std::string save_forest;  // optional JSON forest path
};

struct ExperimentOptions {
  std::string config;
  std::string out;
  int workers = 0;
};

/// Each returns an exit code and reports problems on `err`.
int cmd_simulate(const SimulateOptions& opt, std::ostream& err);
int cmd_fit(const FitOptions& opt, std::ostream& err);
int cmd_experiment(const ExperimentOptions& opt, std::ostream& err);

}  // namespace itevar
