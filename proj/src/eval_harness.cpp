#include "itevar/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "itevar/errors.hpp"
#include "itevar/extended_crf.hpp"
#include "itevar/rng.hpp"
#include "itevar/stats.hpp"

namespace itevar {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::Crf: return "crf";
    case Estimator::Extended: return "extended";
    case Estimator::CrfNoOrth: return "crf_no_orth";
    case Estimator::Oracle: return "oracle";
  }
  return "unknown";
}

Estimator estimator_from_string(const std::string& name) {
  for (auto e : {Estimator::Crf, Estimator::Extended, Estimator::CrfNoOrth, Estimator::Oracle})
    if (to_string(e) == name) return e;
  throw ConfigError("estimator", "unknown estimator '" + name + "' (crf, extended, crf_no_orth, oracle)");
}

const EstimatorResult& ReplicationResult::at(Estimator e) const {
  for (const auto& r : estimates)
    if (r.estimator == e) return r;
  throw std::out_of_range("replication has no result for estimator " + to_string(e));
}

namespace {

bool wants(const HarnessSettings& s, Estimator e) {
  return std::find(s.estimators.begin(), s.estimators.end(), e) != s.estimators.end();
}

EstimatorResult cate_only(Estimator e, std::span<const double> tau, double ate, std::span<const double> grid) {
  EstimatorResult r;
  r.estimator = e;
  r.point = {ate, sd_cate_only(tau), pep_cate_only(tau)};
  if (!grid.empty()) r.density = kde_over_cates(tau, {grid.size(), grid.front(), grid.back()}).density;
  return r;
}

}  // namespace

std::vector<EstimatorResult> evaluate_estimators(const ObservedData& data, const HiddenColumns* hidden,
                                                 const HarnessSettings& settings, std::uint64_t forest_seed,
                                                 std::span<const double> grid) {
  ForestParams params = settings.params;
  params.seed = forest_seed;
  std::vector<EstimatorResult> out;

  const bool crf = wants(settings, Estimator::Crf);
  const bool ext = wants(settings, Estimator::Extended);
  if (crf || ext) {
    CausalOptions options = settings.options;
    options.orthogonalize = true;
    const auto forest = fit_causal_forest(data, params, options);
    std::vector<double> tau;
    std::optional<ExtendedFit> fit;
    double ate;
    if (ext) {
      fit = extend_causal_forest(forest);
      tau = fit->tau_hat;
      ate = fit->ate;
    } else {
      tau = predict_cate_oob_all(forest);
      ate = estimate_ate_aipw(forest, tau).ate;
    }
    if (crf) out.push_back(cate_only(Estimator::Crf, tau, ate, grid));
    if (ext) {
      EstimatorResult r;
      r.estimator = Estimator::Extended;
      r.point = {ate, population_sd(*fit), pep_gaussian(*fit)};
      if (!grid.empty())
        r.density = gaussian_mixture_density(fit->tau_hat, fit->sigma1_sq_hat, {grid.size(), grid.front(), grid.back()})
                        .density;
      out.push_back(std::move(r));
    }
  }
  if (wants(settings, Estimator::CrfNoOrth)) {
    CausalOptions options = settings.options;
    options.orthogonalize = false;
    const auto forest = fit_causal_forest(data, params, options);
    const auto tau = predict_cate_oob_all(forest);
    out.push_back(cate_only(Estimator::CrfNoOrth, tau, estimate_ate(forest, tau).ate, grid));
  }
  if (wants(settings, Estimator::Oracle)) {
    if (hidden == nullptr) throw EstimationError("oracle estimator needs the hidden columns");
    out.push_back(cate_only(Estimator::Oracle, hidden->ite, stats::mean(hidden->ite), grid));
  }
  return out;
}

std::uint64_t replication_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, seed_tag::kReplication, index);
}

ReplicationResult run_replication(const ScenarioConfig& scenario, const std::string& scenario_id,
                                  const HarnessSettings& settings, std::size_t index, std::uint64_t seed) {
  ScenarioConfig config = scenario;
  config.seed = seed;
  const auto dataset = generate_dataset(config);
  const std::uint64_t forest_seed = derive_seed(seed, seed_tag::kForest, 0);

  ReplicationResult result;
  result.scenario_id = scenario_id;
  result.index = index;
  result.seed = seed;
  result.estimates = evaluate_estimators(dataset.observed, &dataset.hidden, settings, forest_seed,
                                         settings.density_grid);
  if (settings.bootstrap_b == 0) return result;

  const std::size_t n = dataset.size();
  const std::size_t k = result.estimates.size();
  std::vector<std::vector<Characteristics>> draws(k);
  std::vector<std::size_t> rows(n);
  for (std::size_t b = 0; b < settings.bootstrap_b; ++b) {
    const std::uint64_t bseed = derive_seed(seed, seed_tag::kBootstrap, b);
    RandomStream rng(bseed, 0);
    for (auto& r : rows) r = rng.below(n);
    const auto resample = dataset.observed.subset(rows);
    HiddenColumns hidden_resample;
    const HiddenColumns* hidden_ptr = nullptr;
    if (wants(settings, Estimator::Oracle)) {
      for (auto r : rows) hidden_resample.ite.push_back(dataset.hidden.ite[r]);
      hidden_ptr = &hidden_resample;
    }
    try {
      const auto est = evaluate_estimators(resample, hidden_ptr, settings, derive_seed(bseed, seed_tag::kForest, 0), {});
      for (std::size_t e = 0; e < k; ++e) draws[e].push_back(est[e].point);
    } catch (const EstimationError&) {
      // A degenerate resample (e.g. constant treatment) is skipped.
    }
  }
  for (std::size_t e = 0; e < k; ++e) {
    auto& r = result.estimates[e];
    r.bootstrap_used = draws[e].size();
    if (draws[e].size() < 2) continue;
    auto interval = [&](double Characteristics::*field) {
      std::vector<double> v;
      v.reserve(draws[e].size());
      for (const auto& c : draws[e]) v.push_back(c.*field);
      return Interval{stats::quantile(v, 0.025), stats::quantile(v, 0.975)};
    };
    r.ci_ate = interval(&Characteristics::ate);
    r.ci_sd = interval(&Characteristics::sd);
    r.ci_pep = interval(&Characteristics::pep);
  }
  return result;
}

AggregateRow aggregate(std::span<const ReplicationResult> results, Estimator estimator, const TrueTargets& truth,
                       const ScenarioConfig& scenario, const std::string& scenario_id) {
  if (results.size() < 2) throw std::invalid_argument("aggregate: need at least 2 replications");
  AggregateRow row;
  row.scenario_id = scenario_id;
  row.kind = scenario.kind;
  row.rho_or_kappa = scenario.kind == ScenarioKind::DependentNoise ? scenario.kappa : scenario.rho;
  row.n = scenario.n;
  row.estimator = estimator;
  row.replications = results.size();

  auto summarize = [&](double Characteristics::*field, std::optional<Interval> EstimatorResult::*ci,
                       double target) {
    MetricSummary m;
    double s = 0.0, sq = 0.0;
    std::size_t with_ci = 0, covered = 0;
    for (const auto& rep : results) {
      const auto& r = rep.at(estimator);
      const double v = r.point.*field;
      s += v;
      sq += (v - target) * (v - target);
      if ((r.*ci).has_value()) {
        ++with_ci;
        covered += (r.*ci)->contains(target);
      }
    }
    const double count = static_cast<double>(results.size());
    m.mean = s / count;
    m.bias = m.mean - target;
    m.mse = sq / count;
    if (with_ci > 0) m.coverage = static_cast<double>(covered) / static_cast<double>(with_ci);
    return m;
  };
  row.ate = summarize(&Characteristics::ate, &EstimatorResult::ci_ate, truth.ate);
  row.sd = summarize(&Characteristics::sd, &EstimatorResult::ci_sd, truth.sd);
  row.pep = summarize(&Characteristics::pep, &EstimatorResult::ci_pep, truth.pep);
  return row;
}

DensityBand density_band(std::span<const ReplicationResult> results, Estimator estimator,
                         std::span<const double> grid) {
  if (results.empty()) throw std::invalid_argument("density_band: no replications");
  DensityBand band;
  band.grid.assign(grid.begin(), grid.end());
  const std::size_t g = grid.size();
  band.mean.resize(g);
  band.q025.resize(g);
  band.q975.resize(g);
  std::vector<double> column(results.size());
  for (std::size_t p = 0; p < g; ++p) {
    for (std::size_t r = 0; r < results.size(); ++r) {
      const auto& d = results[r].at(estimator).density;
      if (d.size() != g) throw std::invalid_argument("density_band: replication density does not match the grid");
      column[r] = d[p];
    }
    band.mean[p] = stats::mean(column);
    band.q025[p] = stats::quantile(column, 0.025);
    band.q975[p] = stats::quantile(column, 0.975);
  }
  return band;
}

std::vector<double> scenario_grid(const TrueTargets& truth, std::size_t points) {
  return make_grid(truth.ate - 5.0 * truth.sd, truth.ate + 5.0 * truth.sd, points);
}

ExperimentOutcome run_experiment(const ExperimentPlan& plan) {
  if (plan.replications == 0) throw ConfigError("replications", "must be at least 1");
  if (plan.settings.estimators.empty()) throw ConfigError("estimators", "at least one estimator is required");
  plan.settings.params.validate();

  ExperimentOutcome outcome;
  for (const auto& run : plan.scenarios) {
    run.config.validate();
    ScenarioOutcome so;
    so.run = run;
    so.truth = true_targets(run.config, plan.truth_mc_n);
    HarnessSettings settings = plan.settings;
    if (plan.small_n_min_node_size && run.config.n <= 200) settings.params.min_node_size = 1;
    if (plan.densities) {
      so.grid = scenario_grid(so.truth);
      settings.density_grid = so.grid;
    }

    const std::size_t reps = plan.replications;
    std::vector<std::optional<ReplicationResult>> slots(reps);
    std::vector<std::string> errors(reps);
    const int threads = effective_threads(plan.workers);
    const auto total = static_cast<std::ptrdiff_t>(reps);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::ptrdiff_t ii = 0; ii < total; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const auto seed = replication_seed(plan.master_seed, i);
      try {
        slots[i] = run_replication(run.config, run.id, settings, i, seed);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
        if (errors[i].empty()) errors[i] = "unknown failure";
      }
    }
    for (std::size_t i = 0; i < reps; ++i) {
      if (slots[i]) so.replications.push_back(std::move(*slots[i]));
      else outcome.failures.push_back({run.id, i, replication_seed(plan.master_seed, i), errors[i]});
    }
    if (so.replications.size() >= 2) {
      for (auto e : plan.settings.estimators) {
        so.aggregate.push_back(aggregate(so.replications, e, so.truth, run.config, run.id));
        if (plan.densities) so.bands.emplace_back(e, density_band(so.replications, e, so.grid));
      }
    }
    outcome.scenarios.push_back(std::move(so));
  }
  return outcome;
}

}  // namespace itevar
