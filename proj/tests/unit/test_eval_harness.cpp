#include <doctest.h>

#include <cmath>
#include <vector>

#include "itevar/errors.hpp"
#include "itevar/eval_harness.hpp"
#include "itevar/stats.hpp"

using namespace itevar;

namespace {

ReplicationResult rep_with(Estimator e, Characteristics c, std::optional<Interval> ci = std::nullopt,
                           std::vector<double> density = {}) {
  ReplicationResult r;
  EstimatorResult er;
  er.estimator = e;
  er.point = c;
  er.ci_ate = er.ci_sd = er.ci_pep = ci;
  er.density = std::move(density);
  r.estimates.push_back(er);
  return r;
}

HarnessSettings quick_settings(std::size_t trees = 20) {
  HarnessSettings s;
  s.params.num_trees = trees;
  return s;
}

}  // namespace

TEST_CASE("aggregate hand cases") {
  const auto cfg = ScenarioConfig::make(ScenarioKind::Baseline, 10, 0.0, 1);
  const TrueTargets truth{0.5, 1.0, 0.6};
  {
    const std::vector<ReplicationResult> reps{rep_with(Estimator::Crf, {0.5, 1.0, 0.6}),
                                              rep_with(Estimator::Crf, {0.5, 1.0, 0.6})};
    const auto row = aggregate(reps, Estimator::Crf, truth, cfg, "s");
    CHECK(row.ate.bias == 0.0);
    CHECK(row.ate.mse == 0.0);
    CHECK_FALSE(row.ate.coverage.has_value());
  }
  {
    const std::vector<ReplicationResult> reps{rep_with(Estimator::Crf, {0.4, 1.0, 0.6}, Interval{0.3, 0.45}),
                                              rep_with(Estimator::Crf, {0.6, 1.0, 0.6}, Interval{0.45, 0.7})};
    const auto row = aggregate(reps, Estimator::Crf, truth, cfg, "s");
    CHECK(row.ate.bias == doctest::Approx(0.0));
    CHECK(row.ate.mse == doctest::Approx(0.01));
    CHECK(row.ate.mean == doctest::Approx(0.5));
    REQUIRE(row.ate.coverage.has_value());
    CHECK(*row.ate.coverage == 0.5);
    CHECK(row.ate.mse >= row.ate.bias * row.ate.bias);
    CHECK(row.replications == 2);
  }
  const std::vector<ReplicationResult> one{rep_with(Estimator::Crf, {0.5, 1.0, 0.6})};
  CHECK_THROWS(aggregate(one, Estimator::Crf, truth, cfg, "s"));
  CHECK_THROWS(aggregate(std::vector<ReplicationResult>{one[0], one[0]}, Estimator::Extended, truth, cfg, "s"));

  const auto dep = ScenarioConfig::dependent_noise(-0.5, 10, 0.0, 1);
  const std::vector<ReplicationResult> two{one[0], one[0]};
  CHECK(aggregate(two, Estimator::Crf, truth, dep, "d").rho_or_kappa == -0.5);
}

TEST_CASE("density bands use the type-7 quantile") {
  const std::vector<double> grid{0.0, 1.0};
  const std::vector<ReplicationResult> reps{rep_with(Estimator::Extended, {}, {}, {1.0, 5.0}),
                                            rep_with(Estimator::Extended, {}, {}, {2.0, 5.0}),
                                            rep_with(Estimator::Extended, {}, {}, {3.0, 5.0})};
  const auto band = density_band(reps, Estimator::Extended, grid);
  CHECK(band.mean[0] == doctest::Approx(2.0));
  CHECK(band.q025[0] == doctest::Approx(1.05));
  CHECK(band.q975[0] == doctest::Approx(2.95));
  CHECK(band.q025[1] == 5.0);
  CHECK(band.q975[1] == 5.0);
  CHECK_THROWS(density_band(reps, Estimator::Extended, std::vector<double>{0.0, 1.0, 2.0}));
}

TEST_CASE("estimator names") {
  for (auto e : {Estimator::Crf, Estimator::Extended, Estimator::CrfNoOrth, Estimator::Oracle})
    CHECK(estimator_from_string(to_string(e)) == e);
  CHECK_THROWS_AS(estimator_from_string("grf"), ConfigError);
}

TEST_CASE("replication: the bootstrap never perturbs the point estimates") {
  const auto cfg = ScenarioConfig::make(ScenarioKind::Baseline, 300, 0.5, 1);
  auto s = quick_settings();
  s.estimators = {Estimator::Crf, Estimator::Extended, Estimator::CrfNoOrth};
  const auto seed = replication_seed(5, 3);
  const auto plain = run_replication(cfg, "b", s, 3, seed);
  s.bootstrap_b = 4;
  const auto boot = run_replication(cfg, "b", s, 3, seed);
  for (auto e : s.estimators) {
    CHECK(plain.at(e).point.ate == boot.at(e).point.ate);
    CHECK(plain.at(e).point.sd == boot.at(e).point.sd);
    CHECK(plain.at(e).point.pep == boot.at(e).point.pep);
    CHECK_FALSE(plain.at(e).ci_ate.has_value());
    REQUIRE(boot.at(e).ci_sd.has_value());
    CHECK(boot.at(e).ci_sd->lo <= boot.at(e).ci_sd->hi);
    CHECK(boot.at(e).bootstrap_used == 4);
  }
  // crf and extended share one forest, so their ATEs coincide.
  CHECK(plain.at(Estimator::Crf).point.ate == plain.at(Estimator::Extended).point.ate);
  CHECK(plain.at(Estimator::Crf).point.ate != plain.at(Estimator::CrfNoOrth).point.ate);
  // Seeds are pure functions of (master, index).
  CHECK(seed == replication_seed(5, 3));
  CHECK(seed != replication_seed(5, 4));
  CHECK(seed != replication_seed(6, 3));
}

TEST_CASE("experiment results do not depend on the worker count") {
  ExperimentPlan plan;
  plan.scenarios = {{"base", ScenarioConfig::make(ScenarioKind::Baseline, 250, 0.0, 1)},
                    {"dep", ScenarioConfig::dependent_noise(0.5, 250, 0.0, 1)}};
  plan.settings = quick_settings(15);
  plan.settings.bootstrap_b = 2;
  plan.replications = 4;
  plan.truth_mc_n = 100'000;
  plan.master_seed = 17;
  plan.workers = 1;
  const auto a = run_experiment(plan);
  plan.workers = 3;
  const auto b = run_experiment(plan);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  REQUIRE(a.scenarios.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto &x = a.scenarios[s], &y = b.scenarios[s];
    REQUIRE(x.replications.size() == 4);
    CHECK(x.grid.size() == 512);
    for (std::size_t r = 0; r < 4; ++r) {
      CHECK(x.replications[r].seed == y.replications[r].seed);
      for (auto e : plan.settings.estimators) {
        CHECK(x.replications[r].at(e).point.sd == y.replications[r].at(e).point.sd);
        CHECK(x.replications[r].at(e).ci_ate->lo == y.replications[r].at(e).ci_ate->lo);
        CHECK(x.replications[r].at(e).density == y.replications[r].at(e).density);
      }
    }
    CHECK(x.aggregate[0].sd.mse == y.aggregate[0].sd.mse);
    CHECK(x.bands[1].second.q975 == y.bands[1].second.q975);
  }
  // A replication rerun on its own reproduces its row.
  const auto& sc = a.scenarios[0];
  auto settings = plan.settings;
  settings.density_grid = sc.grid;
  const auto alone = run_replication(sc.run.config, "base", settings, 2, replication_seed(17, 2));
  CHECK(alone.at(Estimator::Extended).point.pep == sc.replications[2].at(Estimator::Extended).point.pep);
  CHECK(alone.at(Estimator::Extended).ci_pep->hi == sc.replications[2].at(Estimator::Extended).ci_pep->hi);
}

TEST_CASE("failed replications are reported, not fatal") {
  ExperimentPlan plan;
  plan.scenarios = {{"tiny", ScenarioConfig::make(ScenarioKind::Randomized, 12, 0.0, 1)}};
  plan.settings = quick_settings(2);
  plan.settings.params.min_node_size = 5;
  plan.small_n_min_node_size = false;
  plan.replications = 3;
  plan.densities = false;
  plan.truth_mc_n = 100'000;
  const auto out = run_experiment(plan);
  CHECK_FALSE(out.ok());
  CHECK(out.failures.size() + out.scenarios[0].replications.size() == 3);
  for (const auto& f : out.failures) {
    CHECK(f.seed == replication_seed(plan.master_seed, f.index));
    CHECK_FALSE(f.message.empty());
  }
  plan.replications = 0;
  CHECK_THROWS_AS(run_experiment(plan), ConfigError);
}

TEST_CASE("oracle estimator is unbiased on every scenario") {
  ExperimentPlan plan;
  for (auto kind : {ScenarioKind::Baseline, ScenarioKind::LogNormalU1, ScenarioKind::NonlinearCate,
                    ScenarioKind::ConfounderOnly, ScenarioKind::Randomized})
    plan.scenarios.push_back({to_string(kind), ScenarioConfig::make(kind, 2000, 0.5, 1)});
  plan.scenarios.push_back({"dep", ScenarioConfig::dependent_noise(-0.5, 2000, 0.0, 1)});
  plan.scenarios.push_back({"strong", ScenarioConfig::confounder_only(true, 2000, 1.0, 1)});
  plan.settings.estimators = {Estimator::Oracle};
  plan.replications = 60;
  plan.densities = false;
  const auto out = run_experiment(plan);
  REQUIRE(out.ok());
  for (const auto& sc : out.scenarios) {
    CAPTURE(sc.run.id);
    const auto& row = sc.aggregate.at(0);
    auto check = [&](double Characteristics::*field, const MetricSummary& m) {
      std::vector<double> v;
      for (const auto& r : sc.replications) v.push_back(r.at(Estimator::Oracle).point.*field);
      const double se = stats::sd(v) / std::sqrt(static_cast<double>(v.size()));
      CHECK(std::abs(m.bias) < 2.0 * se + 1e-3);
      CHECK(m.mse >= m.bias * m.bias);
    };
    check(&Characteristics::ate, row.ate);
    check(&Characteristics::sd, row.sd);
    check(&Characteristics::pep, row.pep);
  }
}

TEST_CASE("scenario grid spans five true SDs") {
  const TrueTargets t{0.5, 1.0, 0.6};
  const auto g = scenario_grid(t);
  CHECK(g.size() == 512);
  CHECK(g.front() == doctest::Approx(-4.5));
  CHECK(g.back() == doctest::Approx(5.5));
}
