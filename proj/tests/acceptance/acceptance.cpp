// Desk-scale acceptance run.  Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.  Pass criterion numbers (e.g. `acceptance 6 7`)
// to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "itevar/eval_harness.hpp"
#include "itevar/extended_crf.hpp"
#include "itevar/stats.hpp"
#include "itevar/tree.hpp"

using namespace itevar;

namespace {

struct Check {
  std::string what;
  bool ok;
};

struct Verdict {
  std::vector<Check> checks;
  void add(std::string what, bool ok) { checks.push_back({std::move(what), ok}); }
  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.ok; });
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

const AggregateRow& row_of(const ExperimentOutcome& out, const std::string& id, Estimator e) {
  for (const auto& sc : out.scenarios)
    if (sc.run.id == id)
      for (const auto& r : sc.aggregate)
        if (r.estimator == e) return r;
  std::fprintf(stderr, "missing aggregate row %s/%s\n", id.c_str(), to_string(e).c_str());
  std::abort();
}

ExperimentOutcome run(ExperimentPlan plan, const char* label) {
  const auto t0 = std::chrono::steady_clock::now();
  auto out = run_experiment(plan);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t reps = 0;
  for (const auto& sc : out.scenarios) reps += sc.replications.size();
  std::printf("  [%s] %zu replications in %.1f s, %zu failed\n", label, reps, secs, out.failures.size());
  for (const auto& f : out.failures)
    std::printf("    failure %s #%zu seed=%llu: %s\n", f.scenario_id.c_str(), f.index,
                static_cast<unsigned long long>(f.seed), f.message.c_str());
  std::fflush(stdout);
  return out;
}

ExperimentPlan base_plan(std::uint64_t seed, std::size_t reps, std::size_t trees, std::vector<Estimator> ests) {
  ExperimentPlan p;
  p.master_seed = seed;
  p.replications = reps;
  p.settings.params.num_trees = trees;
  p.settings.estimators = std::move(ests);
  p.densities = false;
  return p;
}

void report_row(const AggregateRow& r, const TrueTargets* truth = nullptr) {
  std::printf("  %-14s %-11s bias ate=%+.4f sd=%+.4f pep=%+.4f", r.scenario_id.c_str(),
              to_string(r.estimator).c_str(), r.ate.bias, r.sd.bias, r.pep.bias);
  if (r.ate.coverage) std::printf("  cov ate=%.2f sd=%.2f pep=%.2f", *r.ate.coverage, *r.sd.coverage, *r.pep.coverage);
  if (truth) std::printf("  (truth sd=%.4f pep=%.4f)", truth->sd, truth->pep);
  std::printf("\n");
}

// ---- criteria --------------------------------------------------------------

// c1 and c2 read the same baseline run.
ExperimentOutcome table_run;
bool table_done = false;

const ExperimentOutcome& table_rows() {
  if (!table_done) {
    auto p = base_plan(20261014, 200, 500, {Estimator::Crf, Estimator::Extended});
    for (double rho : {0.0, 0.5, 1.0})
      p.scenarios.push_back({fmt("rho%.1f", rho), ScenarioConfig::make(ScenarioKind::Baseline, 2000, rho, 1)});
    table_run = run(p, "baseline rho 0/0.5/1, 200 reps, 500 trees");
    for (const auto& sc : table_run.scenarios)
      for (const auto& r : sc.aggregate) report_row(r, &sc.truth);
    table_done = true;
  }
  return table_run;
}

Verdict c1() {
  Verdict v;
  const auto& out = table_rows();
  const auto& r = row_of(out, "rho0.0", Estimator::Crf);
  v.add("no failed replications", out.ok());
  v.add(fmt("SD bias %+.4f in -1.18 +- 0.08", r.sd.bias), within(r.sd.bias, -1.18, 0.08));
  v.add(fmt("PEP bias %+.4f in 0.33 +- 0.04", r.pep.bias), within(r.pep.bias, 0.33, 0.04));
  v.add(fmt("ATE bias %+.4f in 0 +- 0.02", r.ate.bias), within(r.ate.bias, 0.0, 0.02));
  return v;
}

Verdict c2() {
  Verdict v;
  const auto& out = table_rows();
  const std::map<std::string, double> expected_pep{{"rho0.0", 0.01}, {"rho0.5", 0.01}, {"rho1.0", -0.01}};
  for (const auto& [id, pep] : expected_pep) {
    const auto& r = row_of(out, id, Estimator::Extended);
    v.add(id + fmt(" SD bias %+.4f in [-0.05, 0.12]", r.sd.bias), r.sd.bias >= -0.05 && r.sd.bias <= 0.12);
    v.add(id + fmt(" PEP bias %+.4f in %+.2f +- 0.04", r.pep.bias, pep), within(r.pep.bias, pep, 0.04));
  }
  return v;
}

Verdict c3() {
  Verdict v;
  auto p = base_plan(20261015, 100, 500, {Estimator::Extended});
  p.scenarios = {{"kappa-0.5", ScenarioConfig::dependent_noise(-0.5, 2000, 0.0, 1)},
                 {"kappa+0.5", ScenarioConfig::dependent_noise(0.5, 2000, 0.0, 1)}};
  const auto out = run(p, "dependent noise, 100 reps, 500 trees");
  for (const auto& sc : out.scenarios) report_row(sc.aggregate[0], &sc.truth);
  const auto& neg = row_of(out, "kappa-0.5", Estimator::Extended);
  const auto& pos = row_of(out, "kappa+0.5", Estimator::Extended);
  v.add("no failed replications", out.ok());
  v.add(fmt("kappa=-0.5 SD bias %+.4f <= -0.5", neg.sd.bias), neg.sd.bias <= -0.5);
  v.add(fmt("kappa=+0.5 SD bias %+.4f >= 0.4", pos.sd.bias), pos.sd.bias >= 0.4);
  return v;
}

Verdict c4() {
  Verdict v;
  const auto scenario = ScenarioConfig::confounder_only(true, 2000, 1.0, 1);
  // Coverage needs intervals; the ablation alone is bootstrapped, at the
  // coverage-check profile (200 trees, B = 100).
  auto boot = base_plan(20261016, 100, 200, {Estimator::CrfNoOrth});
  boot.settings.bootstrap_b = 100;
  boot.scenarios = {{"strong", scenario}};
  const auto a = run(boot, "strong confounding, crf_no_orth, 100 reps, B=100, 200 trees");
  auto orth = base_plan(20261016, 100, 500, {Estimator::Crf});
  orth.scenarios = {{"strong", scenario}};
  const auto b = run(orth, "strong confounding, crf, 100 reps, 500 trees");
  const auto& no = row_of(a, "strong", Estimator::CrfNoOrth);
  const auto& crf = row_of(b, "strong", Estimator::Crf);
  report_row(no);
  report_row(crf);
  v.add("no failed replications", a.ok() && b.ok());
  v.add(fmt("crf_no_orth ATE bias %+.4f >= 1.5", no.ate.bias), no.ate.bias >= 1.5);
  v.add(fmt("crf_no_orth ATE coverage %.2f <= 0.05", no.ate.coverage.value_or(1.0)),
        no.ate.coverage && *no.ate.coverage <= 0.05);
  v.add(fmt("crf ATE |bias| %.4f <= 0.05", std::abs(crf.ate.bias)), std::abs(crf.ate.bias) <= 0.05);
  return v;
}

Verdict c5() {
  Verdict v;
  auto p = base_plan(20261017, 100, 200, {Estimator::Crf, Estimator::Extended});
  p.settings.bootstrap_b = 100;
  p.scenarios = {{"rho0.0", ScenarioConfig::make(ScenarioKind::Baseline, 2000, 0.0, 1)}};
  const auto out = run(p, "baseline rho 0, 100 reps, B=100, 200 trees");
  const auto& crf = row_of(out, "rho0.0", Estimator::Crf);
  const auto& ext = row_of(out, "rho0.0", Estimator::Extended);
  report_row(crf);
  report_row(ext);
  v.add("no failed replications", out.ok());
  for (const auto* r : {&crf, &ext}) {
    const double c = r->ate.coverage.value_or(-1.0);
    v.add(to_string(r->estimator) + fmt(" ATE coverage %.2f in [0.85, 1]", c), c >= 0.85 && c <= 1.0);
  }
  const double es = ext.sd.coverage.value_or(-1.0), cs = crf.sd.coverage.value_or(2.0);
  v.add(fmt("extended SD coverage %.2f >= 0.80", es), es >= 0.80);
  v.add(fmt("crf SD coverage %.2f <= 0.10", cs), cs <= 0.10);
  return v;
}

Verdict c6() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto sim = generate_dataset(ScenarioConfig::make(ScenarioKind::Baseline, 1000, 0.5, 606));
  const auto& data = sim.observed;
  ForestParams params;
  params.num_trees = 200;
  params.seed = 6;
  const auto forest = fit_causal_forest(data, params);

  double worst_w = 0.0;
  for (std::size_t i = 0; i < data.size(); i += 10) {
    worst_w = std::max(worst_w, std::abs(similarity_weights(forest, data.x.row(i)).sum() - 1.0));
    worst_w = std::max(worst_w, std::abs(similarity_weights_oob(forest, i).sum() - 1.0));
  }
  v.add(fmt("weights sum to 1 (worst %.1e)", worst_w), worst_w <= 1e-12);

  {
    RandomStream draw(61, 0);
    const auto roles = draw_roles(data.size(), params, draw);
    std::vector<std::size_t> est;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] != RowRole::Split) est.push_back(i);
    auto y = data.y, a = data.a;
    for (auto& t : a) t -= 0.16;
    auto y2 = y, a2 = a;
    RandomStream r(62, 0);
    for (std::size_t k = est.size(); k > 1; --k) {
      const auto j = r.below(k);
      std::swap(y2[est[k - 1]], y2[est[j]]);
      std::swap(a2[est[k - 1]], a2[est[j]]);
    }
    RandomStream r1(63, 0), r2(63, 0);
    const auto t1 = grow_honest_tree(data.x, roles, EffectRelabeler(y, a), params, r1);
    const auto t2 = grow_honest_tree(data.x, roles, EffectRelabeler(y2, a2), params, r2);
    bool same = t1.nodes.size() == t2.nodes.size() && t1.members == t2.members;
    for (std::size_t k = 0; same && k < t1.nodes.size(); ++k)
      same = t1.nodes[k].feature == t2.nodes[k].feature && t1.nodes[k].threshold == t2.nodes[k].threshold;
    v.add("honest tree structure ignores estimation-half targets", same && t1.nodes.size() > 1);
  }

  const auto fit = extend_causal_forest(forest);
  double worst_id = 0.0;
  bool theta_exact = true;
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const double t = fit.tau_hat[i], th = fit.theta0_hat[i];
    worst_id = std::max(worst_id, std::abs(fit.sigma1_sq_hat[i] + t * t + 2.0 * t * th - fit.delta_hat[i]));
    theta_exact = theta_exact && th == forest.centered.m_hat_oob[i] - forest.centered.e_hat_oob[i] * t;
  }
  v.add(fmt("sigma1^2 + tau^2 + 2 tau theta0 = Delta (worst %.1e)", worst_id), worst_id <= 1e-12);
  v.add("theta0 = m(-i) - e(-i) tau exactly", theta_exact);

  double worst_int = 0.0;
  for (const auto& d : {ite_density(fit, DensityMethod::GaussianMixture), kde_over_cates(fit.tau_hat)})
    worst_int = std::max(worst_int, std::abs(stats::trapezoid(d.grid, d.density) - 1.0));
  v.add(fmt("densities integrate to 1 (worst %.1e)", worst_int), worst_int <= 1e-3);

  bool closed_ok = true;
  for (const auto& cfg : {ScenarioConfig::make(ScenarioKind::Baseline, 2000, 0.0, 1),
                          ScenarioConfig::dependent_noise(-0.5, 2000, 0.0, 1),
                          ScenarioConfig::dependent_noise(0.5, 2000, 0.0, 1)}) {
    const auto exact = true_targets(cfg);
    const auto mc = true_targets_monte_carlo(cfg, 1'000'000);
    closed_ok = closed_ok && std::abs(exact.ate - mc.value.ate) <= 3 * mc.se.ate &&
                std::abs(exact.sd - mc.value.sd) <= 3 * mc.se.sd &&
                std::abs(exact.pep - mc.value.pep) <= 3 * mc.se.pep;
  }
  v.add("closed-form targets within 3 SE of Monte Carlo", closed_ok);

  {
    ExperimentPlan plan = base_plan(66, 3, 20, {Estimator::Crf, Estimator::Extended});
    plan.settings.bootstrap_b = 2;
    plan.truth_mc_n = 100'000;
    plan.scenarios = {{"b", ScenarioConfig::make(ScenarioKind::Baseline, 300, 0.0, 1)}};
    plan.workers = 1;
    const auto x = run_experiment(plan);
    plan.workers = 4;
    const auto y = run_experiment(plan);
    bool same = x.ok() && y.ok();
    for (std::size_t r = 0; same && r < 3; ++r)
      for (std::size_t e = 0; e < 2; ++e) {
        const auto &p = x.scenarios[0].replications[r].estimates[e], &q = y.scenarios[0].replications[r].estimates[e];
        same = same && p.point.ate == q.point.ate && p.point.sd == q.point.sd && p.point.pep == q.point.pep &&
               p.ci_sd->lo == q.ci_sd->lo && p.ci_sd->hi == q.ci_sd->hi;
      }
    v.add("results identical for 1 and 4 workers", same);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  v.add(fmt("suite time %.1f s < 60 s", secs), secs < 60.0);
  return v;
}

Verdict c7() {
  Verdict v;
  const auto d = generate_dataset(ScenarioConfig::make(ScenarioKind::Baseline, 2000, 0.0, 7));
  const std::vector<double> s2(d.size(), 1.4 * 1.4);
  const double ate = stats::mean(d.hidden.tau_x);
  const double sd = population_sd(d.hidden.tau_x, s2, ate);
  const double pep = pep_gaussian(d.hidden.tau_x, s2);
  v.add(fmt("oracle SD %.4f in 1.41 +- 0.01", sd), within(sd, 1.41, 0.01));
  v.add(fmt("oracle PEP %.4f in 0.64 +- 0.005", pep), within(pep, 0.64, 0.005));
  return v;
}

Verdict c8() {
  Verdict v;
  auto p = base_plan(20261018, 100, 500, {Estimator::Extended});
  p.scenarios = {{"lognormal", ScenarioConfig::make(ScenarioKind::LogNormalU1, 2000, 0.0, 1)}};
  const auto out = run(p, "lognormal U1, 100 reps, 500 trees");
  const auto& r = row_of(out, "lognormal", Estimator::Extended);
  report_row(r, &out.scenarios[0].truth);
  v.add("no failed replications", out.ok());
  v.add(fmt("SD bias %+.4f in 0 +- 0.10", r.sd.bias), within(r.sd.bias, 0.0, 0.10));
  v.add(fmt("PEP bias %+.4f >= 0.07", r.pep.bias), r.pep.bias >= 0.07);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  // Cheap criteria first so their verdicts appear early.
  const std::vector<std::pair<int, std::function<Verdict()>>> all{
      {6, c6}, {7, c7}, {1, c1}, {2, c2}, {3, c3}, {8, c8}, {4, c4}, {5, c5}};
  std::set<int> wanted;
  for (int k = 1; k < argc; ++k) wanted.insert(std::atoi(argv[k]));

  std::map<int, bool> results;
  for (const auto& [id, fn] : all) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    std::printf("criterion %d\n", id);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    const auto verdict = fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& c : verdict.checks) std::printf("  %s %s\n", c.ok ? "ok  " : "MISS", c.what.c_str());
    std::printf("%s c%d (%.0f s)\n", verdict.ok() ? "PASS" : "FAIL", id, secs);
    std::fflush(stdout);
    results[id] = verdict.ok();
  }
  std::printf("summary:");
  bool all_ok = true;
  for (const auto& [id, ok] : results) {
    std::printf(" c%d=%s", id, ok ? "PASS" : "FAIL");
    all_ok = all_ok && ok;
  }
  std::printf("\n");
  return all_ok ? 0 : 1;
}
