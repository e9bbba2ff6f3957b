#include "itevar/sim_dgp.hpp"

#include <cmath>
#include <stdexcept>

#include "itevar/errors.hpp"
#include "itevar/rng.hpp"
#include "itevar/stats.hpp"

namespace itevar {

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Baseline: return "baseline";
    case ScenarioKind::DependentNoise: return "dependent";
    case ScenarioKind::LogNormalU1: return "lognormal";
    case ScenarioKind::NonlinearCate: return "nonlinear";
    case ScenarioKind::ConfounderOnly: return "confounder";
    case ScenarioKind::Randomized: return "randomized";
  }
  return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
  for (auto k : {ScenarioKind::Baseline, ScenarioKind::DependentNoise, ScenarioKind::LogNormalU1,
                 ScenarioKind::NonlinearCate, ScenarioKind::ConfounderOnly, ScenarioKind::Randomized})
    if (to_string(k) == name) return k;
  throw ConfigError("scenario", "unknown scenario kind '" + name + "'");
}

ScenarioConfig ScenarioConfig::make(ScenarioKind kind, std::size_t n, double rho, std::uint64_t seed) {
  ScenarioConfig c;
  c.kind = kind;
  c.n = n;
  c.rho = rho;
  c.seed = seed;
  if (kind == ScenarioKind::NonlinearCate) {
    c.tau_sex = 0.10;
    c.tau_sbp = 0.20;
  }
  if (kind == ScenarioKind::ConfounderOnly) c.tau_sex = 0.0;
  return c;
}

ScenarioConfig ScenarioConfig::dependent_noise(double kappa, std::size_t n, double rho,
                                               std::uint64_t seed) {
  auto c = make(ScenarioKind::DependentNoise, n, rho, seed);
  c.kappa = kappa;
  return c;
}

ScenarioConfig ScenarioConfig::confounder_only(bool strong, std::size_t n, double rho,
                                               std::uint64_t seed) {
  auto c = make(ScenarioKind::ConfounderOnly, n, rho, seed);
  c.strong = strong;
  if (strong) {
    c.beta_sex = 3.2;
    c.alpha_sex = 3.0;
  }
  return c;
}

void ScenarioConfig::validate() const {
  if (n == 0) throw ConfigError("n", "sample size must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho", "must lie in [0, 1]");
  if (!(delta >= 0.0)) throw ConfigError("delta", "must be non-negative");
  if (!(sigma0 >= 0.0)) throw ConfigError("sigma0", "must be non-negative");
  if (!(sigma1 >= 0.0)) throw ConfigError("sigma1", "must be non-negative");
  if (!(p_sex > 0.0 && p_sex < 1.0)) throw ConfigError("p_sex", "must lie in (0, 1)");
  if (!(randomized_p > 0.0 && randomized_p < 1.0))
    throw ConfigError("randomized_p", "must lie in (0, 1)");
  if (kind == ScenarioKind::DependentNoise) {
    if (!(kappa >= -1.0 && kappa <= 1.0)) throw ConfigError("kappa", "must lie in [-1, 1]");
  } else if (kappa != 0.0) {
    throw ConfigError("kappa", "only valid for the dependent scenario");
  }
  if (strong && kind != ScenarioKind::ConfounderOnly)
    throw ConfigError("strong", "only valid for the confounder scenario");
  for (double v : {alpha0, alpha_sex, alpha_sbp, beta0, beta_sex, beta_sbp, tau0, tau_sex, tau_sbp})
    if (!std::isfinite(v)) throw ConfigError("coefficients", "must be finite");
}

double ScenarioConfig::effective_sigma1() const {
  if (kind != ScenarioKind::DependentNoise) return sigma1;
  return -sigma0 * kappa + std::sqrt(sigma0 * sigma0 * kappa * kappa + sigma1 * sigma1);
}

double ScenarioConfig::cate(double x_sex, double x_sbp) const {
  if (kind == ScenarioKind::NonlinearCate) return (tau0 + tau_sex * x_sex) * std::exp(tau_sbp * x_sbp);
  return tau0 + tau_sex * x_sex + tau_sbp * x_sbp;
}

bool ScenarioConfig::gaussian_ite() const {
  return kind != ScenarioKind::LogNormalU1 && kind != ScenarioKind::NonlinearCate;
}

namespace {

struct Row {
  double x_sex, x_sbp, x0, a, y0, ite, tau_x, u1, n_y;
};

// Fixed draw order per row: sex, sbp, z_noise, z_modifier, z_proxy, treatment.
Row draw_row(const ScenarioConfig& c, double sigma1, RandomStream& rs) {
  Row r{};
  r.x_sex = rs.uniform() < c.p_sex ? 1.0 : 0.0;
  r.x_sbp = rs.normal();
  const double z_noise = rs.normal();
  const double z_mod = rs.normal();
  const double z_proxy = rs.normal();
  const double u_a = rs.uniform();

  r.n_y = c.sigma0 * z_noise;
  switch (c.kind) {
    case ScenarioKind::DependentNoise:
      r.u1 = sigma1 * (c.kappa * z_noise + std::sqrt(1.0 - c.kappa * c.kappa) * z_mod);
      break;
    case ScenarioKind::LogNormalU1: {
      const double s2 = std::log(0.5 * std::sqrt(4.0 * sigma1 * sigma1 + 1.0) + 0.5);
      const double shift = std::exp(0.5 * s2);
      r.u1 = std::exp(std::sqrt(s2) * z_mod) - shift;
      break;
    }
    default:
      r.u1 = sigma1 * z_mod;
  }
  // X0 | U1 = u ~ N(u*delta*rho, delta^2 sigma1^2 (1 - rho^2)); for Gaussian U1
  // this is the stated bivariate normal.
  r.x0 = c.delta * (c.rho * r.u1 + std::sqrt(1.0 - c.rho * c.rho) * sigma1 * z_proxy);

  if (c.kind == ScenarioKind::Randomized) {
    r.a = u_a < c.randomized_p ? 1.0 : 0.0;
  } else {
    const double lin = c.alpha0 + c.alpha_sbp * r.x_sbp + c.alpha_sex * r.x_sex;
    const double prob = 1.0 / (1.0 + std::exp(-lin));
    r.a = prob > u_a ? 1.0 : 0.0;
  }
  r.y0 = c.beta0 + c.beta_sex * r.x_sex + c.beta_sbp * r.x_sbp + r.n_y;
  r.tau_x = c.cate(r.x_sex, r.x_sbp);
  r.ite = r.tau_x + r.u1;
  return r;
}

}  // namespace

SimulatedDataset generate_dataset(const ScenarioConfig& config) {
  config.validate();
  const std::size_t n = config.n;
  const double sigma1 = config.effective_sigma1();

  SimulatedDataset ds;
  FeatureMatrix x(n, kNumFeatures);
  ds.observed.a.resize(n);
  ds.observed.y.resize(n);
  auto& h = ds.hidden;
  for (auto* v : {&h.y0, &h.y1, &h.ite, &h.tau_x, &h.u1, &h.n_y}) v->resize(n);

#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rs(config.seed, i);
    const Row r = draw_row(config, sigma1, rs);
    x(i, kFeatureSex) = r.x_sex;
    x(i, kFeatureSbp) = r.x_sbp;
    x(i, kFeatureX0) = r.x0;
    ds.observed.a[i] = r.a;
    h.y0[i] = r.y0;
    h.y1[i] = r.y0 + r.ite;
    h.ite[i] = h.y1[i] - h.y0[i];
    h.tau_x[i] = r.tau_x;
    h.u1[i] = r.u1;
    h.n_y[i] = r.n_y;
    ds.observed.y[i] = r.a == 1.0 ? h.y1[i] : h.y0[i];
  }
  ds.observed.x = std::move(x);
  return ds;
}

namespace {

// ITE | X_sex = s ~ N(tau0 + tau_sex*s, tau_sbp^2 + sigma1^2) for linear CATEs.
struct MixtureComponent {
  double weight, mean, sd;
};

std::vector<MixtureComponent> ite_mixture(const ScenarioConfig& c) {
  const double s1 = c.effective_sigma1();
  const double sd = std::sqrt(c.tau_sbp * c.tau_sbp + s1 * s1);
  return {{1.0 - c.p_sex, c.tau0, sd}, {c.p_sex, c.tau0 + c.tau_sex, sd}};
}

}  // namespace

MonteCarloTargets true_targets_monte_carlo(const ScenarioConfig& config, std::size_t mc_n) {
  config.validate();
  if (mc_n < 2) throw ConfigError("mc_n", "need at least two Monte Carlo draws");
  const double sigma1 = config.effective_sigma1();
  const std::uint64_t seed = derive_seed(config.seed, 0x6d63, 0);
  double s1 = 0.0, s2 = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < mc_n; ++i) {
    RandomStream rs(seed, i);
    const double b = draw_row(config, sigma1, rs).ite;
    s1 += b;
    s2 += b * b;
    pos += b > 0.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(mc_n);
  const double mean = s1 / n;
  const double var = (s2 - n * mean * mean) / (n - 1.0);
  const double pep = pos / n;
  // SE of the SD via the delta method under approximate normality.
  MonteCarloTargets out;
  out.value = {mean, std::sqrt(var), pep};
  out.se = {std::sqrt(var / n), std::sqrt(var / (2.0 * n)), std::sqrt(pep * (1.0 - pep) / n)};
  return out;
}

TrueTargets true_targets(const ScenarioConfig& config, std::size_t mc_n) {
  config.validate();
  if (!config.gaussian_ite()) {
    if (mc_n < 100'000) throw ConfigError("mc_n", "need at least 1e5 draws without a closed form");
    return true_targets_monte_carlo(config, mc_n).value;
  }
  const double p = config.p_sex;
  const double s1 = config.effective_sigma1();
  TrueTargets t;
  t.ate = config.tau0 + config.tau_sex * p;
  t.sd = std::sqrt(config.tau_sex * config.tau_sex * p * (1.0 - p) + config.tau_sbp * config.tau_sbp +
                   s1 * s1);
  for (const auto& comp : ite_mixture(config)) {
    const double prob_pos = comp.sd > 0.0 ? stats::normal_cdf(comp.mean / comp.sd)
                                          : (comp.mean > 0.0 ? 1.0 : comp.mean < 0.0 ? 0.0 : 0.5);
    t.pep += comp.weight * prob_pos;
  }
  return t;
}

std::vector<double> true_ite_density(const ScenarioConfig& config, std::span<const double> grid) {
  config.validate();
  if (!config.gaussian_ite())
    throw std::domain_error("true_ite_density: no closed form for scenario " + to_string(config.kind));
  const auto comps = ite_mixture(config);
  std::vector<double> f(grid.size(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k)
    for (const auto& c : comps) f[k] += c.weight * stats::normal_pdf(grid[k], c.mean, c.sd);
  return f;
}

}  // namespace itevar
