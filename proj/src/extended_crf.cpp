#include "itevar/extended_crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "itevar/errors.hpp"
#include "itevar/rng.hpp"
#include "itevar/stats.hpp"

namespace itevar {

namespace {

constexpr double kMinDenominator = 1e-12;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": length mismatch");
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

}  // namespace

ExtendedFit fit_extended(const ObservedData& data, const ForestParams& params, const CausalOptions& options) {
  if (!options.orthogonalize) throw EstimationError("extended CRF requires orthogonalization");
  return extend_causal_forest(fit_causal_forest(data, params, options));
}

ExtendedFit extend_causal_forest(const CausalForest& forest) {
  if (!forest.options.orthogonalize) throw EstimationError("extended CRF requires orthogonalization");
  const std::size_t n = forest.size();
  const auto& yt = forest.centered.y_tilde;
  const auto& at = forest.centered.a_tilde;
  const bool squared = forest.options.denominator == Denominator::Squared;

  std::vector<double> y2(n);
  for (std::size_t i = 0; i < n; ++i) y2[i] = forest.y[i] * forest.y[i];
  const auto h_forest = fit_regression_forest(forest.train_x, y2,
                                              component_params(forest.params, seed_tag::kNuisanceH), "Y^2");

  ExtendedFit fit;
  fit.h_hat_oob = h_forest.predict_oob_all();

  std::vector<double> num_tau(n), den(n), num_delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    num_tau[i] = yt[i] * at[i];
    den[i] = squared ? at[i] * at[i] : at[i];
    num_delta[i] = (y2[i] - fit.h_hat_oob[i]) * at[i];
  }
  const std::span<const double> columns[] = {num_tau, den, num_delta};
  std::vector<std::uint8_t> defined;
  const auto means = oob_weighted_means(forest.effect_trees, forest.train_x, columns, defined,
                                        forest.params.num_threads);

  fit.tau_hat.assign(n, kNaN);
  fit.delta_hat.assign(n, kNaN);
  fit.theta0_hat.assign(n, kNaN);
  fit.sigma1_sq_hat.assign(n, kNaN);
  for (std::size_t i = 0; i < n; ++i) {
    const double* m = means.data() + 3 * i;
    if (!defined[i] || !(std::abs(m[1]) >= kMinDenominator)) continue;
    const double tau = m[0] / m[1];
    const double delta = m[2] / m[1];
    const double theta0 = forest.centered.m_hat_oob[i] - forest.centered.e_hat_oob[i] * tau;
    fit.tau_hat[i] = tau;
    fit.delta_hat[i] = delta;
    fit.theta0_hat[i] = theta0;
    fit.sigma1_sq_hat[i] = conditional_variance(delta, tau, theta0);
  }
  const auto ate = estimate_ate_aipw(forest, fit.tau_hat);
  fit.ate = ate.ate;
  fit.ate_se = ate.se;
  return fit;
}

ExtendedPoint extended_from_weights(const SimilarityWeights& w, std::span<const double> y_tilde,
                                    std::span<const double> a_tilde, std::span<const double> y2_tilde,
                                    Denominator denominator) {
  double num_tau = 0.0, num_delta = 0.0, den = 0.0;
  for (const auto& [j, wj] : w.weights) {
    num_tau += wj * y_tilde[j] * a_tilde[j];
    num_delta += wj * y2_tilde[j] * a_tilde[j];
    den += wj * (denominator == Denominator::Squared ? a_tilde[j] * a_tilde[j] : a_tilde[j]);
  }
  if (!(std::abs(den) >= kMinDenominator)) throw NotIdentified("extended: weighted treatment variation is zero");
  return {num_tau / den, num_delta / den};
}

double population_sd(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat, double ate) {
  check_lengths(tau_hat, sigma1_sq_hat, "population_sd");
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    if (!std::isfinite(tau_hat[i]) || !std::isfinite(sigma1_sq_hat[i])) continue;
    s += sigma1_sq_hat[i] + tau_hat[i] * tau_hat[i];
    ++used;
  }
  if (used == 0) throw EstimationError("population_sd: no finite rows");
  return std::sqrt(std::max(0.0, s / static_cast<double>(used) - ate * ate));
}

double population_sd(const ExtendedFit& fit) { return population_sd(fit.tau_hat, fit.sigma1_sq_hat, fit.ate); }

double pep_gaussian(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat) {
  check_lengths(tau_hat, sigma1_sq_hat, "pep_gaussian");
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double t = tau_hat[i], v = sigma1_sq_hat[i];
    if (!std::isfinite(t) || !std::isfinite(v)) continue;
    if (v > 0.0) s += stats::normal_cdf(t / std::sqrt(v));
    else s += t > 0.0 ? 1.0 : (t < 0.0 ? 0.0 : 0.5);
    ++used;
  }
  if (used == 0) throw EstimationError("pep_gaussian: no finite rows");
  return s / static_cast<double>(used);
}

double pep_gaussian(const ExtendedFit& fit) { return pep_gaussian(fit.tau_hat, fit.sigma1_sq_hat); }

double pep_cate_only(std::span<const double> tau_hat) {
  if (tau_hat.empty()) throw std::invalid_argument("pep_cate_only: empty input");
  const auto pos = std::count_if(tau_hat.begin(), tau_hat.end(), [](double t) { return t > 0.0; });
  return static_cast<double>(pos) / static_cast<double>(tau_hat.size());
}

double sd_cate_only(std::span<const double> tau_hat) {
  if (tau_hat.size() < 2) throw std::invalid_argument("sd_cate_only: need at least 2 values");
  return stats::sd(tau_hat);
}

std::string to_string(DensityMethod m) {
  return m == DensityMethod::KdeOverCates ? "kde_over_cates" : "gaussian_mixture";
}

double kde_bandwidth(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("kde_bandwidth: empty input");
  const double n = static_cast<double>(x.size());
  const double sd = x.size() >= 2 ? stats::sd(x) : 0.0;
  const double iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
  double lo = std::min(sd, iqr / 1.34);
  if (!(lo > 0.0)) lo = sd;
  if (!(lo > 0.0)) lo = std::abs(x[0]);
  if (!(lo > 0.0)) lo = 1.0;
  return 0.9 * lo * std::pow(n, -0.2);
}

std::vector<double> make_grid(double lo, double hi, std::size_t points) {
  if (points < 2) throw ConfigError("grid.points", "need at least 2 points");
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) throw ConfigError("grid", "need finite lo < hi");
  std::vector<double> g(points);
  const double span = hi - lo;
  const double last = static_cast<double>(points - 1);
  for (std::size_t k = 0; k < points; ++k) g[k] = lo + span * static_cast<double>(k) / last;
  g.back() = hi;
  return g;
}

namespace {

std::vector<double> finite_values(std::span<const double> x) {
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x)
    if (std::isfinite(v)) out.push_back(v);
  if (out.empty()) throw std::invalid_argument("density: no finite values");
  return out;
}

std::vector<double> resolve_grid(const GridSpec& spec, double lo, double hi) {
  return make_grid(spec.lo.value_or(lo), spec.hi.value_or(hi), spec.points);
}

std::vector<double> mixture_on(std::span<const double> grid, std::span<const double> mu,
                               std::span<const double> sd) {
  std::vector<double> f(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += stats::normal_pdf(grid[g], mu[i], sd[i]);
    f[g] = s / static_cast<double>(mu.size());
  }
  return f;
}

}  // namespace

ITEDensity kde_over_cates(std::span<const double> tau_hat, const GridSpec& spec) {
  const auto tau = finite_values(tau_hat);
  const double bw = kde_bandwidth(tau);
  const auto [mn, mx] = std::minmax_element(tau.begin(), tau.end());
  ITEDensity out;
  out.method = DensityMethod::KdeOverCates;
  out.bandwidth = bw;
  out.grid = resolve_grid(spec, *mn - 3.0 * bw, *mx + 3.0 * bw);
  out.density = mixture_on(out.grid, tau, std::vector<double>(tau.size(), bw));
  return out;
}

ITEDensity gaussian_mixture_density(std::span<const double> tau_hat, std::span<const double> sigma1_sq_hat,
                                    const GridSpec& spec) {
  check_lengths(tau_hat, sigma1_sq_hat, "gaussian_mixture_density");
  std::vector<double> mu, var;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    if (!std::isfinite(tau_hat[i]) || !std::isfinite(sigma1_sq_hat[i])) continue;
    mu.push_back(tau_hat[i]);
    var.push_back(sigma1_sq_hat[i]);
  }
  if (mu.empty()) throw std::invalid_argument("gaussian_mixture_density: no finite rows");
  const double bw = kde_bandwidth(mu);
  std::vector<double> sd(mu.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    sd[i] = var[i] > 0.0 ? std::sqrt(var[i]) : bw;
    lo = std::min(lo, mu[i] - 6.0 * sd[i]);
    hi = std::max(hi, mu[i] + 6.0 * sd[i]);
  }
  ITEDensity out;
  out.method = DensityMethod::GaussianMixture;
  out.bandwidth = bw;
  out.grid = resolve_grid(spec, lo, hi);
  out.density = mixture_on(out.grid, mu, sd);
  return out;
}

ITEDensity ite_density(const ExtendedFit& fit, DensityMethod method, const GridSpec& grid) {
  if (method == DensityMethod::KdeOverCates) return kde_over_cates(fit.tau_hat, grid);
  return gaussian_mixture_density(fit.tau_hat, fit.sigma1_sq_hat, grid);
}

}  // namespace itevar
