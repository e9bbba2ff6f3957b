#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "itevar/errors.hpp"
#include "itevar/extended_crf.hpp"
#include "itevar/sim_dgp.hpp"
#include "itevar/stats.hpp"

using namespace itevar;

namespace {

ForestParams small_params(std::size_t trees) {
  ForestParams p;
  p.num_trees = trees;
  return p;
}

SimilarityWeights make_weights(const std::vector<double>& w) {
  SimilarityWeights s;
  for (std::uint32_t j = 0; j < w.size(); ++j)
    if (w[j] > 0) s.weights.emplace_back(j, w[j]);
  s.contributing_trees = 1;
  return s;
}

}  // namespace

TEST_CASE("fitted extension satisfies the variance identity and the theta0 definition") {
  const auto data = generate_dataset(ScenarioConfig::make(ScenarioKind::Baseline, 600, 0.5, 71)).observed;
  const auto forest = fit_causal_forest(data, small_params(60));
  const auto fit = extend_causal_forest(forest);
  REQUIRE(fit.size() == data.size());
  for (std::size_t i = 0; i < fit.size(); ++i) {
    REQUIRE(std::isfinite(fit.tau_hat[i]));
    const double lhs = fit.sigma1_sq_hat[i] + fit.tau_hat[i] * fit.tau_hat[i] + 2.0 * fit.tau_hat[i] * fit.theta0_hat[i];
    CHECK(lhs == doctest::Approx(fit.delta_hat[i]).epsilon(1e-12));
    CHECK(fit.theta0_hat[i] == forest.centered.m_hat_oob[i] - forest.centered.e_hat_oob[i] * fit.tau_hat[i]);
  }
  // The CATEs are the forest's own OOB CATEs, and the ATE is AIPW on them.
  CHECK(fit.tau_hat == predict_cate_oob_all(forest));
  CHECK(fit.ate == estimate_ate_aipw(forest, fit.tau_hat).ate);

  // Direct evaluation through explicit OOB weights.
  std::vector<double> y2t(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y2t[i] = data.y[i] * data.y[i] - fit.h_hat_oob[i];
  for (std::size_t i = 0; i < data.size(); i += 29) {
    const auto p = extended_from_weights(similarity_weights_oob(forest, i), forest.centered.y_tilde,
                                         forest.centered.a_tilde, y2t, Denominator::Squared);
    CHECK(p.tau == doctest::Approx(fit.tau_hat[i]).epsilon(1e-9));
    CHECK(p.delta == doctest::Approx(fit.delta_hat[i]).epsilon(1e-9));
  }
}

TEST_CASE("weighted ratios on a fixture with known components") {
  // Y_i = theta0 + n_i + (tau + u_i) A_i with fixed weights and propensity.
  const std::vector<double> w{0.1, 0.2, 0.3, 0.15, 0.25, 0.0};
  const std::vector<double> a{1, 0, 1, 0, 1, 1}, e{0.4, 0.3, 0.6, 0.5, 0.45, 0.5};
  const std::vector<double> nn{0.3, -0.2, 0.1, 0.4, -0.5, 9}, u{0.5, 0.1, -0.4, 0.2, 0.3, 9};
  const double theta0 = 1.2, tau = 0.7;
  const double m = 1.0, h = 2.5;  // arbitrary nuisance plug-ins
  std::vector<double> yt(6), at(6), y2t(6);
  for (std::size_t i = 0; i < 6; ++i) {
    const double y = theta0 + nn[i] + (tau + u[i]) * a[i];
    yt[i] = y - m;
    at[i] = a[i] - e[i];
    y2t[i] = y * y - h;
  }
  double nt = 0, nd = 0, d2 = 0, d1 = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    nt += w[i] * yt[i] * at[i];
    nd += w[i] * y2t[i] * at[i];
    d2 += w[i] * at[i] * at[i];
    d1 += w[i] * at[i];
  }
  const auto sq = extended_from_weights(make_weights(w), yt, at, y2t, Denominator::Squared);
  CHECK(sq.tau == doctest::Approx(nt / d2).epsilon(1e-14));
  CHECK(sq.delta == doctest::Approx(nd / d2).epsilon(1e-14));
  const auto lit = extended_from_weights(make_weights(w), yt, at, y2t, Denominator::PaperLiteral);
  CHECK(lit.tau == doctest::Approx(nt / d1).epsilon(1e-14));
  CHECK(lit.delta == doctest::Approx(nd / d1).epsilon(1e-14));
  const double th = 0.9;
  const double s2 = conditional_variance(sq.delta, sq.tau, th);
  CHECK(s2 + sq.tau * sq.tau + 2 * sq.tau * th == doctest::Approx(sq.delta).epsilon(1e-14));
}

TEST_CASE("noiseless homogeneous fixture has zero conditional variance") {
  // Y = theta0 + tau A, e = 1/2, exact m and h: Y^2 - h = (A - e)(tau^2 + 2 tau theta0).
  const double theta0 = 1.5, tau = 0.5, e = 0.5;
  const double m = theta0 + e * tau;
  const double h = (1 - e) * theta0 * theta0 + e * (theta0 + tau) * (theta0 + tau);
  const std::vector<double> a{1, 0, 0, 1, 1, 0, 1, 0};
  std::vector<double> yt, at, y2t;
  for (double ai : a) {
    const double y = theta0 + tau * ai;
    yt.push_back(y - m);
    at.push_back(ai - e);
    y2t.push_back(y * y - h);
  }
  const auto p = extended_from_weights(make_weights({0.1, 0.2, 0.05, 0.15, 0.1, 0.2, 0.1, 0.1}), yt, at, y2t,
                                       Denominator::Squared);
  CHECK(p.tau == doctest::Approx(tau).epsilon(1e-14));
  CHECK(std::abs(conditional_variance(p.delta, p.tau, m - e * p.tau)) < 1e-12);
}

TEST_CASE("population SD and PEP hand cases") {
  const std::vector<double> c(5, 0.7), zero(5, 0.0);
  CHECK(population_sd(c, zero, 0.7) == doctest::Approx(0.0));
  CHECK(population_sd(std::vector<double>{0, 1}, std::vector<double>{0, 0}, 0.5) == doctest::Approx(0.5));
  // Negative raw variances enter the mean unclamped; the result is clamped at 0.
  CHECK(population_sd(std::vector<double>{0, 0}, std::vector<double>{-1, 0.5}, 0.0) == 0.0);
  CHECK(population_sd(std::vector<double>{1, 1}, std::vector<double>{-0.5, 1.5}, 1.0) == doctest::Approx(std::sqrt(0.5)));

  CHECK(pep_gaussian(std::vector<double>{0.1, 2.0, 5.0}, std::vector<double>{0, 0, 0}) == 1.0);
  CHECK(pep_gaussian(std::vector<double>{0.0}, std::vector<double>{1.0}) == 0.5);
  CHECK(pep_gaussian(std::vector<double>{0.0, -1.0}, std::vector<double>{0.0, -2.0}) == 0.25);
  CHECK(pep_gaussian(std::vector<double>{1.0}, std::vector<double>{1.0}) == doctest::Approx(stats::normal_cdf(1.0)));
  const double nan = std::nan("");
  CHECK(pep_gaussian(std::vector<double>{1.0, nan}, std::vector<double>{0.0, 1.0}) == 1.0);

  CHECK(pep_cate_only(std::vector<double>{1, 1, 1}) == 1.0);
  CHECK(sd_cate_only(std::vector<double>{1, 1, 1}) == 0.0);
  CHECK(pep_cate_only(std::vector<double>{-1, 1}) == 0.5);
  CHECK(sd_cate_only(std::vector<double>{-1, 1}) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS(sd_cate_only(std::vector<double>{1}));
  CHECK_THROWS(population_sd(std::vector<double>{1}, std::vector<double>{1, 2}, 0.0));
}

TEST_CASE("oracle plug-ins recover the population characteristics") {
  const auto cfg = ScenarioConfig::make(ScenarioKind::Baseline, 2000, 0.0, 72);
  const auto d = generate_dataset(cfg);
  const std::vector<double> s2(d.size(), 1.96);
  CHECK(std::abs(population_sd(d.hidden.tau_x, s2, 0.5) - 1.41) < 0.01);
  CHECK(std::abs(pep_gaussian(d.hidden.tau_x, s2) - 0.64) < 0.005);

  const auto f = gaussian_mixture_density(d.hidden.tau_x, s2, {512, -5.0, 6.0});
  const auto truth = true_ite_density(cfg, f.grid);
  double worst = 0;
  for (std::size_t g = 0; g < f.grid.size(); ++g) worst = std::max(worst, std::abs(f.density[g] - truth[g]));
  CHECK(worst < 0.01);
}

TEST_CASE("densities integrate to one") {
  RandomStream rs(73, 0);
  for (std::size_t n : {10, 200, 2000}) {
    std::vector<double> tau(n), s2(n);
    for (std::size_t i = 0; i < n; ++i) {
      tau[i] = 0.5 + rs.normal();
      s2[i] = i % 4 == 0 ? -0.3 : rs.uniform() * 3.0;
    }
    const auto k = kde_over_cates(tau);
    CHECK(k.grid.size() == 512);
    CHECK(k.method == DensityMethod::KdeOverCates);
    CHECK(std::abs(stats::trapezoid(k.grid, k.density) - 1.0) < 1e-3);
    const auto m = gaussian_mixture_density(tau, s2);
    CHECK(m.method == DensityMethod::GaussianMixture);
    CHECK(std::abs(stats::trapezoid(m.grid, m.density) - 1.0) < 1e-3);
    for (double v : m.density) CHECK(v >= 0.0);
  }
  // All-equal CATEs with zero variance fall back to a positive bandwidth.
  const std::vector<double> same(20, 1.0), none(20, 0.0);
  const auto z = gaussian_mixture_density(same, none);
  CHECK(z.bandwidth > 0.0);
  CHECK(std::abs(stats::trapezoid(z.grid, z.density) - 1.0) < 1e-3);
}

TEST_CASE("single standard normal component peaks at 1/sqrt(2 pi)") {
  const auto f = gaussian_mixture_density(std::vector<double>{0.0}, std::vector<double>{1.0}, {513, -4.0, 4.0});
  CHECK(f.grid[256] == 0.0);
  CHECK(std::abs(f.density[256] - 1.0 / std::sqrt(2.0 * std::numbers::pi)) < 1e-6);
}

TEST_CASE("bandwidth rule and grids") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const double iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
  CHECK(kde_bandwidth(x) == doctest::Approx(0.9 * std::min(stats::sd(x), iqr / 1.34) * std::pow(10.0, -0.2)));
  CHECK(kde_bandwidth(std::vector<double>{2.0}) == doctest::Approx(0.9 * 2.0));
  CHECK(kde_bandwidth(std::vector<double>{0.0}) == doctest::Approx(0.9));
  const auto g = make_grid(-1.0, 1.0, 5);
  CHECK(g == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});
  CHECK_THROWS_AS(make_grid(1.0, 1.0, 5), ConfigError);
  CHECK_THROWS_AS(make_grid(0.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(kde_over_cates(std::vector<double>{1.0}, {0}), ConfigError);
  CHECK(to_string(DensityMethod::GaussianMixture) == "gaussian_mixture");
}

TEST_CASE("homogeneous effect gives small estimated conditional variance") {
  // A single dataset's row mean scatters by about 0.3, so the bound is on
  // the expected value: the replication mean must be within 0.1 of zero up
  // to three Monte Carlo standard errors.
  std::vector<double> means;
  for (std::uint64_t seed = 100; seed < 112; ++seed) {
    auto cfg = ScenarioConfig::make(ScenarioKind::Baseline, 2000, 0.5, seed);
    cfg.sigma1 = 0.0;
    auto p = small_params(200);
    p.seed = seed;
    means.push_back(stats::mean(fit_extended(generate_dataset(cfg).observed, p).sigma1_sq_hat));
  }
  const double se = stats::sd(means) / std::sqrt(static_cast<double>(means.size()));
  CHECK(std::abs(stats::mean(means)) - 3.0 * se < 0.1);
  CHECK(se < 0.15);

  auto cfg = ScenarioConfig::make(ScenarioKind::Baseline, 200, 0.5, 1);
  CausalOptions plain;
  plain.orthogonalize = false;
  CHECK_THROWS_AS(fit_extended(generate_dataset(cfg).observed, small_params(10), plain), EstimationError);
}
