#include "itevar/causal_forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "itevar/errors.hpp"
#include "itevar/rng.hpp"

namespace itevar {

namespace {

constexpr double kMinDenominator = 1e-12;

double ratio_or_throw(double num, double den, const char* what) {
  if (!(std::abs(den) >= kMinDenominator)) throw NotIdentified(what);
  return num / den;
}

}  // namespace

ForestParams component_params(ForestParams params, std::uint64_t tag) {
  params.seed = derive_seed(params.seed, seed_tag::kForest, tag);
  return params;
}

std::string to_string(Denominator d) {
  return d == Denominator::Squared ? "squared" : "paper-literal";
}

Orthogonalized orthogonalize(const ObservedData& data, const ForestParams& params, bool enabled) {
  data.check();
  const std::size_t n = data.size();
  Orthogonalized out;
  auto& c = out.centered;
  if (!enabled) {
    c.y_tilde = data.y;
    c.a_tilde = data.a;
    c.m_hat_oob.assign(n, 0.0);
    c.e_hat_oob.assign(n, 0.0);
    return out;
  }
  out.m_forest = fit_regression_forest(data.x, data.y, component_params(params, seed_tag::kNuisanceM), "Y");
  out.e_forest = fit_regression_forest(data.x, data.a, component_params(params, seed_tag::kNuisanceE), "A");
  c.m_hat_oob = out.m_forest->predict_oob_all();
  c.e_hat_oob = out.e_forest->predict_oob_all();
  c.y_tilde.resize(n);
  c.a_tilde.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.y_tilde[i] = data.y[i] - c.m_hat_oob[i];
    c.a_tilde[i] = data.a[i] - c.e_hat_oob[i];
  }
  return out;
}

std::vector<Tree> grow_effect_trees(const CenteredData& centered, const FeatureMatrix& x,
                                    const ForestParams& params) {
  params.validate();
  const std::size_t n = x.rows();
  if (centered.y_tilde.size() != n || centered.a_tilde.size() != n)
    throw std::invalid_argument("grow_effect_trees: residual length != rows");
  const ForestParams p = component_params(params, seed_tag::kEffect);
  const EffectRelabeler relabeler(centered.y_tilde, centered.a_tilde);
  const SortedColumns sorted(x);
  std::vector<Tree> trees(p.num_trees);
  parallel_for_trees(p.num_trees, p.num_threads, [&](std::size_t t) {
    auto rng = tree_stream(p.seed, t);
    auto roles = draw_roles(n, p, rng);
    trees[t] = grow_honest_tree(x, sorted, std::move(roles), relabeler, p, rng);
  });
  return trees;
}

CausalForest fit_causal_forest(const ObservedData& data, const ForestParams& params,
                               const CausalOptions& options) {
  data.check();
  params.validate();
  if (data.size() < 2 * params.min_node_size || data.size() < 2)
    throw EstimationError("causal forest: need at least 2 * min_node_size rows");
  const auto treated = std::count(data.a.begin(), data.a.end(), 1.0);
  const auto controls = std::count(data.a.begin(), data.a.end(), 0.0);
  if (treated + controls != static_cast<std::ptrdiff_t>(data.size()))
    throw std::invalid_argument("causal forest: treatment must be binary 0/1");
  if (treated == 0 || controls == 0)
    throw EstimationError("causal forest: treatment is constant");
  if (!(options.propensity_clamp > 0.0 && options.propensity_clamp < 0.5))
    throw ConfigError("propensity_clamp", "must lie in (0, 0.5)");

  auto orth = orthogonalize(data, params, options.orthogonalize);
  CausalForest f;
  f.params = params;
  f.options = options;
  f.effect_trees = grow_effect_trees(orth.centered, data.x, params);
  f.centered = std::move(orth.centered);
  f.nuisance_m = std::move(orth.m_forest);
  f.nuisance_e = std::move(orth.e_forest);
  f.train_x = data.x;
  f.y = data.y;
  f.a = data.a;
  return f;
}

double SimilarityWeights::sum() const {
  double s = 0.0;
  for (const auto& [row, w] : weights) s += w;
  return s;
}

double SimilarityWeights::weight_of(std::uint32_t row) const {
  auto it = std::lower_bound(weights.begin(), weights.end(), row,
                             [](const auto& p, std::uint32_t r) { return p.first < r; });
  return it != weights.end() && it->first == row ? it->second : 0.0;
}

SimilarityWeights similarity_weights(std::span<const Tree> trees, std::span<const double> query,
                                     std::optional<std::size_t> exclude_row) {
  std::map<std::uint32_t, double> acc;
  std::size_t used = 0;
  for (const auto& tree : trees) {
    if (exclude_row && tree.roles[*exclude_row] == RowRole::Split) continue;
    std::vector<std::uint32_t> leaf;
    for (auto j : tree.leaf_members(tree.leaf_of(query)))
      if (!exclude_row || j != *exclude_row) leaf.push_back(j);
    if (leaf.empty()) continue;
    const double w = 1.0 / static_cast<double>(leaf.size());
    for (auto j : leaf) acc[j] += w;
    ++used;
  }
  if (used == 0) throw NoContributingTree("similarity weights: no contributing tree");
  SimilarityWeights out;
  out.contributing_trees = used;
  out.oob = exclude_row.has_value();
  out.weights.reserve(acc.size());
  for (const auto& [row, w] : acc) out.weights.emplace_back(row, w / static_cast<double>(used));
  return out;
}

SimilarityWeights similarity_weights(const CausalForest& forest, std::span<const double> query) {
  return similarity_weights(forest.effect_trees, query);
}

SimilarityWeights similarity_weights_oob(const CausalForest& forest, std::size_t row) {
  return similarity_weights(forest.effect_trees, forest.train_x.row(row), row);
}

double cate_from_weights(const SimilarityWeights& w, std::span<const double> y_tilde,
                         std::span<const double> a_tilde, Denominator denominator) {
  double num = 0.0, den = 0.0;
  for (const auto& [j, wj] : w.weights) {
    num += wj * y_tilde[j] * a_tilde[j];
    den += wj * (denominator == Denominator::Squared ? a_tilde[j] * a_tilde[j] : a_tilde[j]);
  }
  return ratio_or_throw(num, den, "CATE: weighted treatment variation is zero");
}

double difference_in_means_from_weights(const SimilarityWeights& w, std::span<const double> y,
                                        std::span<const double> a) {
  double ya = 0.0, wa = 0.0, yc = 0.0, wc = 0.0;
  for (const auto& [j, wj] : w.weights) {
    ya += wj * y[j] * a[j];
    wa += wj * a[j];
    yc += wj * y[j] * (1.0 - a[j]);
    wc += wj * (1.0 - a[j]);
  }
  return ratio_or_throw(ya, wa, "CATE: no weighted treated rows") -
         ratio_or_throw(yc, wc, "CATE: no weighted control rows");
}

double predict_cate(const CausalForest& forest, const SimilarityWeights& w) {
  if (!forest.options.orthogonalize) return difference_in_means_from_weights(w, forest.y, forest.a);
  return cate_from_weights(w, forest.centered.y_tilde, forest.centered.a_tilde, forest.options.denominator);
}

double predict_cate(const CausalForest& forest, std::span<const double> query) {
  return predict_cate(forest, similarity_weights(forest, query));
}

std::vector<double> oob_weighted_means(std::span<const Tree> trees, const FeatureMatrix& x,
                                       std::span<const std::span<const double>> columns,
                                       std::vector<std::uint8_t>& defined, int num_threads) {
  const std::size_t n = x.rows();
  const std::size_t ncol = columns.size();
  for (const auto& c : columns)
    if (c.size() != n) throw std::invalid_argument("oob_weighted_means: column length != rows");

  // Leaf sums per tree; only leaf slots are filled.
  std::vector<std::vector<double>> leaf_sums(trees.size());
  parallel_for_trees(trees.size(), num_threads, [&](std::size_t t) {
    const auto& tree = trees[t];
    auto& sums = leaf_sums[t];
    sums.assign(tree.nodes.size() * ncol, 0.0);
    for (std::uint32_t k = 0; k < tree.nodes.size(); ++k) {
      if (!tree.nodes[k].is_leaf()) continue;
      for (auto j : tree.leaf_members(k))
        for (std::size_t c = 0; c < ncol; ++c) sums[k * ncol + c] += columns[c][j];
    }
  });

  std::vector<double> out(n * ncol, 0.0);
  defined.assign(n, 0);
  const int threads = effective_threads(num_threads);
  const auto total = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t ii = 0; ii < total; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto xi = x.row(i);
    double* acc = out.data() + i * ncol;
    std::size_t used = 0;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const auto& tree = trees[t];
      const RowRole role = tree.roles[i];
      if (role == RowRole::Split) continue;
      const std::uint32_t leaf = tree.leaf_of(xi);
      const std::size_t count = tree.nodes[leaf].member_count;
      const double* s = leaf_sums[t].data() + leaf * ncol;
      if (role == RowRole::Out) {
        if (count == 0) continue;
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t c = 0; c < ncol; ++c) acc[c] += s[c] * inv;
      } else {
        // Row i is one of this leaf's members; drop its own contribution.
        if (count < 2) continue;
        const double inv = 1.0 / static_cast<double>(count - 1);
        for (std::size_t c = 0; c < ncol; ++c) acc[c] += (s[c] - columns[c][i]) * inv;
      }
      ++used;
    }
    if (used > 0) {
      defined[i] = 1;
      for (std::size_t c = 0; c < ncol; ++c) acc[c] /= static_cast<double>(used);
    }
  }
  return out;
}

std::vector<double> predict_cate_oob_all(const CausalForest& forest) {
  const std::size_t n = forest.size();
  const auto& yt = forest.centered.y_tilde;
  const auto& at = forest.centered.a_tilde;
  std::vector<double> col0(n), col1(n), col2(n), col3(n);
  std::size_t ncol;
  if (forest.options.orthogonalize) {
    for (std::size_t i = 0; i < n; ++i) {
      col0[i] = yt[i] * at[i];
      col1[i] = forest.options.denominator == Denominator::Squared ? at[i] * at[i] : at[i];
    }
    ncol = 2;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      col0[i] = forest.y[i] * forest.a[i];
      col1[i] = forest.a[i];
      col2[i] = forest.y[i] * (1.0 - forest.a[i]);
      col3[i] = 1.0 - forest.a[i];
    }
    ncol = 4;
  }
  const std::span<const double> all[] = {col0, col1, col2, col3};
  std::vector<std::uint8_t> defined;
  const auto means = oob_weighted_means(forest.effect_trees, forest.train_x,
                                        std::span<const std::span<const double>>(all, ncol), defined,
                                        forest.params.num_threads);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> tau(n, nan);
  for (std::size_t i = 0; i < n; ++i) {
    if (!defined[i]) continue;
    const double* m = means.data() + i * ncol;
    if (ncol == 2) {
      if (std::abs(m[1]) >= kMinDenominator) tau[i] = m[0] / m[1];
    } else if (std::abs(m[1]) >= kMinDenominator && std::abs(m[3]) >= kMinDenominator) {
      tau[i] = m[0] / m[1] - m[2] / m[3];
    }
  }
  return tau;
}

AteEstimate aipw_ate(std::span<const double> y, std::span<const double> a, std::span<const double> m_hat,
                     std::span<const double> e_hat, std::span<const double> tau_hat, double clamp) {
  const std::size_t n = y.size();
  if (n < 2) throw EstimationError("AIPW: need at least 2 rows");
  if (a.size() != n || m_hat.size() != n || e_hat.size() != n || tau_hat.size() != n)
    throw std::invalid_argument("AIPW: length mismatch");
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(tau_hat[i])) throw NotIdentified("AIPW: CATE not identified for a training row");
    const double e = std::clamp(e_hat[i], clamp, 1.0 - clamp);
    const double mu1 = m_hat[i] + (1.0 - e) * tau_hat[i];
    const double mu0 = m_hat[i] - e * tau_hat[i];
    score[i] = tau_hat[i] + a[i] * (y[i] - mu1) / e - (1.0 - a[i]) * (y[i] - mu0) / (1.0 - e);
  }
  double mean = 0.0;
  for (double s : score) mean += s;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double s : score) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, sd / std::sqrt(static_cast<double>(n))};
}

AteEstimate estimate_ate_aipw(const CausalForest& forest, std::span<const double> tau_oob) {
  if (!forest.options.orthogonalize)
    throw EstimationError("AIPW needs fitted nuisances; forest was fit without orthogonalization");
  return aipw_ate(forest.y, forest.a, forest.centered.m_hat_oob, forest.centered.e_hat_oob, tau_oob,
                  forest.options.propensity_clamp);
}

AteEstimate estimate_ate(const CausalForest& forest, std::span<const double> tau_oob) {
  if (forest.options.orthogonalize) return estimate_ate_aipw(forest, tau_oob);
  const std::size_t n = tau_oob.size();
  if (n < 2) throw EstimationError("ATE: need at least 2 rows");
  double mean = 0.0;
  for (double t : tau_oob) {
    if (!std::isfinite(t)) throw NotIdentified("ATE: CATE not identified for a training row");
    mean += t;
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double t : tau_oob) ss += (t - mean) * (t - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n))};
}

std::vector<std::size_t> split_frequencies(const CausalForest& forest) {
  std::vector<std::size_t> freq(forest.train_x.cols(), 0);
  for (const auto& tree : forest.effect_trees)
    for (const auto& nd : tree.nodes)
      if (!nd.is_leaf()) ++freq[static_cast<std::size_t>(nd.feature)];
  return freq;
}

namespace reference {

std::vector<double> predict_cate_oob_all(const CausalForest& forest) {
  std::vector<double> tau(forest.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < forest.size(); ++i) {
    try {
      tau[i] = predict_cate(forest, similarity_weights_oob(forest, i));
    } catch (const EstimationError&) {
    }
  }
  return tau;
}

}  // namespace reference

}  // namespace itevar
