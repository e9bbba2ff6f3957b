#include "itevar/forest_core.hpp"

#include "itevar/errors.hpp"

namespace itevar {

namespace {

void check_fit_inputs(const FeatureMatrix& x, std::span<const double> target, const ForestParams& params) {
  params.validate();
  if (x.rows() != target.size()) throw std::invalid_argument("forest fit: feature rows != target length");
  if (x.cols() == 0) throw std::invalid_argument("forest fit: no features");
  if (target.size() < 2 * params.min_node_size || target.size() < 2)
    throw EstimationError("forest fit: need at least 2 * min_node_size rows");
}

Tree fit_one(const FeatureMatrix& x, const SortedColumns& sorted, std::span<const double> target,
             const ForestParams& params, std::size_t t) {
  auto rng = tree_stream(params.seed, t);
  auto roles = draw_roles(x.rows(), params, rng);
  return grow_honest_tree(x, sorted, std::move(roles), RegressionRelabeler(target), params, rng, target);
}

}  // namespace

RegressionForest fit_regression_forest(const FeatureMatrix& x, std::span<const double> target,
                                       const ForestParams& params, std::string target_name) {
  check_fit_inputs(x, target, params);
  const SortedColumns sorted(x);
  std::vector<Tree> trees(params.num_trees);
  parallel_for_trees(params.num_trees, params.num_threads,
                     [&](std::size_t t) { trees[t] = fit_one(x, sorted, target, params, t); });
  return RegressionForest(std::move(trees), x, {target.begin(), target.end()}, params,
                          std::move(target_name));
}

double RegressionForest::predict(std::span<const double> x) const {
  double s = 0.0;
  std::size_t used = 0;
  for (const auto& tree : trees_) {
    const auto& leaf = tree.nodes[tree.leaf_of(x)];
    if (leaf.member_count == 0) continue;
    s += leaf.value;
    ++used;
  }
  if (used == 0) throw NoContributingTree("regression forest: no tree has a non-empty leaf");
  return s / static_cast<double>(used);
}

double RegressionForest::predict_oob(std::size_t i) const {
  const auto xi = train_x_.row(i);
  double s = 0.0;
  std::size_t used = 0;
  for (const auto& tree : trees_) {
    if (tree.roles[i] != RowRole::Out) continue;
    const auto& leaf = tree.nodes[tree.leaf_of(xi)];
    if (leaf.member_count == 0) continue;
    s += leaf.value;
    ++used;
  }
  if (used == 0) throw OobUndefined(i);
  return s / static_cast<double>(used);
}

std::vector<double> RegressionForest::predict_oob_all() const {
  const std::size_t n = num_train();
  std::vector<double> out(n);
  std::vector<std::uint8_t> ok(n, 1);
  const int threads = effective_threads(params_.num_threads);
  const auto total = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t ii = 0; ii < total; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto xi = train_x_.row(i);
    double s = 0.0;
    std::size_t used = 0;
    for (const auto& tree : trees_) {
      if (tree.roles[i] != RowRole::Out) continue;
      const auto& leaf = tree.nodes[tree.leaf_of(xi)];
      if (leaf.member_count == 0) continue;
      s += leaf.value;
      ++used;
    }
    ok[i] = used > 0;
    out[i] = used > 0 ? s / static_cast<double>(used) : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!ok[i]) throw OobUndefined(i);
  return out;
}

namespace reference {

RegressionForest fit_regression_forest_serial(const FeatureMatrix& x, std::span<const double> target,
                                              const ForestParams& params) {
  check_fit_inputs(x, target, params);
  const SortedColumns sorted(x);
  std::vector<Tree> trees;
  trees.reserve(params.num_trees);
  for (std::size_t t = 0; t < params.num_trees; ++t) trees.push_back(fit_one(x, sorted, target, params, t));
  return RegressionForest(std::move(trees), x, {target.begin(), target.end()}, params, "target");
}

double predict_oob(const RegressionForest& forest, std::size_t i) {
  const auto xi = forest.train_x().row(i);
  std::vector<double> leaf_means;
  for (const auto& tree : forest.trees()) {
    if (tree.roles[i] != RowRole::Out) continue;
    // Walk the tree by hand and average the leaf members directly.
    std::uint32_t k = 0;
    while (!tree.nodes[k].is_leaf()) {
      const auto& nd = tree.nodes[k];
      k = xi[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    const auto members = tree.leaf_members(k);
    if (members.empty()) continue;
    double s = 0.0;
    for (auto j : members) s += forest.train_target()[j];
    leaf_means.push_back(s / static_cast<double>(members.size()));
  }
  if (leaf_means.empty()) throw OobUndefined(i);
  double s = 0.0;
  for (double v : leaf_means) s += v;
  return s / static_cast<double>(leaf_means.size());
}

}  // namespace reference

}  // namespace itevar
