#pragma once

#include <span>
#include <string>
#include <vector>

#include "itevar/data.hpp"
#include "itevar/tree.hpp"

namespace itevar {

/// Honest regression forest for a nuisance function (E[Y|x], E[A|x], E[Y^2|x]).
/// Immutable after fitting; prediction is thread-safe.
class RegressionForest {
 public:
  RegressionForest() = default;
  RegressionForest(std::vector<Tree> trees, FeatureMatrix train_x, std::vector<double> train_target,
                   ForestParams params, std::string target_name)
      : trees_(std::move(trees)),
        train_x_(std::move(train_x)),
        train_target_(std::move(train_target)),
        params_(params),
        target_name_(std::move(target_name)) {}

  double predict(std::span<const double> x) const;

  /// Average over trees whose subsample excludes training row i.
  /// Throws OobUndefined when every tree used row i.
  double predict_oob(std::size_t i) const;

  /// predict_oob for every training row, parallel over rows.
  std::vector<double> predict_oob_all() const;

  const std::vector<Tree>& trees() const noexcept { return trees_; }
  const FeatureMatrix& train_x() const noexcept { return train_x_; }
  const std::vector<double>& train_target() const noexcept { return train_target_; }
  const ForestParams& params() const noexcept { return params_; }
  const std::string& target_name() const noexcept { return target_name_; }
  std::size_t num_train() const noexcept { return train_x_.rows(); }

 private:
  std::vector<Tree> trees_;
  FeatureMatrix train_x_;
  std::vector<double> train_target_;
  ForestParams params_;
  std::string target_name_;
};

/// Trees are grown in parallel; tree t always uses the stream derived from
/// (params.seed, t), so the forest does not depend on the thread count.
RegressionForest fit_regression_forest(const FeatureMatrix& x, std::span<const double> target,
                                       const ForestParams& params, std::string target_name = "target");

namespace reference {

/// Single-threaded forest fit; must match fit_regression_forest exactly.
RegressionForest fit_regression_forest_serial(const FeatureMatrix& x, std::span<const double> target,
                                              const ForestParams& params);

/// Direct tree-by-tree OOB average with no precomputation.
double predict_oob(const RegressionForest& forest, std::size_t i);

}  // namespace reference

/// Applies `fn(tree_index)` over [0, count) with the thread count a
/// ForestParams asks for; inside an enclosing parallel region it runs serially.
template <typename Fn>
void parallel_for_trees(std::size_t count, int num_threads, Fn&& fn);

}  // namespace itevar

#include <omp.h>

namespace itevar {

/// Thread count for a kernel: 1 inside an enclosing parallel region.
inline int effective_threads(int requested) {
  if (omp_in_parallel()) return 1;
  return requested > 0 ? requested : omp_get_max_threads();
}

template <typename Fn>
void parallel_for_trees(std::size_t count, int num_threads, Fn&& fn) {
  const int threads = effective_threads(num_threads);
  const auto total = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads)
  for (std::ptrdiff_t t = 0; t < total; ++t) fn(static_cast<std::size_t>(t));
}

}  // namespace itevar
