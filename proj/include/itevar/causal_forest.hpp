#pragma once

// Residual-on-residual causal forest.
//
// Outcome and treatment are centered by out-of-bag nuisance predictions,
// Y~ = Y - m^(-i)(x), A~ = A - e^(-i)(x); honest effect trees are grown on the
// gradient pseudo-outcomes of the local slope of Y~ on A~, and the CATE at x
// is a similarity-weighted ratio
//
//   tau^(x) = sum_i w_i(x) Y~_i A~_i / sum_i w_i(x) A~_i^2     (squared)
//   tau^(x) = sum_i w_i(x) Y~_i A~_i / sum_i w_i(x) A~_i       (paper-literal)
//
// With orthogonalization disabled the nuisances are identically zero and the
// CATE is the weighted treated-minus-control difference in means.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "itevar/data.hpp"
#include "itevar/forest_core.hpp"

namespace itevar {

enum class Denominator { Squared, PaperLiteral };
std::string to_string(Denominator d);

struct CausalOptions {
  bool orthogonalize = true;
  Denominator denominator = Denominator::Squared;
  double propensity_clamp = 0.01;  // e^ is clamped to [c, 1 - c] inside AIPW
};

/// Params for one component forest (m, e, h or effect): same settings, seed
/// derived from params.seed and the component tag.
ForestParams component_params(ForestParams params, std::uint64_t tag);

struct CenteredData {
  std::vector<double> y_tilde;
  std::vector<double> a_tilde;
  std::vector<double> m_hat_oob;
  std::vector<double> e_hat_oob;
};

struct Orthogonalized {
  CenteredData centered;
  std::optional<RegressionForest> m_forest;
  std::optional<RegressionForest> e_forest;
};

/// Fits the outcome and propensity forests and centers Y and A by their OOB
/// predictions.  With `enabled == false` no forests are fit and m^ = e^ = 0.
Orthogonalized orthogonalize(const ObservedData& data, const ForestParams& params, bool enabled = true);

/// Honest effect trees on (Y~, A~); each tree uses its own subsample.
std::vector<Tree> grow_effect_trees(const CenteredData& centered, const FeatureMatrix& x,
                                    const ForestParams& params);

struct CausalForest {
  ForestParams params;
  CausalOptions options;
  CenteredData centered;
  std::vector<Tree> effect_trees;
  std::optional<RegressionForest> nuisance_m;
  std::optional<RegressionForest> nuisance_e;
  FeatureMatrix train_x;
  std::vector<double> y;
  std::vector<double> a;

  std::size_t size() const noexcept { return y.size(); }
};

CausalForest fit_causal_forest(const ObservedData& data, const ForestParams& params,
                               const CausalOptions& options = {});

/// Sparse forest kernel weights over training rows.
struct SimilarityWeights {
  std::vector<std::pair<std::uint32_t, double>> weights;  // ascending row index
  std::size_t contributing_trees = 0;
  bool oob = false;

  double sum() const;
  double weight_of(std::uint32_t row) const;
};

/// Per tree: 1/|leaf| for the J2 members of the leaf holding the query,
/// averaged over contributing trees.  With `exclude_row`, only trees that did
/// not split on that row are used and the row itself gets no weight.
/// Throws NoContributingTree when no tree has a usable leaf.
SimilarityWeights similarity_weights(std::span<const Tree> trees, std::span<const double> query,
                                     std::optional<std::size_t> exclude_row = std::nullopt);
SimilarityWeights similarity_weights(const CausalForest& forest, std::span<const double> query);
SimilarityWeights similarity_weights_oob(const CausalForest& forest, std::size_t row);

/// Weighted ratio CATE for given residuals.  Throws NotIdentified when the
/// denominator magnitude is below 1e-12.
double cate_from_weights(const SimilarityWeights& w, std::span<const double> y_tilde,
                         std::span<const double> a_tilde, Denominator denominator);

/// Weighted treated mean minus weighted control mean.
double difference_in_means_from_weights(const SimilarityWeights& w, std::span<const double> y,
                                        std::span<const double> a);

double predict_cate(const CausalForest& forest, const SimilarityWeights& w);
double predict_cate(const CausalForest& forest, std::span<const double> query);

/// For every training row i: the OOB-weighted means of each column, using the
/// same weights as similarity_weights(trees, x_i, i).  Row-major n x K output.
/// `defined[i]` is 0 when no tree contributed to row i.
std::vector<double> oob_weighted_means(std::span<const Tree> trees, const FeatureMatrix& x,
                                       std::span<const std::span<const double>> columns,
                                       std::vector<std::uint8_t>& defined, int num_threads);

/// OOB CATE for all training rows; NaN marks non-identified rows.
std::vector<double> predict_cate_oob_all(const CausalForest& forest);

struct AteEstimate {
  double ate = 0.0;
  double se = 0.0;
};

/// Doubly robust AIPW average treatment effect from per-row plug-ins.
AteEstimate aipw_ate(std::span<const double> y, std::span<const double> a,
                     std::span<const double> m_hat, std::span<const double> e_hat,
                     std::span<const double> tau_hat, double propensity_clamp);

/// AIPW with the forest's OOB nuisances.  Requires orthogonalization.
AteEstimate estimate_ate_aipw(const CausalForest& forest, std::span<const double> tau_oob);

/// AIPW when nuisances exist; otherwise the mean of the OOB CATEs.
AteEstimate estimate_ate(const CausalForest& forest, std::span<const double> tau_oob);

/// How often each feature is used as a split variable across effect trees.
std::vector<std::size_t> split_frequencies(const CausalForest& forest);

namespace reference {

/// OOB CATEs through explicit similarity weights, one row at a time.
std::vector<double> predict_cate_oob_all(const CausalForest& forest);

}  // namespace reference

}  // namespace itevar
