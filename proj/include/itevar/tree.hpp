#pragma once

// Honest trees shared by the regression (nuisance) forests and the effect
// forest.  A tree is grown on its split half J1 only; the estimation half J2
// is then routed to the leaves and supplies all leaf contents.

#include <cstdint>
#include <span>
#include <vector>

#include "itevar/data.hpp"
#include "itevar/rng.hpp"

namespace itevar {

struct ForestParams {
  std::size_t num_trees = 2000;
  double subsample_fraction = 0.5;
  double honesty_fraction = 0.5;
  std::size_t mtry = 0;  // 0 selects min(ceil(sqrt(d)) + 20, d)
  std::size_t min_node_size = 5;
  std::size_t max_depth = 0;  // 0 means unbounded
  // Minimum child share of the parent: J1 row count for regression trees,
  // treatment variation sum (A~ - mean)^2 for effect trees.
  double imbalance_alpha = 0.05;
  // Effect trees only: each child needs min_node_size J1 rows on each side
  // of the node's mean centered treatment.
  bool stabilize_splits = true;
  // Number of candidate features per node drawn as Poisson(mtry), clamped
  // to [1, d]; otherwise exactly mtry.
  bool poisson_mtry = true;
  std::uint64_t seed = 42;
  int num_threads = 0;  // 0 uses the OpenMP default

  void validate() const;
  std::size_t resolved_mtry(std::size_t num_features) const;
};

enum class RowRole : std::uint8_t { Out = 0, Split = 1, Estimate = 2 };

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // rows with x[feature] <= threshold go left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t member_begin = 0;  // leaves: slice of Tree::members
  std::uint32_t member_count = 0;
  double value = 0.0;  // leaves: mean target over members (regression trees)

  bool is_leaf() const noexcept { return feature < 0; }
};

class Tree {
 public:
  std::vector<TreeNode> nodes;          // nodes[0] is the root
  std::vector<std::uint32_t> members;   // J2 rows, grouped by leaf, ascending within a leaf
  std::vector<RowRole> roles;           // one entry per training row

  std::uint32_t leaf_of(std::span<const double> x) const noexcept {
    std::uint32_t k = 0;
    while (!nodes[k].is_leaf()) {
      const auto& nd = nodes[k];
      k = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return k;
  }

  std::span<const std::uint32_t> leaf_members(std::uint32_t leaf) const noexcept {
    return {members.data() + nodes[leaf].member_begin, nodes[leaf].member_count};
  }

  std::vector<std::size_t> rows_with(RowRole role) const;
  std::size_t num_leaves() const;
  std::size_t depth() const;
};

/// Per-node response generator: given the J1 rows of a node, writes the
/// split responses (indexed by row) and, for effect trees, the node-centered
/// treatment used by the split constraints.  Returns false when the node
/// must become a leaf.
class NodeRelabeler {
 public:
  virtual ~NodeRelabeler() = default;
  virtual bool relabel(std::span<const std::uint32_t> rows, std::span<double> response,
                       std::span<double> treatment) const = 0;
  virtual bool uses_treatment() const { return false; }
};

/// Response = target centered at the node mean; CART variance reduction.
class RegressionRelabeler final : public NodeRelabeler {
 public:
  explicit RegressionRelabeler(std::span<const double> target) : target_(target) {}
  bool relabel(std::span<const std::uint32_t> rows, std::span<double> response,
               std::span<double> treatment) const override;

 private:
  std::span<const double> target_;
};

/// Gradient pseudo-outcomes of the local residual-on-residual slope.
class EffectRelabeler final : public NodeRelabeler {
 public:
  EffectRelabeler(std::span<const double> y_tilde, std::span<const double> a_tilde)
      : y_(y_tilde), a_(a_tilde) {}
  bool relabel(std::span<const std::uint32_t> rows, std::span<double> response,
               std::span<double> treatment) const override;
  bool uses_treatment() const override { return true; }

 private:
  std::span<const double> y_;
  std::span<const double> a_;
};

/// Draws the subsample and its J1/J2 split for one tree.
std::vector<RowRole> draw_roles(std::size_t n, const ForestParams& params, RandomStream& rng);

/// Row indices of a feature matrix sorted by each column (ties by row index).
class SortedColumns {
 public:
  explicit SortedColumns(const FeatureMatrix& x);
  std::span<const std::uint32_t> order(std::size_t feature) const noexcept {
    return {order_.data() + feature * n_, n_};
  }
  std::size_t size() const noexcept { return n_ == 0 ? 0 : order_.size() / n_; }

 private:
  std::size_t n_;
  std::vector<std::uint32_t> order_;
};

/// Grows one honest tree.  `leaf_target`, when non-empty, fills leaf values
/// with the mean of the target over each leaf's J2 members.
Tree grow_honest_tree(const FeatureMatrix& x, std::vector<RowRole> roles, const NodeRelabeler& relabeler,
                      const ForestParams& params, RandomStream& rng,
                      std::span<const double> leaf_target = {});

/// Same tree, reusing column orders shared by every tree of a forest.
Tree grow_honest_tree(const FeatureMatrix& x, const SortedColumns& presorted, std::vector<RowRole> roles,
                      const NodeRelabeler& relabeler, const ForestParams& params, RandomStream& rng,
                      std::span<const double> leaf_target = {});

/// Seeded single-tree entry point used by the forests: tree t of a forest with
/// the given seed always sees the same random stream.
RandomStream tree_stream(std::uint64_t forest_seed, std::size_t tree_index);

}  // namespace itevar
