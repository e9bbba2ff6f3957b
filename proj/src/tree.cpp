#include "itevar/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "itevar/errors.hpp"

namespace itevar {

void ForestParams::validate() const {
  if (num_trees < 1) throw ConfigError("num_trees", "must be at least 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("subsample_fraction", "must lie in (0, 1]");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0))
    throw ConfigError("honesty_fraction", "must lie in (0, 1)");
  if (min_node_size < 1) throw ConfigError("min_node_size", "must be at least 1");
  if (!(imbalance_alpha >= 0.0 && imbalance_alpha < 0.25))
    throw ConfigError("imbalance_alpha", "must lie in [0, 0.25)");
  if (num_threads < 0) throw ConfigError("num_threads", "must be non-negative");
}

std::size_t ForestParams::resolved_mtry(std::size_t num_features) const {
  if (mtry > 0) return std::min(mtry, num_features);
  const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(num_features))));
  return std::min(root + 20, num_features);
}

std::vector<std::size_t> Tree::rows_with(RowRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == role) out.push_back(i);
  return out;
}

std::size_t Tree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& nd) { return nd.is_leaf(); }));
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    best = std::max(best, d[k]);
    if (!nodes[k].is_leaf()) {
      d[nodes[k].left] = d[k] + 1;
      d[nodes[k].right] = d[k] + 1;
    }
  }
  return best;
}

bool RegressionRelabeler::relabel(std::span<const std::uint32_t> rows, std::span<double> response,
                                  std::span<double>) const {
  double sum = 0.0;
  for (auto r : rows) sum += target_[r];
  const double mean = sum / static_cast<double>(rows.size());
  bool varies = false;
  for (auto r : rows) {
    response[r] = target_[r] - mean;
    varies = varies || target_[r] != target_[rows[0]];
  }
  return varies;
}

bool EffectRelabeler::relabel(std::span<const std::uint32_t> rows, std::span<double> response,
                              std::span<double> treatment) const {
  const double k = static_cast<double>(rows.size());
  double sy = 0.0, sa = 0.0;
  for (auto r : rows) {
    sy += y_[r];
    sa += a_[r];
  }
  const double my = sy / k, ma = sa / k;
  double saa = 0.0, say = 0.0;
  for (auto r : rows) {
    const double ac = a_[r] - ma;
    saa += ac * ac;
    say += ac * (y_[r] - my);
  }
  if (!(saa > 1e-14 * k)) return false;
  const double tau = say / saa;
  const double scale = saa / k;
  for (auto r : rows) {
    const double ac = a_[r] - ma;
    response[r] = ac * ((y_[r] - my) - ac * tau) / scale;
    treatment[r] = ac;
  }
  return true;
}

std::vector<RowRole> draw_roles(std::size_t n, const ForestParams& params, RandomStream& rng) {
  const auto s = static_cast<std::size_t>(std::floor(params.subsample_fraction * static_cast<double>(n)));
  const auto s1 = static_cast<std::size_t>(std::floor(params.honesty_fraction * static_cast<double>(s)));
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t k = 0; k < s; ++k) std::swap(idx[k], idx[k + rng.below(n - k)]);
  std::vector<RowRole> roles(n, RowRole::Out);
  for (std::size_t k = 0; k < s; ++k) roles[idx[k]] = k < s1 ? RowRole::Split : RowRole::Estimate;
  return roles;
}

RandomStream tree_stream(std::uint64_t forest_seed, std::size_t tree_index) {
  return RandomStream(derive_seed(forest_seed, seed_tag::kTree, tree_index), 0);
}

namespace {

struct GrowNode {
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::uint32_t left = 0, right = 0;
  std::size_t begin = 0, end = 0;  // range into the per-feature sorted arrays
  std::size_t depth = 0;
};

struct SplitCandidate {
  double gain = 0.0;
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::size_t n_left = 0;
};

// Threshold in [lo, hi) so that lo goes left and hi goes right.
double midpoint(double lo, double hi) {
  const double t = lo + 0.5 * (hi - lo);
  return t < hi ? t : lo;
}

}  // namespace

SortedColumns::SortedColumns(const FeatureMatrix& x) : n_(x.rows()), order_(x.rows() * x.cols()) {
  for (std::size_t f = 0; f < x.cols(); ++f) {
    auto first = order_.begin() + static_cast<std::ptrdiff_t>(f * n_);
    std::iota(first, first + static_cast<std::ptrdiff_t>(n_), 0u);
    std::sort(first, first + static_cast<std::ptrdiff_t>(n_), [&](std::uint32_t a, std::uint32_t b) {
      const double xa = x(a, f), xb = x(b, f);
      return xa < xb || (xa == xb && a < b);
    });
  }
}

Tree grow_honest_tree(const FeatureMatrix& x, std::vector<RowRole> roles, const NodeRelabeler& relabeler,
                      const ForestParams& params, RandomStream& rng, std::span<const double> leaf_target) {
  return grow_honest_tree(x, SortedColumns(x), std::move(roles), relabeler, params, rng, leaf_target);
}

Tree grow_honest_tree(const FeatureMatrix& x, const SortedColumns& presorted, std::vector<RowRole> roles,
                      const NodeRelabeler& relabeler, const ForestParams& params, RandomStream& rng,
                      std::span<const double> leaf_target) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const std::size_t mtry = params.resolved_mtry(d);

  if (presorted.size() != d) throw std::invalid_argument("grow_honest_tree: presorted columns != features");

  // One sorted copy of J1 per feature; node ranges stay aligned across copies
  // because every split stably partitions all of them the same way.
  std::vector<std::vector<std::uint32_t>> order(d);
  for (std::size_t f = 0; f < d; ++f) {
    order[f].reserve(n);
    for (auto r : presorted.order(f))
      if (roles[r] == RowRole::Split) order[f].push_back(r);
  }
  const std::size_t m = order[0].size();

  std::vector<double> response(n, 0.0);
  std::vector<double> treatment(n, 0.0);
  std::vector<std::uint8_t> goes_left(n, 0);
  std::vector<std::uint32_t> scratch(m);
  std::vector<std::size_t> features(d);
  const bool effect = relabeler.uses_treatment();
  const bool stabilize = effect && params.stabilize_splits;

  std::vector<GrowNode> grown;
  grown.push_back({-1, 0.0, 0, 0, 0, m, 0});
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const std::uint32_t id = stack.back();
    stack.pop_back();
    const std::size_t begin = grown[id].begin, end = grown[id].end, depth = grown[id].depth;
    const std::size_t k = end - begin;
    if (k <= params.min_node_size || k < 2) continue;
    if (params.max_depth > 0 && depth >= params.max_depth) continue;

    const std::span<const std::uint32_t> node_rows(order[0].data() + begin, k);
    if (!relabeler.relabel(node_rows, response, treatment)) continue;

    double total = 0.0, total_sq = 0.0, t_sum = 0.0, t_sq = 0.0;
    std::size_t t_small = 0;
    for (auto r : node_rows) {
      total += response[r];
      total_sq += response[r] * response[r];
      t_sum += treatment[r];
      t_sq += treatment[r] * treatment[r];
      t_small += treatment[r] < 0.0;
    }
    if (!(total_sq > 0.0)) continue;
    const double kd = static_cast<double>(k);
    const double base = total * total / kd;
    // Regression trees bound child counts; effect trees bound the treatment
    // variation sum (A~ - mean)^2 of each child relative to the node.
    const auto min_child = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(params.imbalance_alpha * kd)));
    const double min_child_variation = params.imbalance_alpha * (t_sq - t_sum * t_sum / kd);

    std::size_t tried = mtry;
    if (params.poisson_mtry) tried = std::clamp<std::size_t>(rng.poisson(static_cast<double>(mtry)), 1, d);
    std::iota(features.begin(), features.end(), std::size_t{0});
    if (tried < d) {
      for (std::size_t q = 0; q < tried; ++q) std::swap(features[q], features[q + rng.below(d - q)]);
      std::sort(features.begin(), features.begin() + static_cast<std::ptrdiff_t>(tried));
    }

    SplitCandidate best;
    const double min_gain = 1e-12 * total_sq;
    for (std::size_t q = 0; q < tried; ++q) {
      const std::size_t f = features[q];
      const std::uint32_t* ord = order[f].data() + begin;
      double s_left = 0.0, tl_sum = 0.0, tl_sq = 0.0;
      std::size_t small_left = 0;
      for (std::size_t p = 0; p + 1 < k; ++p) {
        const std::uint32_t r = ord[p];
        s_left += response[r];
        if (effect) {
          tl_sum += treatment[r];
          tl_sq += treatment[r] * treatment[r];
          small_left += treatment[r] < 0.0;
        }
        const double xv = x(r, f), xn = x(ord[p + 1], f);
        if (!(xn > xv)) continue;
        const std::size_t nl = p + 1, nr = k - nl;
        if (effect) {
          if (stabilize) {
            const std::size_t small_right = t_small - small_left;
            if (small_left < params.min_node_size || nl - small_left < params.min_node_size ||
                small_right < params.min_node_size || nr - small_right < params.min_node_size)
              continue;
          }
          const double var_left = tl_sq - tl_sum * tl_sum / static_cast<double>(nl);
          const double tr_sum = t_sum - tl_sum;
          const double var_right = (t_sq - tl_sq) - tr_sum * tr_sum / static_cast<double>(nr);
          if (!(var_left >= min_child_variation && var_left > 0.0) ||
              !(var_right >= min_child_variation && var_right > 0.0))
            continue;
        } else if (nl < min_child || nr < min_child) {
          continue;
        }
        const double s_right = total - s_left;
        const double gain = s_left * s_left / static_cast<double>(nl) +
                            s_right * s_right / static_cast<double>(nr) - base;
        if (gain > best.gain && gain > min_gain) {
          best = {gain, static_cast<std::int32_t>(f), midpoint(xv, xn), nl};
        }
      }
    }
    if (best.feature < 0) continue;

    const auto bf = static_cast<std::size_t>(best.feature);
    for (auto r : node_rows) goes_left[r] = x(r, bf) <= best.threshold ? 1 : 0;
    for (std::size_t f = 0; f < d; ++f) {
      std::uint32_t* ord = order[f].data() + begin;
      std::size_t nl = 0, nr = 0;
      for (std::size_t p = 0; p < k; ++p) {
        if (goes_left[ord[p]]) ord[nl++] = ord[p];
        else scratch[nr++] = ord[p];
      }
      std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(nr), ord + nl);
    }

    const auto left = static_cast<std::uint32_t>(grown.size());
    grown.push_back({-1, 0.0, 0, 0, begin, begin + best.n_left, depth + 1});
    grown.push_back({-1, 0.0, 0, 0, begin + best.n_left, end, depth + 1});
    grown[id].feature = best.feature;
    grown[id].threshold = best.threshold;
    grown[id].left = left;
    grown[id].right = left + 1;
    stack.push_back(left + 1);
    stack.push_back(left);
  }

  // Route J2 down the grown structure.
  std::vector<std::vector<std::uint32_t>> leaf_rows(grown.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (roles[i] != RowRole::Estimate) continue;
    std::uint32_t g = 0;
    while (grown[g].feature >= 0)
      g = x(i, static_cast<std::size_t>(grown[g].feature)) <= grown[g].threshold ? grown[g].left
                                                                                   : grown[g].right;
    leaf_rows[g].push_back(static_cast<std::uint32_t>(i));
  }

  // Collapse any node with an empty leaf child into a leaf.  Children always
  // have larger ids than parents, so a reverse sweep is a post-order pass.
  std::vector<std::size_t> count(grown.size(), 0);
  std::vector<std::uint8_t> final_leaf(grown.size(), 0);
  for (std::size_t g = grown.size(); g-- > 0;) {
    if (grown[g].feature < 0) {
      count[g] = leaf_rows[g].size();
      final_leaf[g] = 1;
      continue;
    }
    const auto l = grown[g].left, r = grown[g].right;
    count[g] = count[l] + count[r];
    if ((final_leaf[l] && count[l] == 0) || (final_leaf[r] && count[r] == 0)) final_leaf[g] = 1;
  }

  Tree tree;
  tree.roles = std::move(roles);
  tree.members.reserve(count[0]);
  // Emit in pre-order; each entry is (grown id, output slot).
  std::vector<std::pair<std::uint32_t, std::uint32_t>> todo{{0u, 0u}};
  tree.nodes.emplace_back();
  while (!todo.empty()) {
    const auto [g, out] = todo.back();
    todo.pop_back();
    if (final_leaf[g]) {
      TreeNode leaf;
      leaf.member_begin = static_cast<std::uint32_t>(tree.members.size());
      std::vector<std::uint32_t> sub{g};
      while (!sub.empty()) {
        const auto s = sub.back();
        sub.pop_back();
        if (grown[s].feature < 0) {
          tree.members.insert(tree.members.end(), leaf_rows[s].begin(), leaf_rows[s].end());
        } else {
          sub.push_back(grown[s].right);
          sub.push_back(grown[s].left);
        }
      }
      auto first = tree.members.begin() + leaf.member_begin;
      std::sort(first, tree.members.end());
      leaf.member_count = static_cast<std::uint32_t>(tree.members.end() - first);
      if (!leaf_target.empty() && leaf.member_count > 0) {
        double s = 0.0;
        for (auto it = first; it != tree.members.end(); ++it) s += leaf_target[*it];
        leaf.value = s / static_cast<double>(leaf.member_count);
      }
      tree.nodes[out] = leaf;
      continue;
    }
    TreeNode inner;
    inner.feature = grown[g].feature;
    inner.threshold = grown[g].threshold;
    inner.left = static_cast<std::uint32_t>(tree.nodes.size());
    inner.right = inner.left + 1;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    tree.nodes[out] = inner;
    todo.push_back({grown[g].right, inner.right});
    todo.push_back({grown[g].left, inner.left});
  }
  return tree;
}

}  // namespace itevar
