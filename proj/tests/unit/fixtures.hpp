#pragma once

// Hand-built trees for small oracle fixtures.

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "itevar/tree.hpp"

namespace itevar::testing {

/// Depth-1 tree on one feature, or a single leaf when `threshold` is absent.
/// Leaves list their J2 members; every other row gets `others`.
inline Tree stump(std::size_t n, std::int32_t feature, double threshold, std::vector<std::uint32_t> left,
                  std::vector<std::uint32_t> right, RowRole others = RowRole::Split) {
  Tree t;
  t.roles.assign(n, others);
  TreeNode root;
  root.feature = feature;
  root.threshold = threshold;
  root.left = 1;
  root.right = 2;
  TreeNode l, r;
  l.member_begin = 0;
  l.member_count = static_cast<std::uint32_t>(left.size());
  r.member_begin = l.member_count;
  r.member_count = static_cast<std::uint32_t>(right.size());
  t.nodes = {root, l, r};
  t.members = left;
  t.members.insert(t.members.end(), right.begin(), right.end());
  for (auto j : t.members) t.roles[j] = RowRole::Estimate;
  return t;
}

inline Tree single_leaf(std::size_t n, std::vector<std::uint32_t> members, RowRole others = RowRole::Split) {
  Tree t;
  t.roles.assign(n, others);
  TreeNode leaf;
  leaf.member_count = static_cast<std::uint32_t>(members.size());
  t.nodes = {leaf};
  t.members = std::move(members);
  for (auto j : t.members) t.roles[j] = RowRole::Estimate;
  return t;
}

inline FeatureMatrix column(std::initializer_list<double> v) {
  return FeatureMatrix(v.size(), 1, std::vector<double>(v));
}

}  // namespace itevar::testing
