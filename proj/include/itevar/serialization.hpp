#pragma once

// JSON persistence of fitted forests.  Layout: a header {format, version,
// params, n}, then the training data, per-tree node arrays, leaf members and
// row roles.  Loading validates the header and every tree index.

#include <iosfwd>
#include <string>

#include "itevar/causal_forest.hpp"

namespace itevar {

inline constexpr int kForestFormatVersion = 1;

void save_causal_forest(const CausalForest& forest, std::ostream& out);
CausalForest load_causal_forest(std::istream& in);

void save_causal_forest(const CausalForest& forest, const std::string& path);
CausalForest load_causal_forest(const std::string& path);

}  // namespace itevar
