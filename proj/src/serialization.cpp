#include "itevar/serialization.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace itevar {

using nlohmann::json;

namespace {

json params_to_json(const ForestParams& p) {
  return {{"num_trees", p.num_trees},
          {"subsample_fraction", p.subsample_fraction},
          {"honesty_fraction", p.honesty_fraction},
          {"mtry", p.mtry},
          {"min_node_size", p.min_node_size},
          {"max_depth", p.max_depth},
          {"imbalance_alpha", p.imbalance_alpha},
          {"stabilize_splits", p.stabilize_splits},
          {"poisson_mtry", p.poisson_mtry},
          {"seed", p.seed},
          {"num_threads", p.num_threads}};
}

ForestParams params_from_json(const json& j) {
  ForestParams p;
  p.num_trees = j.at("num_trees").get<std::size_t>();
  p.subsample_fraction = j.at("subsample_fraction").get<double>();
  p.honesty_fraction = j.at("honesty_fraction").get<double>();
  p.mtry = j.at("mtry").get<std::size_t>();
  p.min_node_size = j.at("min_node_size").get<std::size_t>();
  p.max_depth = j.at("max_depth").get<std::size_t>();
  p.imbalance_alpha = j.at("imbalance_alpha").get<double>();
  p.stabilize_splits = j.at("stabilize_splits").get<bool>();
  p.poisson_mtry = j.at("poisson_mtry").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.num_threads = j.at("num_threads").get<int>();
  p.validate();
  return p;
}

json tree_to_json(const Tree& t) {
  json nodes = json::object();
  std::vector<std::int32_t> feature;
  std::vector<double> threshold, value;
  std::vector<std::uint32_t> left, right, begin, count;
  for (const auto& nd : t.nodes) {
    feature.push_back(nd.feature);
    threshold.push_back(nd.threshold);
    left.push_back(nd.left);
    right.push_back(nd.right);
    begin.push_back(nd.member_begin);
    count.push_back(nd.member_count);
    value.push_back(nd.value);
  }
  std::vector<int> roles;
  roles.reserve(t.roles.size());
  for (auto r : t.roles) roles.push_back(static_cast<int>(r));
  return {{"feature", feature}, {"threshold", threshold}, {"left", left},   {"right", right},
          {"member_begin", begin}, {"member_count", count}, {"value", value}, {"members", t.members},
          {"roles", roles}};
}

Tree tree_from_json(const json& j, std::size_t n, std::size_t d) {
  Tree t;
  const auto feature = j.at("feature").get<std::vector<std::int32_t>>();
  const auto threshold = j.at("threshold").get<std::vector<double>>();
  const auto left = j.at("left").get<std::vector<std::uint32_t>>();
  const auto right = j.at("right").get<std::vector<std::uint32_t>>();
  const auto begin = j.at("member_begin").get<std::vector<std::uint32_t>>();
  const auto count = j.at("member_count").get<std::vector<std::uint32_t>>();
  const auto value = j.at("value").get<std::vector<double>>();
  t.members = j.at("members").get<std::vector<std::uint32_t>>();
  const auto roles = j.at("roles").get<std::vector<int>>();
  const std::size_t m = feature.size();
  if (m == 0 || threshold.size() != m || left.size() != m || right.size() != m || begin.size() != m ||
      count.size() != m || value.size() != m)
    throw std::runtime_error("forest file: inconsistent node arrays");
  if (roles.size() != n) throw std::runtime_error("forest file: roles length != n");
  for (std::size_t k = 0; k < m; ++k) {
    TreeNode nd{feature[k], threshold[k], left[k], right[k], begin[k], count[k], value[k]};
    if (nd.is_leaf()) {
      if (std::size_t{nd.member_begin} + nd.member_count > t.members.size())
        throw std::runtime_error("forest file: leaf members out of range");
    } else if (static_cast<std::size_t>(nd.feature) >= d || nd.left <= k || nd.right <= k || nd.left >= m ||
               nd.right >= m) {
      throw std::runtime_error("forest file: bad inner node " + std::to_string(k));
    }
    t.nodes.push_back(nd);
  }
  for (auto r : t.members)
    if (r >= n) throw std::runtime_error("forest file: member row out of range");
  for (int r : roles) {
    if (r < 0 || r > 2) throw std::runtime_error("forest file: bad row role");
    t.roles.push_back(static_cast<RowRole>(r));
  }
  return t;
}

json regression_to_json(const RegressionForest& f) {
  json trees = json::array();
  for (const auto& t : f.trees()) trees.push_back(tree_to_json(t));
  return {{"params", params_to_json(f.params())},
          {"target_name", f.target_name()},
          {"target", f.train_target()},
          {"trees", trees}};
}

RegressionForest regression_from_json(const json& j, const FeatureMatrix& x) {
  std::vector<Tree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(tree_from_json(t, x.rows(), x.cols()));
  auto target = j.at("target").get<std::vector<double>>();
  if (target.size() != x.rows()) throw std::runtime_error("forest file: nuisance target length != n");
  return RegressionForest(std::move(trees), x, std::move(target), params_from_json(j.at("params")),
                          j.at("target_name").get<std::string>());
}

}  // namespace

void save_causal_forest(const CausalForest& forest, std::ostream& out) {
  json trees = json::array();
  for (const auto& t : forest.effect_trees) trees.push_back(tree_to_json(t));
  json doc = {
      {"header",
       {{"format", "itevar-causal-forest"},
        {"version", kForestFormatVersion},
        {"params", params_to_json(forest.params)},
        {"n", forest.size()},
        {"d", forest.train_x.cols()}}},
      {"options",
       {{"orthogonalize", forest.options.orthogonalize},
        {"denominator", to_string(forest.options.denominator)},
        {"propensity_clamp", forest.options.propensity_clamp}}},
      {"x", forest.train_x.values()},
      {"y", forest.y},
      {"a", forest.a},
      {"centered",
       {{"y_tilde", forest.centered.y_tilde},
        {"a_tilde", forest.centered.a_tilde},
        {"m_hat_oob", forest.centered.m_hat_oob},
        {"e_hat_oob", forest.centered.e_hat_oob}}},
      {"effect_trees", trees},
  };
  if (forest.nuisance_m) doc["nuisance_m"] = regression_to_json(*forest.nuisance_m);
  if (forest.nuisance_e) doc["nuisance_e"] = regression_to_json(*forest.nuisance_e);
  out << doc.dump();
  if (!out) throw std::runtime_error("forest file: write failed");
}

CausalForest load_causal_forest(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("forest file: ") + e.what());
  }
  try {
    const auto& h = doc.at("header");
    if (h.at("format").get<std::string>() != "itevar-causal-forest")
      throw std::runtime_error("forest file: not a causal forest");
    if (h.at("version").get<int>() != kForestFormatVersion)
      throw std::runtime_error("forest file: unsupported version " + h.at("version").dump());
    const auto n = h.at("n").get<std::size_t>();
    const auto d = h.at("d").get<std::size_t>();

    CausalForest f;
    f.params = params_from_json(h.at("params"));
    const auto& o = doc.at("options");
    f.options.orthogonalize = o.at("orthogonalize").get<bool>();
    const auto denom = o.at("denominator").get<std::string>();
    if (denom == to_string(Denominator::Squared)) f.options.denominator = Denominator::Squared;
    else if (denom == to_string(Denominator::PaperLiteral)) f.options.denominator = Denominator::PaperLiteral;
    else throw std::runtime_error("forest file: unknown denominator " + denom);
    f.options.propensity_clamp = o.at("propensity_clamp").get<double>();

    f.train_x = FeatureMatrix(n, d, doc.at("x").get<std::vector<double>>());
    f.y = doc.at("y").get<std::vector<double>>();
    f.a = doc.at("a").get<std::vector<double>>();
    const auto& c = doc.at("centered");
    f.centered.y_tilde = c.at("y_tilde").get<std::vector<double>>();
    f.centered.a_tilde = c.at("a_tilde").get<std::vector<double>>();
    f.centered.m_hat_oob = c.at("m_hat_oob").get<std::vector<double>>();
    f.centered.e_hat_oob = c.at("e_hat_oob").get<std::vector<double>>();
    for (const auto* v : {&f.y, &f.a, &f.centered.y_tilde, &f.centered.a_tilde, &f.centered.m_hat_oob,
                          &f.centered.e_hat_oob})
      if (v->size() != n) throw std::runtime_error("forest file: column length != n");
    for (const auto& t : doc.at("effect_trees")) f.effect_trees.push_back(tree_from_json(t, n, d));
    if (f.effect_trees.empty()) throw std::runtime_error("forest file: no effect trees");
    if (doc.contains("nuisance_m")) f.nuisance_m = regression_from_json(doc["nuisance_m"], f.train_x);
    if (doc.contains("nuisance_e")) f.nuisance_e = regression_from_json(doc["nuisance_e"], f.train_x);
    return f;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("forest file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("forest file: ") + e.what());
  }
}

void save_causal_forest(const CausalForest& forest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_causal_forest(forest, out);
}

CausalForest load_causal_forest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_causal_forest(in);
}

}  // namespace itevar
