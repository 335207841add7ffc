#include "forestiv/forest.hpp"

#include "forestiv/parallel.hpp"
#include "forestiv/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace forestiv {

namespace {

struct TreeBuilder {
  const Mat& x;  // training rows
  const Vec& y;
  int mtry;
  int min_node;
  bool classification;
  Rng rng;
  TreeModel tree;
  std::vector<Index> rows;           // bootstrap sample, reordered in place
  std::vector<std::pair<Scalar, Index>> scratch;

  TreeBuilder(const Mat& x_, const Vec& y_, int mtry_, int min_node_, bool cls, std::uint64_t seed)
      : x(x_), y(y_), mtry(mtry_), min_node(min_node_), classification(cls), rng(seed) {}

  int new_leaf(Index begin, Index end) {
    const auto id = static_cast<int>(tree.feature.size());
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    if (classification) {
      Scalar c0 = 0, c1 = 0;
      for (Index k = begin; k < end; ++k) (y[rows[static_cast<std::size_t>(k)]] > 0.5 ? c1 : c0) += 1.0;
      tree.value.push_back(c1 > c0 ? 1.0 : 0.0);
      tree.count0.push_back(c0);
      tree.count1.push_back(c1);
    } else {
      Scalar sum = 0;
      for (Index k = begin; k < end; ++k) sum += y[rows[static_cast<std::size_t>(k)]];
      tree.value.push_back(sum / static_cast<Scalar>(end - begin));
      if (!tree.count0.empty()) {
        tree.count0.push_back(0);
        tree.count1.push_back(0);
      }
    }
    return id;
  }

  int new_internal(int feature, Scalar threshold) {
    const auto id = static_cast<int>(tree.feature.size());
    tree.feature.push_back(feature);
    tree.threshold.push_back(threshold);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(0.0);
    if (classification) {
      tree.count0.push_back(0);
      tree.count1.push_back(0);
    }
    return id;
  }

  bool pure(Index begin, Index end) const {
    const Scalar first = y[rows[static_cast<std::size_t>(begin)]];
    for (Index k = begin + 1; k < end; ++k)
      if (y[rows[static_cast<std::size_t>(k)]] != first) return false;
    return true;
  }

  // Best split of rows[begin, end) on one feature. Score to maximize:
  // regression sum_L^2/n_L + sum_R^2/n_R, classification the analogous
  // Gini-count form (c0^2+c1^2)/n per side.
  bool best_split_on(int f, Index begin, Index end, double* best_score, Scalar* best_threshold) {
    const Index m = end - begin;
    scratch.clear();
    for (Index k = begin; k < end; ++k) {
      const Index r = rows[static_cast<std::size_t>(k)];
      scratch.emplace_back(x(r, f), r);
    }
    std::sort(scratch.begin(), scratch.end());
    if (scratch.front().first == scratch.back().first) return false;  // constant at this node

    bool found = false;
    if (classification) {
      Scalar total1 = 0;
      for (const auto& [v, r] : scratch) total1 += y[r] > 0.5 ? 1 : 0;
      const Scalar total0 = static_cast<Scalar>(m) - total1;
      Scalar l1 = 0;
      for (Index k = 0; k + 1 < m; ++k) {
        l1 += y[scratch[static_cast<std::size_t>(k)].second] > 0.5 ? 1 : 0;
        const Index nl = k + 1, nr = m - nl;
        if (nl < min_node || nr < min_node) continue;
        const Scalar vk = scratch[static_cast<std::size_t>(k)].first;
        const Scalar vn = scratch[static_cast<std::size_t>(k) + 1].first;
        if (vk == vn) continue;
        const Scalar l0 = static_cast<Scalar>(nl) - l1;
        const Scalar r1 = total1 - l1, r0 = total0 - l0;
        const double score = (l0 * l0 + l1 * l1) / static_cast<double>(nl) +
                             (r0 * r0 + r1 * r1) / static_cast<double>(nr);
        if (score > *best_score) {
          *best_score = score;
          *best_threshold = vk + (vn - vk) / 2;
          found = true;
        }
      }
    } else {
      Scalar total = 0;
      for (const auto& [v, r] : scratch) total += y[r];
      Scalar lsum = 0;
      for (Index k = 0; k + 1 < m; ++k) {
        lsum += y[scratch[static_cast<std::size_t>(k)].second];
        const Index nl = k + 1, nr = m - nl;
        if (nl < min_node || nr < min_node) continue;
        const Scalar vk = scratch[static_cast<std::size_t>(k)].first;
        const Scalar vn = scratch[static_cast<std::size_t>(k) + 1].first;
        if (vk == vn) continue;
        const Scalar rsum = total - lsum;
        const double score = lsum * lsum / static_cast<double>(nl) +
                             rsum * rsum / static_cast<double>(nr);
        if (score > *best_score) {
          *best_score = score;
          *best_threshold = vk + (vn - vk) / 2;
          found = true;
        }
      }
    }
    return found;
  }

  int grow(Index begin, Index end) {
    const Index m = end - begin;
    if (m < 2 * static_cast<Index>(min_node) || m < 2 || pure(begin, end))
      return new_leaf(begin, end);

    const auto p = static_cast<int>(x.cols());
    const auto tried = rng.sample_without_replacement<int>(p, std::min(mtry, p));
    double best_score = -std::numeric_limits<double>::infinity();
    Scalar best_threshold = 0;
    int best_feature = -1;
    for (int f : tried) {
      if (best_split_on(f, begin, end, &best_score, &best_threshold)) best_feature = f;
    }
    if (best_feature < 0) return new_leaf(begin, end);  // no valid split

    const auto mid_it = std::stable_partition(
        rows.begin() + begin, rows.begin() + end,
        [&](Index r) { return x(r, best_feature) < best_threshold; });
    const Index mid = mid_it - rows.begin();
    if (mid == begin || mid == end) return new_leaf(begin, end);  // numeric guard

    const int node = new_internal(best_feature, best_threshold);
    tree.left[static_cast<std::size_t>(node)] = grow(begin, mid);
    tree.right[static_cast<std::size_t>(node)] = grow(mid, end);
    return node;
  }
};

// trees are stored root-last by the recursive builder; remap so node 0 is root
TreeModel normalize_root_first(const TreeModel& t, int root) {
  const Index n = t.node_count();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<int> remap(static_cast<std::size_t>(n), -1);
  int next = 0;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    remap[static_cast<std::size_t>(cur)] = next;
    order[static_cast<std::size_t>(next)] = cur;
    ++next;
    if (t.feature[static_cast<std::size_t>(cur)] >= 0) {
      stack.push_back(t.right[static_cast<std::size_t>(cur)]);
      stack.push_back(t.left[static_cast<std::size_t>(cur)]);
    }
  }
  TreeModel out;
  out.feature.resize(static_cast<std::size_t>(n));
  out.threshold.resize(static_cast<std::size_t>(n));
  out.left.resize(static_cast<std::size_t>(n));
  out.right.resize(static_cast<std::size_t>(n));
  out.value.resize(static_cast<std::size_t>(n));
  if (!t.count0.empty()) {
    out.count0.resize(static_cast<std::size_t>(n));
    out.count1.resize(static_cast<std::size_t>(n));
  }
  for (Index i = 0; i < n; ++i) {
    const auto from = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    const auto to = static_cast<std::size_t>(i);
    out.feature[to] = t.feature[from];
    out.threshold[to] = t.threshold[from];
    out.value[to] = t.value[from];
    out.left[to] = t.feature[from] >= 0 ? remap[static_cast<std::size_t>(t.left[from])] : -1;
    out.right[to] = t.feature[from] >= 0 ? remap[static_cast<std::size_t>(t.right[from])] : -1;
    if (!t.count0.empty()) {
      out.count0[to] = t.count0[from];
      out.count1[to] = t.count1[from];
    }
  }
  return out;
}

Scalar predict_row(const TreeModel& t, const Eigen::Ref<const Mat>& rows, Index r) {
  int node = 0;
  while (t.feature[static_cast<std::size_t>(node)] >= 0) {
    const auto s = static_cast<std::size_t>(node);
    node = rows(r, t.feature[s]) < t.threshold[s] ? t.left[s] : t.right[s];
  }
  const auto s = static_cast<std::size_t>(node);
  if (t.is_classification()) return t.count1[s] > t.count0[s] ? 1.0 : 0.0;
  return t.value[s];
}

}  // namespace

ForestModel fit_forest(const Dataset& d, const ForestParams& params, std::uint64_t seed) {
  const auto train = d.rows_with(Partition::train);
  if (train.empty()) throw std::invalid_argument("fit_forest: empty training set");
  const Index p = d.n_features();
  if (p < 1) throw std::invalid_argument("fit_forest: no features");
  if (params.n_trees < 1) throw std::invalid_argument("fit_forest: need at least one tree");

  const Mat x = d.features(train, Eigen::all);
  const Vec y = d.truth(train);
  if (!y.allFinite()) throw std::invalid_argument("fit_forest: training rows must have truth");

  const bool classification = params.task == Task::classification;
  if (classification) {
    bool saw0 = false, saw1 = false;
    for (Index i = 0; i < y.size(); ++i) {
      if (y[i] == 0.0)
        saw0 = true;
      else if (y[i] == 1.0)
        saw1 = true;
      else
        throw std::invalid_argument("fit_forest: classification truth must be 0 or 1");
    }
    if (!saw0 || !saw1)
      throw std::invalid_argument("fit_forest: training set contains a single class");
  }

  ForestModel f;
  f.params = params;
  if (f.params.mtry <= 0)
    f.params.mtry = classification
                        ? std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(p)))))
                        : std::max(1, static_cast<int>(p) / 3);
  f.params.mtry = std::min<int>(f.params.mtry, static_cast<int>(p));
  if (f.params.min_node <= 0) f.params.min_node = classification ? 1 : 5;
  f.n_features = p;
  f.feature_names = d.feature_names;
  f.trees.resize(static_cast<std::size_t>(params.n_trees));

  const Index n = static_cast<Index>(train.size());
  parallel_for(params.n_trees, [&](Index t) {
    TreeBuilder builder(x, y, f.params.mtry, f.params.min_node, classification,
                        derive_seed(seed, "tree", static_cast<std::uint64_t>(t)));
    builder.rows.resize(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k)
      builder.rows[static_cast<std::size_t>(k)] =
          static_cast<Index>(builder.rng.below(static_cast<std::uint64_t>(n)));
    if (classification) {
      builder.tree.count0.reserve(64);
      builder.tree.count1.reserve(64);
    }
    const int root = builder.grow(0, n);
    f.trees[static_cast<std::size_t>(t)] = normalize_root_first(builder.tree, root);
  });

  const Vec fitted = predict_forest(f, x);
  if (classification) {
    f.train_accuracy = (fitted.array() == y.array()).cast<Scalar>().mean();
  } else {
    f.train_rmse = std::sqrt((fitted - y).squaredNorm() / static_cast<double>(n));
  }
  return f;
}

Vec predict_tree(const TreeModel& t, const Eigen::Ref<const Mat>& rows) {
  Vec out(rows.rows());
  for (Index r = 0; r < rows.rows(); ++r) out[r] = predict_row(t, rows, r);
  return out;
}

Vec predict_forest(const ForestModel& f, const Eigen::Ref<const Mat>& rows) {
  if (rows.cols() != f.n_features)
    throw std::invalid_argument("predict_forest: feature count mismatch");
  const Index n = rows.rows();
  const auto m = static_cast<double>(f.tree_count());
  if (f.params.task == Task::classification) {
    Vec votes = Vec::Zero(n);
    for (const auto& t : f.trees) votes += predict_tree(t, rows);
    Vec out(n);
    for (Index r = 0; r < n; ++r) out[r] = votes[r] > m / 2 ? 1.0 : 0.0;
    return out;
  }
  Vec sum = Vec::Zero(n);
  for (const auto& t : f.trees) sum += predict_tree(t, rows);
  return sum / m;
}

Mat tree_prediction_matrix(const ForestModel& f, const Eigen::Ref<const Mat>& rows) {
  if (rows.cols() != f.n_features)
    throw std::invalid_argument("tree_prediction_matrix: feature count mismatch");
  Mat p(rows.rows(), f.tree_count());
  parallel_for(f.tree_count(), [&](Index t) {
    p.col(t) = predict_tree(f.trees[static_cast<std::size_t>(t)], rows);
  });
  return p;
}

std::string forest_to_json(const ForestModel& f) {
  nlohmann::json j;
  j["format"] = "forestiv.forest";
  j["version"] = 1;
  j["task"] = f.params.task == Task::classification ? "classification" : "regression";
  j["n_trees"] = f.params.n_trees;
  j["mtry"] = f.params.mtry;
  j["min_node"] = f.params.min_node;
  j["n_features"] = f.n_features;
  j["feature_names"] = f.feature_names;
  j["train_rmse"] = f.train_rmse;
  j["train_accuracy"] = f.train_accuracy;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json tj;
    tj["feature"] = t.feature;
    tj["threshold"] = t.threshold;
    tj["left"] = t.left;
    tj["right"] = t.right;
    tj["value"] = t.value;
    if (t.is_classification()) {
      tj["count0"] = t.count0;
      tj["count1"] = t.count1;
    }
    trees.push_back(std::move(tj));
  }
  j["trees"] = std::move(trees);
  return j.dump();
}

ForestModel forest_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", "") != "forestiv.forest")
    throw ConfigError("forest_from_json: not a forest document");
  if (j.value("version", 0) != 1) throw ConfigError("forest_from_json: unsupported version");
  ForestModel f;
  f.params.task = j.at("task") == "classification" ? Task::classification : Task::regression;
  f.params.n_trees = j.at("n_trees").get<int>();
  f.params.mtry = j.at("mtry").get<int>();
  f.params.min_node = j.at("min_node").get<int>();
  f.n_features = j.at("n_features").get<Index>();
  f.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  f.train_rmse = j.at("train_rmse").get<Scalar>();
  f.train_accuracy = j.at("train_accuracy").get<Scalar>();
  for (const auto& tj : j.at("trees")) {
    TreeModel t;
    t.feature = tj.at("feature").get<std::vector<std::int32_t>>();
    t.threshold = tj.at("threshold").get<std::vector<Scalar>>();
    t.left = tj.at("left").get<std::vector<std::int32_t>>();
    t.right = tj.at("right").get<std::vector<std::int32_t>>();
    t.value = tj.at("value").get<std::vector<Scalar>>();
    if (tj.contains("count0")) {
      t.count0 = tj.at("count0").get<std::vector<Scalar>>();
      t.count1 = tj.at("count1").get<std::vector<Scalar>>();
    }
    f.trees.push_back(std::move(t));
  }
  if (static_cast<int>(f.trees.size()) != f.params.n_trees)
    throw ConfigError("forest_from_json: tree count mismatch");
  return f;
}

}  // namespace forestiv
