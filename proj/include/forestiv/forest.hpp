#pragma once

#include "forestiv/dataset.hpp"
#include "forestiv/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace forestiv {

enum class Task { regression, classification };

struct ForestParams {
  int n_trees = 100;
  int mtry = 0;      // 0 resolves to max(1, p/3) regression, floor(sqrt(p)) classification
  int min_node = 0;  // 0 resolves to 5 regression, 1 classification
  Task task = Task::regression;
};

// Flat node arrays; node 0 is the root, feature < 0 marks a leaf. Regression
// leaves hold the training mean in value; classification leaves hold the
// class-count pair.
struct TreeModel {
  std::vector<std::int32_t> feature;
  std::vector<Scalar> threshold;
  std::vector<std::int32_t> left;
  std::vector<std::int32_t> right;
  std::vector<Scalar> value;
  std::vector<Scalar> count0;
  std::vector<Scalar> count1;

  bool is_classification() const { return !count0.empty(); }
  Index node_count() const { return static_cast<Index>(feature.size()); }
};

struct ForestModel {
  std::vector<TreeModel> trees;
  ForestParams params;  // with mtry/min_node resolved
  Index n_features = 0;
  std::vector<std::string> feature_names;
  // in-sample fit of the aggregate prediction on the training rows
  Scalar train_rmse = 0.0;
  Scalar train_accuracy = 0.0;

  Index tree_count() const { return static_cast<Index>(trees.size()); }
};

// Grows params.n_trees CART trees on the train partition, each on a
// bootstrap sample of size n with per-split mtry feature subsampling.
// Deterministic given seed regardless of thread count.
ForestModel fit_forest(const Dataset& d, const ForestParams& params, std::uint64_t seed);

// Regression: leaf mean. Classification: hard 0/1 label, ties to class 0.
Vec predict_tree(const TreeModel& t, const Eigen::Ref<const Mat>& rows);
// Regression: mean of tree predictions. Classification: majority vote,
// ties to class 0.
Vec predict_forest(const ForestModel& f, const Eigen::Ref<const Mat>& rows);
// Column i holds predict_tree(trees[i], rows).
Mat tree_prediction_matrix(const ForestModel& f, const Eigen::Ref<const Mat>& rows);

std::string forest_to_json(const ForestModel& f);
ForestModel forest_from_json(const std::string& text);

}  // namespace forestiv
