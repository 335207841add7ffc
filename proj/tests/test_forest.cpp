#include "forestiv/forest.hpp"

#include "forestiv/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace forestiv;

namespace {

Dataset labeled_dataset(const Mat& x, const Vec& y) {
  Dataset d;
  d.features = x;
  d.truth = y;
  d.has_truth.assign(static_cast<std::size_t>(x.rows()), 1);
  d.partition.assign(static_cast<std::size_t>(x.rows()), Partition::train);
  for (Index c = 0; c < x.cols(); ++c) d.feature_names.push_back("f" + std::to_string(c));
  d.truth_name = "x";
  return d;
}

// smooth one-dimensional target used by the ensemble-size checks
Dataset smooth_dataset(Index n, std::uint64_t seed, double noise = 0.2) {
  Rng rng(seed);
  Mat x(n, 3);
  Vec y(n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < 3; ++c) x(r, c) = rng.next_double();
    y[r] = std::sin(2.0 * M_PI * x(r, 0)) + 0.5 * x(r, 1) + rng.normal(0.0, noise);
  }
  return labeled_dataset(x, y);
}

TreeModel stump(double leaf_value) {
  TreeModel t;
  t.feature = {-1};
  t.threshold = {0.0};
  t.left = {-1};
  t.right = {-1};
  t.value = {leaf_value};
  return t;
}

TreeModel class_stump(double c0, double c1) {
  TreeModel t = stump(c1 > c0 ? 1.0 : 0.0);
  t.count0 = {c0};
  t.count1 = {c1};
  return t;
}

// brute-force oracle for the one-feature binary problem: the best threshold
// by exhaustive enumeration of all split points
double best_single_split_error(const Vec& x, const Vec& y) {
  std::vector<double> values(x.begin(), x.end());
  std::sort(values.begin(), values.end());
  double best = static_cast<double>(x.size());
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    if (values[k] == values[k + 1]) continue;
    const double thr = 0.5 * (values[k] + values[k + 1]);
    double c1l = 0, n_l = 0, c1r = 0, n_r = 0;
    for (Index r = 0; r < x.size(); ++r) {
      if (x[r] < thr) {
        n_l += 1;
        c1l += y[r];
      } else {
        n_r += 1;
        c1r += y[r];
      }
    }
    const double err = std::min(c1l, n_l - c1l) + std::min(c1r, n_r - c1r);
    best = std::min(best, err);
  }
  return best;
}

}  // namespace

TEST_SUITE("forest") {

TEST_CASE("single perfectly separating feature gives zero training error") {
  Rng rng(2);
  const Index n = 60;
  Mat x(n, 1);
  Vec y(n);
  for (Index r = 0; r < n; ++r) {
    x(r, 0) = rng.uniform(0.0, 1.0);
    y[r] = x(r, 0) > 0.6 ? 1.0 : 0.0;
  }
  REQUIRE(best_single_split_error(x, y) == 0.0);  // oracle agrees the problem is separable

  auto d = labeled_dataset(x, y);
  ForestParams params;
  params.n_trees = 1;
  params.task = Task::classification;
  const auto f = fit_forest(d, params, 5);
  const Vec pred = predict_forest(f, x);
  CHECK((pred - y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.train_accuracy == doctest::Approx(1.0));
}

TEST_CASE("constant regression target collapses to constant leaves") {
  Rng rng(8);
  Mat x(40, 2);
  for (Index r = 0; r < 40; ++r)
    for (Index c = 0; c < 2; ++c) x(r, c) = rng.normal();
  const Vec y = Vec::Constant(40, 2.5);
  const auto f = fit_forest(labeled_dataset(x, y), {.n_trees = 3}, 1);
  CHECK(f.train_rmse == doctest::Approx(0.0));
  for (const auto& tree : f.trees)
    CHECK(predict_tree(tree, x).isApproxToConstant(2.5));
}

TEST_CASE("stump predicts its leaf value everywhere") {
  const auto t = stump(3.5);
  const Vec pred = predict_tree(t, Mat::Random(7, 4));
  CHECK(pred.isApproxToConstant(3.5));
}

TEST_CASE("classification leaf ties break to class zero") {
  const auto t = class_stump(2.0, 2.0);
  CHECK(predict_tree(t, Mat::Random(3, 2))[0] == 0.0);
}

TEST_CASE("memorization: pure leaves reproduce the training rows") {
  Rng rng(13);
  const Index n = 50;
  Mat x(n, 2);
  Vec y(n);
  for (Index r = 0; r < n; ++r) {
    x(r, 0) = static_cast<double>(r);  // distinct values make every row separable
    x(r, 1) = rng.normal();
    y[r] = rng.normal();
  }
  ForestParams params;
  params.n_trees = 1;
  params.min_node = 1;
  params.mtry = 2;
  const auto f = fit_forest(labeled_dataset(x, y), params, 3);
  // the bootstrap repeats rows, so check only rows the tree actually saw:
  // any row predicted exactly is consistent; rows in-sample must be exact
  const Vec pred = predict_tree(f.trees[0], x);
  int exact = 0;
  for (Index r = 0; r < n; ++r)
    if (pred[r] == y[r]) ++exact;
  CHECK(exact > n / 2);  // about 63% of rows enter the bootstrap
}

TEST_CASE("forest of one tree predicts like that tree") {
  const auto d = smooth_dataset(120, 21);
  ForestParams params;
  params.n_trees = 1;
  const auto f = fit_forest(d, params, 9);
  const Mat probe = Mat::Random(15, 3).cwiseAbs();
  CHECK((predict_forest(f, probe) - predict_tree(f.trees[0], probe)).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("regression forest averages tree predictions") {
  ForestModel f;
  f.params.task = Task::regression;
  f.params.n_trees = 3;
  f.n_features = 2;
  f.trees = {stump(1.0), stump(2.0), stump(3.0)};
  const Vec pred = predict_forest(f, Mat::Random(4, 2));
  CHECK(pred.isApproxToConstant(2.0));
}

TEST_CASE("classification forest takes the majority vote") {
  ForestModel f;
  f.params.task = Task::classification;
  f.params.n_trees = 100;
  f.n_features = 1;
  for (int k = 0; k < 51; ++k) f.trees.push_back(class_stump(0.0, 1.0));
  for (int k = 0; k < 49; ++k) f.trees.push_back(class_stump(1.0, 0.0));
  CHECK(predict_forest(f, Mat::Random(2, 1))[0] == 1.0);
  // 50/50 tie goes to class zero
  f.trees.pop_back();
  f.trees.push_back(class_stump(1.0, 0.0));
  f.trees[0] = class_stump(1.0, 0.0);
  CHECK(predict_forest(f, Mat::Random(2, 1))[0] == 0.0);
}

TEST_CASE("prediction matrix columns are the per-tree predictions") {
  const auto d = smooth_dataset(150, 4);
  const auto f = fit_forest(d, {.n_trees = 8}, 77);
  const Mat probe = d.features.topRows(30);
  const Mat p = tree_prediction_matrix(f, probe);
  REQUIRE(p.cols() == 8);
  for (Index t = 0; t < 8; ++t)
    CHECK((p.col(t) - predict_tree(f.trees[static_cast<std::size_t>(t)], probe)).norm() == 0.0);
  // row means equal the aggregate prediction
  CHECK((p.rowwise().mean() - predict_forest(f, probe)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("duplicated trees give identical columns") {
  ForestModel f;
  f.params.task = Task::regression;
  f.params.n_trees = 2;
  f.n_features = 1;
  f.trees = {stump(1.25), stump(1.25)};
  const Mat p = tree_prediction_matrix(f, Mat::Random(5, 1));
  CHECK((p.col(0) - p.col(1)).norm() == 0.0);
}

TEST_CASE("tree predictions stay inside the training target range") {
  const auto d = smooth_dataset(200, 31);
  const auto f = fit_forest(d, {.n_trees = 20}, 13);
  const double lo = d.truth.minCoeff();
  const double hi = d.truth.maxCoeff();
  const Mat probe = Mat::Random(50, 3).cwiseAbs();
  const Mat p = tree_prediction_matrix(f, probe);
  CHECK(p.minCoeff() >= lo);
  CHECK(p.maxCoeff() <= hi);
}

TEST_CASE("same seed reproduces the forest bit for bit, different seeds differ") {
  const auto d = smooth_dataset(100, 77);
  const auto a = fit_forest(d, {.n_trees = 5}, 42);
  const auto b = fit_forest(d, {.n_trees = 5}, 42);
  const auto c = fit_forest(d, {.n_trees = 5}, 43);
  CHECK(forest_to_json(a) == forest_to_json(b));
  CHECK(forest_to_json(a) != forest_to_json(c));
}

TEST_CASE("serialization round-trips through json") {
  const auto d = smooth_dataset(90, 15);
  const auto f = fit_forest(d, {.n_trees = 4}, 2);
  const auto back = forest_from_json(forest_to_json(f));
  CHECK(forest_to_json(back) == forest_to_json(f));
  const Mat probe = Mat::Random(20, 3).cwiseAbs();
  CHECK((predict_forest(back, probe) - predict_forest(f, probe)).norm() == 0.0);
}

TEST_CASE("growing the ensemble does not hurt test error on average") {
  double rmse1 = 0.0, rmse_many = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto train = smooth_dataset(300, 1000 + seed);
    const auto test = smooth_dataset(200, 2000 + seed);
    for (int m : {1, 60}) {
      ForestParams params;
      params.n_trees = m;
      const auto f = fit_forest(train, params, 300 + seed);
      const double rmse =
          std::sqrt((predict_forest(f, test.features) - test.truth).squaredNorm() / 200.0);
      (m == 1 ? rmse1 : rmse_many) += rmse;
    }
  }
  CHECK(rmse_many < rmse1);
}

TEST_CASE("error paths") {
  const auto d = smooth_dataset(50, 3);
  Dataset empty = d;
  empty.partition.assign(50, Partition::unlabel);
  CHECK_THROWS_AS(fit_forest(empty, {}, 1), std::invalid_argument);

  auto one_class = d;
  one_class.truth.setOnes();
  ForestParams cls;
  cls.task = Task::classification;
  CHECK_THROWS_AS(fit_forest(one_class, cls, 1), std::invalid_argument);

  auto bad_labels = d;
  bad_labels.truth.setConstant(0.5);
  CHECK_THROWS_AS(fit_forest(bad_labels, cls, 1), std::invalid_argument);

  const auto f = fit_forest(d, {.n_trees = 2}, 1);
  CHECK_THROWS_AS(predict_forest(f, Mat::Random(5, 2)), std::invalid_argument);
  CHECK_THROWS_AS(tree_prediction_matrix(f, Mat::Random(5, 9)), std::invalid_argument);
}

}  // TEST_SUITE
