#include "forestiv/lasso.hpp"

#include "forestiv/regression.hpp"
#include "forestiv/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace forestiv;

namespace {

struct Problem {
  Mat x;
  Vec y;
};

Problem random_problem(Index n, Index q, std::uint64_t seed, int sparsity = 3,
                       double noise = 0.5) {
  Rng rng(seed);
  Problem p;
  p.x.resize(n, q);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < q; ++c) p.x(r, c) = rng.normal();
  Vec beta = Vec::Zero(q);
  for (int k = 0; k < sparsity && k < q; ++k) beta[k] = rng.uniform(0.5, 2.0) * (k % 2 ? -1 : 1);
  p.y = p.x * beta;
  for (Index r = 0; r < n; ++r) p.y[r] += rng.normal(0.0, noise);
  return p;
}

// KKT residuals on the standardized scale
double kkt_violation(const Mat& x, const Vec& y, const LassoFit& fit) {
  const Index n = x.rows();
  const Vec resid = y.array() - fit.intercept - (x * fit.coefficients).array();
  double worst = 0.0;
  for (Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mu).square().sum() / n);
    if (sd <= 0.0) continue;
    const double g = ((x.col(j).array() - mu) * resid.array()).sum() / n / sd;
    if (fit.standardized[j] == 0.0) {
      worst = std::max(worst, std::abs(g) - fit.lambda);
    } else {
      worst = std::max(worst, std::abs(g - fit.lambda * (fit.standardized[j] > 0 ? 1.0 : -1.0)));
    }
  }
  return worst;
}

double objective(const Mat& x, const Vec& y, const LassoFit& fit, double lambda) {
  const Index n = x.rows();
  const Vec resid = y.array() - fit.intercept - (x * fit.coefficients).array();
  return resid.squaredNorm() / (2.0 * n) + lambda * fit.standardized.cwiseAbs().sum();
}

}  // namespace

TEST_SUITE("lasso") {

TEST_CASE("penalties at or above lambda_max give the null model") {
  const auto p = random_problem(80, 6, 1);
  const auto m = RegressionMoments::from_data(p.x, p.y);
  const double lmax = lasso_lambda_max(m);
  const auto fit = fit_lasso(p.x, p.y, lmax * 1.000001);
  CHECK(fit.active_set.empty());
  CHECK(fit.coefficients.isZero(0.0));
  CHECK(fit.intercept == doctest::Approx(p.y.mean()));
  // just below lambda_max something activates
  const auto fit2 = fit_lasso(p.x, p.y, lmax * 0.95);
  CHECK(!fit2.active_set.empty());
}

TEST_CASE("unpenalized lasso matches ols") {
  const auto p = random_problem(60, 4, 2);
  const auto fit = fit_lasso(p.x, p.y, 0.0, {1e-10, 100000});
  Mat design(60, 5);
  design.col(0).setOnes();
  design.rightCols(4) = p.x;
  const auto ref = ols(p.y, design);
  CHECK(fit.intercept == doctest::Approx(ref.beta[0]).epsilon(1e-6));
  for (Index j = 0; j < 4; ++j)
    CHECK(fit.coefficients[j] == doctest::Approx(ref.beta[j + 1]).epsilon(1e-6));
}

TEST_CASE("single predictor reduces to the scalar soft-threshold rule") {
  Rng rng(9);
  const Index n = 300;
  Mat x(n, 1);
  Vec y(n);
  for (Index r = 0; r < n; ++r) {
    x(r, 0) = rng.normal();
    y[r] = 1.4 * x(r, 0) + rng.normal(0.0, 0.3);
  }
  const double mu = x.col(0).mean();
  const double sd = std::sqrt((x.col(0).array() - mu).square().sum() / n);
  const double b_ls = ((x.col(0).array() - mu) / sd * (y.array() - y.mean())).sum() / n;
  for (double lambda : {0.05, 0.5, std::abs(b_ls) * 1.5}) {
    const auto fit = fit_lasso(x, y, lambda);
    const double want =
        b_ls > 0 ? std::max(b_ls - lambda, 0.0) : std::min(b_ls + lambda, 0.0);
    CHECK(fit.standardized[0] == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("KKT conditions hold at convergence") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = random_problem(50 + 7 * seed % 60, 8, 1000 + seed);
    const auto m = RegressionMoments::from_data(p.x, p.y);
    const double lambda = 0.3 * lasso_lambda_max(m);
    const auto fit = fit_lasso(p.x, p.y, lambda);
    CHECK(kkt_violation(p.x, p.y, fit) < 1e-6);
    // exact zeros off the active set
    for (Index j = 0; j < 8; ++j) {
      const bool active =
          std::find(fit.active_set.begin(), fit.active_set.end(), static_cast<int>(j)) !=
          fit.active_set.end();
      if (!active) CHECK(fit.coefficients[j] == 0.0);
    }
  }
}

TEST_CASE("objective is non-increasing over sweeps") {
  const auto p = random_problem(120, 10, 77);
  const double lambda = 0.2 * lasso_lambda_max(RegressionMoments::from_data(p.x, p.y));
  double prev = std::numeric_limits<double>::infinity();
  for (int sweeps = 1; sweeps <= 8; ++sweeps) {
    const auto fit = fit_lasso(p.x, p.y, lambda, {0.0, sweeps});
    const double obj = objective(p.x, p.y, fit, lambda);
    CHECK(obj <= prev + 1e-12);
    prev = obj;
  }
}

TEST_CASE("solution is invariant under predictor permutation") {
  const auto p = random_problem(100, 7, 31);
  const double lambda = 0.25 * lasso_lambda_max(RegressionMoments::from_data(p.x, p.y));
  const auto fit = fit_lasso(p.x, p.y, lambda);
  std::vector<Index> perm{3, 0, 6, 1, 5, 2, 4};
  Mat xp(100, 7);
  for (Index j = 0; j < 7; ++j) xp.col(j) = p.x.col(perm[static_cast<std::size_t>(j)]);
  const auto fit_p = fit_lasso(xp, p.y, lambda);
  for (Index j = 0; j < 7; ++j)
    CHECK(fit_p.coefficients[j] ==
          doctest::Approx(fit.coefficients[perm[static_cast<std::size_t>(j)]]).epsilon(1e-5));
}

TEST_CASE("constant predictor columns get zero coefficients and are reported") {
  auto p = random_problem(50, 4, 12);
  p.x.col(2).setConstant(3.0);
  const auto fit = fit_lasso(p.x, p.y, 0.01);
  CHECK(fit.coefficients[2] == 0.0);
  CHECK(fit.constant_columns == std::vector<int>{2});
}

TEST_CASE("non-finite inputs are rejected") {
  auto p = random_problem(20, 3, 5);
  p.y[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_lasso(p.x, p.y, 0.1), std::invalid_argument);
}

TEST_CASE("cross-validation recovers a planted signal") {
  Rng rng(55);
  const Index n = 150, q = 10;
  Mat x(n, q);
  Vec y(n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < q; ++c) x(r, c) = rng.normal();
    y[r] = 5.0 * x(r, 0) + rng.normal(0.0, 0.05);
  }
  const auto cv = cv_lasso(x, y, 10, 999);
  CHECK(std::find(cv.fit.active_set.begin(), cv.fit.active_set.end(), 0) !=
        cv.fit.active_set.end());
  CHECK(cv.fit.coefficients[0] == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("cross-validation keeps pure-noise models near empty") {
  int small_enough = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(400 + seed);
    const Index n = 120, q = 20;
    Mat x(n, q);
    Vec y(n);
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < q; ++c) x(r, c) = rng.normal();
      y[r] = rng.normal();
    }
    const auto cv = cv_lasso(x, y, 10, seed);
    if (cv.fit.active_set.size() <= 2) ++small_enough;
  }
  CHECK(small_enough >= 8);
}

TEST_CASE("leave-one-out on a 12-row problem returns a finite curve") {
  const auto p = random_problem(12, 3, 8);
  const auto cv = cv_lasso(p.x, p.y, 12, 3);
  CHECK(cv.cv_mse.allFinite());
  CHECK(cv.lambda_grid.size() == 100);
  CHECK(cv.lambda > 0.0);
}

TEST_CASE("degenerate folds are rejected") {
  const auto p = random_problem(4, 2, 8);
  // 2 folds of 2 rows leave 2-row training splits: allowed
  CHECK_NOTHROW(cv_lasso(p.x, p.y, 2, 1));
  // 3 rows in 2 folds leaves a 1-row training split: rejected
  const auto q = random_problem(3, 2, 8);
  CHECK_THROWS_AS(cv_lasso(q.x, q.y, 2, 1), std::invalid_argument);
}

TEST_CASE("moment-based and data-based paths agree") {
  const auto p = random_problem(90, 5, 21);
  const auto direct = fit_lasso(p.x, p.y, 0.07);
  const auto via_moments = fit_lasso_moments(RegressionMoments::from_data(p.x, p.y), 0.07);
  CHECK((direct.coefficients - via_moments.coefficients).cwiseAbs().maxCoeff() < 1e-12);
}

}  // TEST_SUITE
