#pragma once

#include "forestiv/types.hpp"

#include <cstdint>
#include <vector>

namespace forestiv {

// cv_min takes the penalty at the smallest cross-validated MSE; one_se takes
// the largest penalty within one standard error of that minimum (sparser
// models, the usual guard against keeping noise variables).
enum class PenaltyRule { cv_min, one_se };

struct LassoParams {
  double tol = 1e-7;    // max standardized-coefficient change per sweep
  int max_iter = 10000;  // sweeps
  PenaltyRule rule = PenaltyRule::cv_min;
  // stop the CV path once the curve has clearly passed its minimum
  // (15 grid points beyond it and 50% above); the returned grid and curve
  // are truncated to the evaluated prefix
  bool cv_early_stop = false;
};

// Objective: (1/(2n))||y - b0 - X b||^2 + lambda ||b||_1, predictors
// standardized internally (mean 0, unit variance), response centered,
// intercept unpenalized. Coefficients are exactly zero outside active_set.
struct LassoFit {
  Vec coefficients;   // original scale, length q
  Vec standardized;   // standardized scale, exact zeros off the active set
  double intercept = 0.0;
  double lambda = 0.0;
  std::vector<int> active_set;
  std::vector<int> constant_columns;  // always zero, excluded from selection
  int iterations = 0;
  bool converged = true;
};

// Sufficient statistics of a regression problem. Fold arithmetic (full minus
// fold) gives exact training-split moments without touching the rows again.
struct RegressionMoments {
  Index n = 0;
  Mat xtx;
  Vec xty;
  Vec xsum;
  double ysum = 0.0;
  double yty = 0.0;

  static RegressionMoments from_data(const Eigen::Ref<const Mat>& x,
                                     const Eigen::Ref<const Vec>& y);
  RegressionMoments& operator-=(const RegressionMoments& other);

  Index q() const { return xty.size(); }
};

LassoFit fit_lasso(const Eigen::Ref<const Mat>& predictors, const Eigen::Ref<const Vec>& response,
                   double lambda, const LassoParams& params = {});
LassoFit fit_lasso_moments(const RegressionMoments& m, double lambda,
                           const LassoParams& params = {});

// max_j |x_j'(y - ybar)|/n on the standardized scale; the smallest penalty
// with an all-zero solution
double lasso_lambda_max(const RegressionMoments& m);

struct CvLassoResult {
  double lambda = 0.0;
  LassoFit fit;          // full-data fit at the chosen lambda
  Vec lambda_grid;       // descending
  Vec cv_mse;
  Vec cv_se;             // fold spread of the curve
};

// 100-point log grid from lambda_max down to 1e-3 lambda_max, K-fold CV on
// held-out MSE, lambda at the CV minimum. Deterministic given seed.
CvLassoResult cv_lasso(const Eigen::Ref<const Mat>& predictors,
                       const Eigen::Ref<const Vec>& response, int n_folds = 10,
                       std::uint64_t seed = 0, const LassoParams& params = {});

// folds[k] holds the moments of the rows in fold k; training moments are
// full minus fold.
CvLassoResult cv_lasso_moments(const RegressionMoments& full,
                               const std::vector<RegressionMoments>& folds,
                               const LassoParams& params = {});

}  // namespace forestiv
