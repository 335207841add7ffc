#pragma once

#include "forestiv/regression.hpp"
#include "forestiv/types.hpp"

#include <cstdint>

namespace forestiv {

struct SimexConfig {
  Vec lambda_grid = (Vec(4) << 0.5, 1.0, 1.5, 2.0).finished();  // ascending, positive
  int replicates = 50;  // pseudo-datasets per grid point
  std::uint64_t seed = 0;
};

// The simulation stage: replicate-mean coefficients per grid point,
// lambda = 0 first (the naive estimate).
struct SimexDetail {
  Vec lambdas;
  Mat grid_means;  // one row per lambda, one column per coefficient
};

// Simulation-extrapolation for additive measurement error: adds centered
// normal noise with variance lambda * sigma_e^2, averages OLS coefficients
// over replicates per grid point, fits a per-coefficient quadratic in lambda
// through the points (lambda = 0 is the naive estimate) and extrapolates to
// lambda = -1. The reported vcov is the naive OLS vcov (see note field).
EstimateResult simex(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x_noisy,
                     const Eigen::Ref<const Mat>& controls, double sigma_e,
                     const SimexConfig& config, std::vector<std::string> names = {},
                     SimexDetail* detail = nullptr);

// Misclassification SIMEX: each grid point re-flips the observed labels
// through pi^lambda (matrix power via eigendecomposition), so the lambda
// round carries total misclassification pi^(1+lambda); extrapolates to
// lambda = -1. pi is column-stochastic with diagonals > 0.5.
EstimateResult mc_simex(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x_mis,
                        const Eigen::Ref<const Mat>& controls, const Eigen::Matrix2d& pi,
                        const SimexConfig& config, std::vector<std::string> names = {});

// pi^power via eigendecomposition; negative entries are clamped to [0,1]
// and columns renormalized (clamped flag reported when that fires).
Eigen::Matrix2d misclassification_power(const Eigen::Matrix2d& pi, double power,
                                        bool* clamped = nullptr);

// Column-stochastic P(pred = r | truth = c) from test-set confusion counts,
// +1 on zero cells.
Eigen::Matrix2d estimate_misclassification(const Eigen::Ref<const Vec>& pred_test,
                                           const Eigen::Ref<const Vec>& truth_test);

// Synthetic classical-error design in which the measurement error is
// correlated with a precisely measured control: reports the naive and SIMEX
// biases on that control and the moment condition under which SIMEX makes
// the bias worse.
struct BlindspotDesign {
  double beta0 = 1.0;
  double beta_x = 1.0;   // coefficient on the mismeasured covariate
  double beta_z = 1.0;   // coefficient on the correlated control
  double sigma_x = 1.0;  // sd of the true covariate
  double sigma_z = 1.0;  // sd of the control
  double sigma_e = 0.5;  // sd of the measurement error
  double rho = 0.3;      // Corr(control, measurement error)
  double noise_sd = 0.1;
  Index n = 2000;
  int rounds = 40;
  SimexConfig simex;
};

struct BlindspotReport {
  double bias_naive = 0.0;  // on the correlated control
  double bias_simex = 0.0;
  double condition_lhs = 0.0;  // |sigma_z^2 sigma_x^2 - sigma_ze^2|
  double condition_rhs = 0.0;  // |sigma_z^2 (sigma_x^2 + sigma_e^2) - sigma_ze^2|
  bool condition_holds = false;
  bool simex_more_biased = false;
};

BlindspotReport simex_blindspot_check(const BlindspotDesign& design, std::uint64_t seed);

}  // namespace forestiv
