#pragma once

#include "forestiv/types.hpp"

#include <string>
#include <vector>

namespace forestiv {

struct EstimateResult {
  Vec beta;
  Mat vcov;  // symmetric PSD
  Index n = 0;
  std::string method;  // ols | tsls | forestiv | simex | mcsimex
  std::vector<std::string> names;
  std::string note;

  Index k() const { return beta.size(); }
  Vec se() const;
};

// Least squares of y on a full-column-rank design; vcov = s^2 (A'A)^-1 with
// s^2 = RSS/(n-K). Solves via column-pivoted QR, relative pivot threshold 1e-10.
EstimateResult ols(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Mat>& design,
                   std::vector<std::string> names = {}, std::string method = "ols");

// Two-stage least squares with a single endogenous regressor x, controls Z
// (leading all-ones column) and instruments W. Coefficients are reported in
// the order (intercept, x, remaining controls). The covariance uses
// second-stage residuals computed with the original x.
EstimateResult tsls(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x,
                    const Eigen::Ref<const Mat>& controls, const Eigen::Ref<const Mat>& instruments,
                    std::vector<std::string> names = {}, std::string method = "tsls");

// Design matrix in the reporting order (intercept, x, remaining controls).
Mat econ_design(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Mat>& controls);

struct HotellingResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  bool singular = false;
};

// H = (βa-βb)' (Σa+Σb)^-1 (βa-βb), compared against chi-square(K).
// Pseudo-inverse fallback when Σa+Σb is numerically singular.
HotellingResult hotelling(const EstimateResult& a, const EstimateResult& b);

// ||βiv - βref||^2 + tr(Σiv)
double empirical_mse(const EstimateResult& iv, const EstimateResult& ref);

// F-test of joint nullity of W's coefficients in the regression x ~ [W, Z].
// Returns +inf when the full model fits x perfectly.
double first_stage_f(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Mat>& instruments,
                     const Eigen::Ref<const Mat>& controls);

// Adjusted R^2 of e ~ [1, W]; may be negative.
double exclusion_adjusted_r2(const Eigen::Ref<const Vec>& errors,
                             const Eigen::Ref<const Mat>& instruments);

std::string estimate_to_json(const EstimateResult& r);

}  // namespace forestiv
