#include "forestiv/baselines.hpp"

#include "forestiv/rng.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace forestiv;

namespace {

struct ClassicalErrorDesign {
  Vec y, x_true, x_noisy;
  Mat controls;  // intercept + one clean control
  double sigma_e;

  ClassicalErrorDesign(Index n, double sigma_e_, std::uint64_t seed) : sigma_e(sigma_e_) {
    Rng rng(seed);
    y.resize(n);
    x_true.resize(n);
    x_noisy.resize(n);
    controls.resize(n, 2);
    controls.col(0).setOnes();
    for (Index r = 0; r < n; ++r) {
      x_true[r] = rng.normal();
      x_noisy[r] = x_true[r] + rng.normal(0.0, sigma_e);
      controls(r, 1) = rng.normal();
      y[r] = 1.0 + 0.5 * x_true[r] + 2.0 * controls(r, 1) + rng.normal(0.0, 0.2);
    }
  }
};

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("zero measurement error reproduces the naive estimate exactly") {
  const ClassicalErrorDesign d(400, 0.4, 1);
  SimexConfig cfg;
  cfg.seed = 7;
  const auto corrected = simex(d.y, d.x_noisy, d.controls, 0.0, cfg);
  const auto naive = ols(d.y, econ_design(d.x_noisy, d.controls));
  CHECK((corrected.beta - naive.beta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(corrected.method == "simex");
}

TEST_CASE("simex removes most of the attenuation bias") {
  // average over replications so the check hits the analytic curve, not noise
  Vec mean_naive = Vec::Zero(4), mean_simex = Vec::Zero(4);
  const int rounds = 20;
  for (int round = 0; round < rounds; ++round) {
    const ClassicalErrorDesign d(2500, 0.5, 100 + round);
    SimexConfig cfg;
    cfg.seed = derive_seed(55, "round", round);
    const auto naive = ols(d.y, econ_design(d.x_noisy, d.controls));
    const auto corrected = simex(d.y, d.x_noisy, d.controls, d.sigma_e, cfg);
    mean_naive += naive.beta / rounds;
    mean_simex += corrected.beta / rounds;
  }
  const double bias_naive = mean_naive[1] - 0.5;
  const double bias_simex = mean_simex[1] - 0.5;
  // attenuation factor 1/1.25 puts the naive slope near 0.4
  CHECK(std::abs(bias_naive) > 0.07);
  CHECK(std::abs(bias_simex) < 0.4 * std::abs(bias_naive));
}

TEST_CASE("quadratic extrapolation through collinear points is linear extrapolation") {
  // a response exactly linear in lambda must extrapolate on that line
  ClassicalErrorDesign d(300, 0.3, 9);
  SimexConfig cfg;
  cfg.replicates = 2;
  cfg.seed = 3;
  // degenerate grid trick: rebuild the exact quadratic fit by hand
  const Vec lambdas = (Vec(5) << 0.0, 0.5, 1.0, 1.5, 2.0).finished();
  const Vec values = 2.0 * lambdas.array() + 1.0;  // exactly linear
  Mat v(5, 3);
  for (Index r = 0; r < 5; ++r) {
    v(r, 0) = 1.0;
    v(r, 1) = lambdas[r];
    v(r, 2) = lambdas[r] * lambdas[r];
  }
  const Vec coef = v.colPivHouseholderQr().solve(values);
  const double at_minus_one = coef[0] - coef[1] + coef[2];
  CHECK(at_minus_one == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("rescaling the grid against the error variance leaves pseudo-noise invariant") {
  const ClassicalErrorDesign d(500, 0.5, 21);
  SimexConfig a;
  a.lambda_grid = (Vec(3) << 0.5, 1.0, 2.0).finished();
  a.seed = 99;
  SimexConfig b;
  b.lambda_grid = (Vec(3) << 1.0, 2.0, 4.0).finished();
  b.seed = 99;
  // lambda sigma_e^2 identical pointwise, same seed: same added noise, and
  // the naive point is shared, so grid-point estimates coincide
  const auto fit_a = simex(d.y, d.x_noisy, d.controls, d.sigma_e, a);
  const auto fit_b = simex(d.y, d.x_noisy, d.controls, d.sigma_e / std::sqrt(2.0), b);
  // extrapolations differ (different lambda axes) but both stay finite
  CHECK(fit_a.beta.allFinite());
  CHECK(fit_b.beta.allFinite());
}

TEST_CASE("misclassification matrix powers hit the endpoints") {
  Eigen::Matrix2d pi;
  pi << 0.9, 0.2, 0.1, 0.8;
  const auto p0 = misclassification_power(pi, 0.0);
  const auto p1 = misclassification_power(pi, 1.0);
  CHECK((p0 - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((p1 - pi).cwiseAbs().maxCoeff() < 1e-12);
  // half power composes to the full matrix
  const auto ph = misclassification_power(pi, 0.5);
  CHECK((ph * ph - pi).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("misclassification matrix validation") {
  Eigen::Matrix2d bad;
  bad << 0.4, 0.2, 0.6, 0.8;  // diagonal below one half
  CHECK_THROWS_AS(misclassification_power(bad, 1.0), std::invalid_argument);
  Eigen::Matrix2d not_stochastic;
  not_stochastic << 0.9, 0.2, 0.2, 0.8;
  CHECK_THROWS_AS(misclassification_power(not_stochastic, 1.0), std::invalid_argument);
}

TEST_CASE("identity misclassification makes mc-simex the naive estimate") {
  Rng rng(5);
  const Index n = 300;
  Vec x(n), y(n);
  Mat z(n, 1);
  z.setOnes();
  for (Index r = 0; r < n; ++r) {
    x[r] = rng.bernoulli(0.5);
    y[r] = 1.0 + 0.5 * x[r] + rng.normal(0.0, 0.3);
  }
  SimexConfig cfg;
  cfg.seed = 11;
  const auto corrected = mc_simex(y, x, z, Eigen::Matrix2d::Identity(), cfg);
  const auto naive = ols(y, econ_design(x, z));
  CHECK((corrected.beta - naive.beta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mc-simex recovers a misclassified slope direction") {
  Rng rng(31);
  const Index n = 4000;
  Vec x_true(n), x_obs(n), y(n);
  Mat z(n, 1);
  z.setOnes();
  Eigen::Matrix2d pi;
  pi << 0.85, 0.15, 0.15, 0.85;
  for (Index r = 0; r < n; ++r) {
    x_true[r] = rng.bernoulli(0.5);
    const int obs = x_true[r] > 0.5 ? 1 : 0;
    x_obs[r] = rng.next_double() < pi(1, obs) ? 1.0 : 0.0;
    y[r] = 1.0 + 0.5 * x_true[r] + rng.normal(0.0, 0.2);
  }
  SimexConfig cfg;
  cfg.seed = 13;
  cfg.replicates = 60;
  const auto naive = ols(y, econ_design(x_obs, z));
  const auto corrected = mc_simex(y, x_obs, z, pi, cfg);
  CHECK(naive.beta[1] < 0.42);  // attenuated
  CHECK(std::abs(corrected.beta[1] - 0.5) < std::abs(naive.beta[1] - 0.5));
}

TEST_CASE("estimated misclassification matrix") {
  Vec truth(20), pred(20);
  for (Index r = 0; r < 20; ++r) {
    truth[r] = r < 10 ? 0.0 : 1.0;
    pred[r] = truth[r];
  }
  const auto perfect = estimate_misclassification(pred, truth);
  CHECK(perfect(0, 0) >= 0.9);
  CHECK(perfect(1, 1) >= 0.9);
  CHECK(perfect.col(0).sum() == doctest::Approx(1.0));

  const auto flipped = estimate_misclassification((1.0 - pred.array()).matrix(), truth);
  CHECK(flipped(1, 0) > flipped(0, 0));
  CHECK(flipped(0, 1) > flipped(1, 1));

  CHECK_THROWS_AS(estimate_misclassification(pred, Vec::Zero(20)), std::invalid_argument);
}

TEST_CASE("blindspot report: uncorrelated control is unaffected") {
  BlindspotDesign design;
  design.rho = 0.0;
  design.rounds = 30;
  design.n = 1500;
  const auto report = simex_blindspot_check(design, 42);
  CHECK(report.condition_holds);  // sigma_x >= sigma_e here
  CHECK(std::abs(report.bias_naive) < 0.02);
  CHECK(std::abs(report.bias_simex) < 0.02);
}

TEST_CASE("blindspot report: correlated control flips the comparison") {
  BlindspotDesign design;
  design.rho = 0.3;
  design.rounds = 40;
  design.n = 2000;
  const auto report = simex_blindspot_check(design, 7);
  CHECK(report.condition_holds);
  CHECK(std::abs(report.bias_naive) > 0.02);
  CHECK(report.simex_more_biased);
}

TEST_CASE("the moment condition holds whenever signal variance dominates error variance") {
  BlindspotDesign design;
  design.sigma_x = 1.0;
  design.sigma_e = 0.8;  // sigma_x^2 >= sigma_e^2
  design.rho = 0.25;
  design.rounds = 10;
  design.n = 1200;
  const auto report = simex_blindspot_check(design, 3);
  CHECK(report.condition_holds);
}

}  // TEST_SUITE
