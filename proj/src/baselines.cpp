#include "forestiv/baselines.hpp"

#include "forestiv/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace forestiv {

namespace {

void check_grid(const SimexConfig& config) {
  if (config.replicates < 2) throw std::invalid_argument("simex: need at least two replicates");
  if (config.lambda_grid.size() < 2)
    throw std::invalid_argument("simex: need at least two grid points");
  double prev = 0.0;
  for (Index k = 0; k < config.lambda_grid.size(); ++k) {
    if (config.lambda_grid[k] <= prev)
      throw std::invalid_argument("simex: lambda grid must be ascending and positive");
    prev = config.lambda_grid[k];
  }
}

// per-coefficient quadratic in lambda through (0, naive) and the grid means,
// evaluated at -1
Vec quadratic_extrapolation(const Vec& lambdas, const Mat& betas) {
  const Index points = lambdas.size();
  Mat v(points, 3);
  for (Index r = 0; r < points; ++r) {
    v(r, 0) = 1.0;
    v(r, 1) = lambdas[r];
    v(r, 2) = lambdas[r] * lambdas[r];
  }
  const Eigen::ColPivHouseholderQR<Mat> qr(v);
  Vec out(betas.cols());
  for (Index c = 0; c < betas.cols(); ++c) {
    const Vec coef = qr.solve(betas.col(c));
    out[c] = coef[0] - coef[1] + coef[2];
  }
  return out;
}

}  // namespace

EstimateResult simex(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x_noisy,
                     const Eigen::Ref<const Mat>& controls, double sigma_e,
                     const SimexConfig& config, std::vector<std::string> names,
                     SimexDetail* detail) {
  if (sigma_e < 0.0) throw std::invalid_argument("simex: sigma_e must be nonnegative");
  check_grid(config);

  EstimateResult naive = ols(y, econ_design(x_noisy, controls), names, "simex");
  naive.note = "vcov is the naive OLS vcov; use resampling for a proper variance";
  if (sigma_e == 0.0) {
    if (detail) {
      detail->lambdas = Vec::Zero(1);
      detail->grid_means = naive.beta.transpose();
    }
    return naive;
  }

  const Index n_grid = config.lambda_grid.size();
  Vec lambdas(n_grid + 1);
  Mat betas(n_grid + 1, naive.k());
  lambdas[0] = 0.0;
  betas.row(0) = naive.beta.transpose();

  Rng rng(derive_seed(config.seed, "simex"));
  for (Index g = 0; g < n_grid; ++g) {
    const double noise_sd = std::sqrt(config.lambda_grid[g]) * sigma_e;
    Vec mean_beta = Vec::Zero(naive.k());
    for (int b = 0; b < config.replicates; ++b) {
      Vec x_b(x_noisy.size());
      for (Index r = 0; r < x_b.size(); ++r) x_b[r] = x_noisy[r] + rng.normal(0.0, noise_sd);
      mean_beta += ols(y, econ_design(x_b, controls), {}, "ols").beta;
    }
    lambdas[g + 1] = config.lambda_grid[g];
    betas.row(g + 1) = (mean_beta / static_cast<double>(config.replicates)).transpose();
  }
  if (detail) {
    detail->lambdas = lambdas;
    detail->grid_means = betas;
  }

  EstimateResult out = naive;
  out.beta = quadratic_extrapolation(lambdas, betas);
  return out;
}

Eigen::Matrix2d misclassification_power(const Eigen::Matrix2d& pi, double power, bool* clamped) {
  for (int c = 0; c < 2; ++c) {
    if (std::abs(pi.col(c).sum() - 1.0) > 1e-8)
      throw std::invalid_argument("misclassification matrix must be column-stochastic");
    if (pi(c, c) <= 0.5)
      throw std::invalid_argument("misclassification matrix diagonals must exceed 0.5");
  }
  // eigenvalues are 1 and pi00 + pi11 - 1 (positive given the diagonals)
  const double d = pi(0, 0) + pi(1, 1) - 1.0;
  if (2.0 - pi(0, 0) - pi(1, 1) < 1e-12) {  // no misclassification at all
    if (clamped) *clamped = false;
    return Eigen::Matrix2d::Identity();
  }
  Eigen::Matrix2d v;
  v << 1.0 - pi(1, 1), 1.0, 1.0 - pi(0, 0), -1.0;
  const Eigen::Matrix2d v_inv = v.inverse();
  Eigen::Matrix2d result =
      v * Eigen::Vector2d(1.0, std::pow(d, power)).asDiagonal() * v_inv;
  bool did_clamp = false;
  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < 2; ++r) {
      if (result(r, c) < 0.0 || result(r, c) > 1.0) {
        result(r, c) = std::min(1.0, std::max(0.0, result(r, c)));
        did_clamp = true;
      }
    }
    result.col(c) /= result.col(c).sum();
  }
  if (clamped) *clamped = did_clamp;
  return result;
}

EstimateResult mc_simex(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x_mis,
                        const Eigen::Ref<const Mat>& controls, const Eigen::Matrix2d& pi,
                        const SimexConfig& config, std::vector<std::string> names) {
  check_grid(config);
  for (Index r = 0; r < x_mis.size(); ++r)
    if (x_mis[r] != 0.0 && x_mis[r] != 1.0)
      throw std::invalid_argument("mc_simex: labels must be 0 or 1");

  EstimateResult naive = ols(y, econ_design(x_mis, controls), names, "mcsimex");
  naive.note = "vcov is the naive OLS vcov; use resampling for a proper variance";

  const Index n_grid = config.lambda_grid.size();
  Vec lambdas(n_grid + 1);
  Mat betas(n_grid + 1, naive.k());
  lambdas[0] = 0.0;
  betas.row(0) = naive.beta.transpose();

  Rng rng(derive_seed(config.seed, "mcsimex"));
  bool clamped = false;
  for (Index g = 0; g < n_grid; ++g) {
    bool c = false;
    const Eigen::Matrix2d pl = misclassification_power(pi, config.lambda_grid[g], &c);
    clamped = clamped || c;
    Vec mean_beta = Vec::Zero(naive.k());
    for (int b = 0; b < config.replicates; ++b) {
      Vec x_b(x_mis.size());
      for (Index r = 0; r < x_b.size(); ++r) {
        const int obs = x_mis[r] > 0.5 ? 1 : 0;
        x_b[r] = rng.next_double() < pl(1, obs) ? 1.0 : 0.0;
      }
      mean_beta += ols(y, econ_design(x_b, controls), {}, "ols").beta;
    }
    lambdas[g + 1] = config.lambda_grid[g];
    betas.row(g + 1) = (mean_beta / static_cast<double>(config.replicates)).transpose();
  }

  EstimateResult out = naive;
  out.beta = quadratic_extrapolation(lambdas, betas);
  if (clamped) out.note += "; pi^lambda entries clamped to [0,1]";
  return out;
}

Eigen::Matrix2d estimate_misclassification(const Eigen::Ref<const Vec>& pred_test,
                                           const Eigen::Ref<const Vec>& truth_test) {
  if (pred_test.size() != truth_test.size())
    throw std::invalid_argument("estimate_misclassification: length mismatch");
  Eigen::Matrix2d counts = Eigen::Matrix2d::Zero();
  for (Index r = 0; r < pred_test.size(); ++r) {
    const int p = pred_test[r] > 0.5 ? 1 : 0;
    const int t = truth_test[r] > 0.5 ? 1 : 0;
    counts(p, t) += 1.0;
  }
  for (int c = 0; c < 2; ++c)
    if (counts.col(c).sum() == 0.0)
      throw std::invalid_argument("estimate_misclassification: a truth class is absent");
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 2; ++r)
      if (counts(r, c) == 0.0) counts(r, c) = 1.0;
  for (int c = 0; c < 2; ++c) counts.col(c) /= counts.col(c).sum();
  return counts;
}

BlindspotReport simex_blindspot_check(const BlindspotDesign& design, std::uint64_t seed) {
  if (design.n < 10) throw std::invalid_argument("blindspot check: need at least 10 rows");
  if (design.rounds < 1) throw std::invalid_argument("blindspot check: need at least one round");
  if (std::abs(design.rho) >= 1.0) throw std::invalid_argument("blindspot check: |rho| < 1 required");

  double sum_naive = 0.0, sum_simex = 0.0;
  double sum_var_z = 0.0, sum_var_x = 0.0, sum_var_e = 0.0, sum_cov_ze = 0.0;
  for (int round = 0; round < design.rounds; ++round) {
    Rng rng(derive_seed(seed, "blindspot", static_cast<std::uint64_t>(round)));
    const Index n = design.n;
    Vec x_true(n), e(n), z(n), y(n);
    for (Index r = 0; r < n; ++r) {
      x_true[r] = rng.normal(0.0, design.sigma_x);
      e[r] = rng.normal(0.0, design.sigma_e);
      const double raw = rng.normal(0.0, 1.0);
      z[r] = design.sigma_z *
             (design.rho * e[r] / design.sigma_e + std::sqrt(1.0 - design.rho * design.rho) * raw);
      y[r] = design.beta0 + design.beta_x * x_true[r] + design.beta_z * z[r] +
             rng.normal(0.0, design.noise_sd);
    }
    const Vec x_noisy = x_true + e;

    Mat controls(n, 2);
    controls.col(0).setOnes();
    controls.col(1) = z;

    const auto naive = ols(y, econ_design(x_noisy, controls), {}, "ols");
    SimexConfig cfg = design.simex;
    cfg.seed = derive_seed(seed, "blindspot-simex", static_cast<std::uint64_t>(round));
    const auto corrected = simex(y, x_noisy, controls, design.sigma_e, cfg);

    sum_naive += naive.beta[2] - design.beta_z;
    sum_simex += corrected.beta[2] - design.beta_z;
    const Index dof = n - 1;
    sum_var_z += (z.array() - z.mean()).square().sum() / dof;
    sum_var_x += (x_true.array() - x_true.mean()).square().sum() / dof;
    sum_var_e += (e.array() - e.mean()).square().sum() / dof;
    sum_cov_ze += ((z.array() - z.mean()) * (e.array() - e.mean())).sum() / dof;
  }

  const double rounds = static_cast<double>(design.rounds);
  const double var_z = sum_var_z / rounds;
  const double var_x = sum_var_x / rounds;
  const double var_e = sum_var_e / rounds;
  const double cov_ze = sum_cov_ze / rounds;

  BlindspotReport report;
  report.bias_naive = sum_naive / rounds;
  report.bias_simex = sum_simex / rounds;
  report.condition_lhs = std::abs(var_z * var_x - cov_ze * cov_ze);
  report.condition_rhs = std::abs(var_z * (var_x + var_e) - cov_ze * cov_ze);
  report.condition_holds = report.condition_lhs < report.condition_rhs;
  report.simex_more_biased = std::abs(report.bias_simex) > std::abs(report.bias_naive);
  return report;
}

}  // namespace forestiv
