#include "forestiv/lasso.hpp"

#include "forestiv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace forestiv {

namespace {

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

// Standardized view of a moments problem: correlation-scale Gram and
// response correlations, with constant columns masked out.
struct Standardized {
  Index n = 0;
  Index q = 0;
  Vec mu, sd;                 // per column
  std::vector<bool> constant;
  Mat gram;                   // (1/n) Xs'Xs, unit diagonal on live columns
  Vec cy;                     // (1/n) Xs'(y - ybar)
  double ybar = 0.0;

  explicit Standardized(const RegressionMoments& m) {
    n = m.n;
    q = m.q();
    if (n < 2) throw std::invalid_argument("lasso: need at least two rows");
    const double dn = static_cast<double>(n);
    mu = m.xsum / dn;
    ybar = m.ysum / dn;
    sd = Vec::Zero(q);
    constant.assign(static_cast<std::size_t>(q), false);
    for (Index j = 0; j < q; ++j) {
      const double msq = m.xtx(j, j) / dn;
      const double var = msq - mu[j] * mu[j];
      if (var <= 1e-14 * std::max(msq, 1e-300)) {
        constant[static_cast<std::size_t>(j)] = true;
        sd[j] = 1.0;  // placeholder, column never enters
      } else {
        sd[j] = std::sqrt(var);
      }
    }
    gram = Mat::Zero(q, q);
    cy = Vec::Zero(q);
    for (Index j = 0; j < q; ++j) {
      if (constant[static_cast<std::size_t>(j)]) continue;
      cy[j] = (m.xty[j] / dn - mu[j] * ybar) / sd[j];
      for (Index kcol = 0; kcol <= j; ++kcol) {
        if (constant[static_cast<std::size_t>(kcol)]) continue;
        const double g = (m.xtx(j, kcol) / dn - mu[j] * mu[kcol]) / (sd[j] * sd[kcol]);
        gram(j, kcol) = g;
        gram(kcol, j) = g;
      }
    }
  }

  double lambda_max() const {
    double m = 0.0;
    for (Index j = 0; j < q; ++j)
      if (!constant[static_cast<std::size_t>(j)]) m = std::max(m, std::abs(cy[j]));
    return m;
  }
};

// Cyclic coordinate descent at one penalty, warm-started from b. a tracks
// (1/n) Xs'Xs b and is updated incrementally.
int descend(const Standardized& s, double lambda, const LassoParams& params, Vec& b, Vec& a,
            bool& converged) {
  int sweeps = 0;
  converged = false;
  while (sweeps < params.max_iter) {
    ++sweeps;
    double max_change = 0.0;
    for (Index j = 0; j < s.q; ++j) {
      if (s.constant[static_cast<std::size_t>(j)]) continue;
      const double z = s.cy[j] - a[j] + b[j];
      const double bj = soft_threshold(z, lambda);
      const double delta = bj - b[j];
      if (delta != 0.0) {
        a += s.gram.col(j) * delta;
        b[j] = bj;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    if (max_change < params.tol) {
      converged = true;
      break;
    }
  }
  return sweeps;
}

// Warm-started descent over a penalty path. Each step converges on a
// working set (carried between steps, with a dense subgram), then verifies
// the KKT conditions over all coordinates, growing the set until no
// violators remain; coordinates outside the set stay exactly zero.
class PathSolver {
 public:
  PathSolver(const Standardized& s, const LassoParams& params) : s_(s), params_(params) {
    b_ = Vec::Zero(s.q);
    grad_ = Vec::Zero(s.q);
    live_.reserve(static_cast<std::size_t>(s.q));
    for (Index j = 0; j < s.q; ++j)
      if (!s.constant[static_cast<std::size_t>(j)]) live_.push_back(j);
  }

  const Vec& coefficients() const { return b_; }
  int last_sweeps() const { return last_sweeps_; }
  bool converged() const { return converged_; }

  void step(double lambda) {
    last_sweeps_ = 0;
    converged_ = true;
    prune_working_set();
    while (true) {
      if (!work_.empty()) converge_working_set(lambda);
      // full KKT scan; admit any violating coordinate and go again
      refresh_gradients();
      bool grew = false;
      for (Index j : live_) {
        if (b_[j] == 0.0 && std::abs(grad_[j]) > lambda && !in_work_test(j)) {
          insert_into_work(j);
          grew = true;
        }
      }
      if (!grew) break;
    }
  }

 private:
  bool in_work_test(Index j) const {
    return std::binary_search(work_.begin(), work_.end(), j);
  }

  // dropped zeros re-enter through the KKT scan when they become violators
  void prune_working_set() {
    std::size_t zeros = 0;
    for (Index j : work_)
      if (b_[j] == 0.0) ++zeros;
    if (zeros <= work_.size() / 2) return;
    work_.erase(std::remove_if(work_.begin(), work_.end(), [&](Index j) { return b_[j] == 0.0; }),
                work_.end());
    rebuild_needed_ = true;
  }

  void refresh_gradients() {
    grad_ = s_.cy;
    for (Index j : live_)
      if (b_[j] != 0.0) grad_ -= s_.gram.col(j) * b_[j];
  }

  void insert_into_work(Index j) {
    const auto pos = std::lower_bound(work_.begin(), work_.end(), j) - work_.begin();
    work_.insert(work_.begin() + pos, j);
    rebuild_needed_ = true;
  }

  void rebuild_subproblem() {
    const auto w = static_cast<Index>(work_.size());
    g_.resize(w, w);
    c_.resize(w);
    bw_.resize(w);
    for (Index a = 0; a < w; ++a) {
      const Index ja = work_[static_cast<std::size_t>(a)];
      c_[a] = s_.cy[ja];
      bw_[a] = b_[ja];
      for (Index k = 0; k <= a; ++k) {
        const double v = s_.gram(ja, work_[static_cast<std::size_t>(k)]);
        g_(a, k) = v;
        g_(k, a) = v;
      }
    }
    aw_ = g_ * bw_;
    rebuild_needed_ = false;
  }

  void converge_working_set(double lambda) {
    if (rebuild_needed_) rebuild_subproblem();
    const auto w = static_cast<Index>(work_.size());
    int sweeps = 0;
    while (sweeps < params_.max_iter) {
      ++sweeps;
      double max_change = 0.0;
      for (Index k = 0; k < w; ++k) {
        const double z = c_[k] - aw_[k] + bw_[k];
        const double bk = soft_threshold(z, lambda);
        const double delta = bk - bw_[k];
        if (delta != 0.0) {
          aw_ += g_.col(k) * delta;
          bw_[k] = bk;
          max_change = std::max(max_change, std::abs(delta));
        }
      }
      if (max_change < params_.tol) break;
    }
    last_sweeps_ += sweeps;
    converged_ = converged_ && sweeps < params_.max_iter;
    for (Index k = 0; k < w; ++k) b_[work_[static_cast<std::size_t>(k)]] = bw_[k];
  }

  const Standardized& s_;
  LassoParams params_;
  Vec b_;
  Vec grad_;
  std::vector<Index> live_;
  std::vector<Index> work_;
  Mat g_;
  Vec c_, bw_, aw_;
  bool rebuild_needed_ = true;
  int last_sweeps_ = 0;
  bool converged_ = true;
};

LassoFit finish_fit(const Standardized& s, const Vec& b, double lambda, int iterations,
                    bool converged) {
  LassoFit fit;
  fit.lambda = lambda;
  fit.iterations = iterations;
  fit.converged = converged;
  fit.standardized = b;
  fit.coefficients = Vec::Zero(s.q);
  double dot_mu = 0.0;
  for (Index j = 0; j < s.q; ++j) {
    if (s.constant[static_cast<std::size_t>(j)]) {
      fit.constant_columns.push_back(static_cast<int>(j));
      continue;
    }
    if (b[j] != 0.0) {
      fit.active_set.push_back(static_cast<int>(j));
      fit.coefficients[j] = b[j] / s.sd[j];
      dot_mu += fit.coefficients[j] * s.mu[j];
    }
  }
  fit.intercept = s.ybar - dot_mu;
  return fit;
}

Vec penalty_grid(double lambda_max) {
  Vec grid(100);
  if (lambda_max <= 0.0) {
    grid.setZero();
    return grid;
  }
  for (Index k = 0; k < 100; ++k)
    grid[k] = lambda_max * std::pow(1e-3, static_cast<double>(k) / 99.0);
  return grid;
}

// Held-out SSE of a standardized solution, straight from fold moments.
double fold_sse(const RegressionMoments& fold, const Standardized& s, const Vec& b) {
  thread_local std::vector<Index> active;
  active.clear();
  double intercept = s.ybar;
  for (Index j = 0; j < s.q; ++j) {
    if (b[j] != 0.0) {
      active.push_back(j);
      intercept -= b[j] / s.sd[j] * s.mu[j];
    }
  }
  double sse = fold.yty - 2.0 * intercept * fold.ysum +
               intercept * intercept * static_cast<double>(fold.n);
  for (Index j : active) {
    const double bj = b[j] / s.sd[j];
    sse += 2.0 * bj * (intercept * fold.xsum[j] - fold.xty[j]);
    for (Index k : active) sse += bj * (b[k] / s.sd[k]) * fold.xtx(j, k);
  }
  return sse;
}

void check_finite(const Eigen::Ref<const Mat>& x, const Eigen::Ref<const Vec>& y) {
  if (!x.allFinite() || !y.allFinite())
    throw std::invalid_argument("lasso: non-finite inputs");
  if (x.rows() != y.size()) throw std::invalid_argument("lasso: row count mismatch");
}

}  // namespace

RegressionMoments RegressionMoments::from_data(const Eigen::Ref<const Mat>& x,
                                               const Eigen::Ref<const Vec>& y) {
  RegressionMoments m;
  m.n = x.rows();
  m.xtx = Mat::Zero(x.cols(), x.cols());
  m.xtx.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  m.xtx.triangularView<Eigen::StrictlyUpper>() = m.xtx.transpose();
  m.xty = x.transpose() * y;
  m.xsum = x.colwise().sum();
  m.ysum = y.sum();
  m.yty = y.squaredNorm();
  return m;
}

RegressionMoments& RegressionMoments::operator-=(const RegressionMoments& other) {
  n -= other.n;
  xtx -= other.xtx;
  xty -= other.xty;
  xsum -= other.xsum;
  ysum -= other.ysum;
  yty -= other.yty;
  return *this;
}

double lasso_lambda_max(const RegressionMoments& m) { return Standardized(m).lambda_max(); }

LassoFit fit_lasso_moments(const RegressionMoments& m, double lambda, const LassoParams& params) {
  if (lambda < 0.0) throw std::invalid_argument("lasso: lambda must be nonnegative");
  Standardized s(m);
  Vec b = Vec::Zero(s.q);
  Vec a = Vec::Zero(s.q);
  bool converged = true;
  const int sweeps = descend(s, lambda, params, b, a, converged);
  return finish_fit(s, b, lambda, sweeps, converged);
}

LassoFit fit_lasso(const Eigen::Ref<const Mat>& predictors, const Eigen::Ref<const Vec>& response,
                   double lambda, const LassoParams& params) {
  check_finite(predictors, response);
  return fit_lasso_moments(RegressionMoments::from_data(predictors, response), lambda, params);
}

CvLassoResult cv_lasso_moments(const RegressionMoments& full,
                               const std::vector<RegressionMoments>& folds,
                               const LassoParams& params) {
  if (folds.size() < 2) throw std::invalid_argument("cv_lasso: need at least two folds");
  for (const auto& f : folds) {
    if (f.n < 1) throw std::invalid_argument("cv_lasso: empty fold");
    if (full.n - f.n < 2) throw std::invalid_argument("cv_lasso: degenerate fold (training split < 2 rows)");
  }

  const Standardized s_full(full);
  CvLassoResult out;
  out.lambda_grid = penalty_grid(s_full.lambda_max());
  const Index n_lambda = out.lambda_grid.size();
  out.cv_mse = Vec::Zero(n_lambda);
  const auto n_folds = static_cast<Index>(folds.size());
  Mat fold_mse = Mat::Zero(n_folds, n_lambda);

  // fold fits only feed the CV curve; with warm starts a capped, coarser
  // descent changes held-out MSE far below fold noise
  LassoParams fold_params = params;
  fold_params.tol = std::max(params.tol, 3e-4);
  fold_params.max_iter = std::min(params.max_iter, 15);

  std::vector<Standardized> fold_views;
  std::vector<PathSolver> solvers;
  fold_views.reserve(static_cast<std::size_t>(n_folds));
  for (Index f = 0; f < n_folds; ++f) {
    RegressionMoments train = full;
    train -= folds[static_cast<std::size_t>(f)];
    fold_views.emplace_back(train);
  }
  solvers.reserve(static_cast<std::size_t>(n_folds));
  for (Index f = 0; f < n_folds; ++f)
    solvers.emplace_back(fold_views[static_cast<std::size_t>(f)], fold_params);

  Index evaluated = 0;
  Index running_best = 0;
  for (Index k = 0; k < n_lambda; ++k) {
    for (Index f = 0; f < n_folds; ++f) {
      solvers[static_cast<std::size_t>(f)].step(out.lambda_grid[k]);
      const auto& fold = folds[static_cast<std::size_t>(f)];
      const double sse = fold_sse(fold, fold_views[static_cast<std::size_t>(f)],
                                  solvers[static_cast<std::size_t>(f)].coefficients());
      out.cv_mse[k] += sse;
      fold_mse(f, k) = sse / static_cast<double>(fold.n);
    }
    out.cv_mse[k] /= static_cast<double>(full.n);
    evaluated = k + 1;
    if (out.cv_mse[k] < out.cv_mse[running_best]) running_best = k;
    if (params.cv_early_stop && k >= running_best + 15 &&
        out.cv_mse[k] > 1.5 * out.cv_mse[running_best])
      break;
  }
  out.lambda_grid.conservativeResize(evaluated);
  out.cv_mse.conservativeResize(evaluated);
  out.cv_se = Vec::Zero(evaluated);
  for (Index k = 0; k < evaluated; ++k) {
    const double mean = fold_mse.col(k).mean();
    const double var = (fold_mse.col(k).array() - mean).square().sum() /
                       static_cast<double>(n_folds - 1);
    out.cv_se[k] = std::sqrt(var / static_cast<double>(n_folds));
  }

  Index best = running_best;
  if (params.rule == PenaltyRule::one_se) {
    const double cutoff = out.cv_mse[best] + out.cv_se[best];
    for (Index k = 0; k <= best; ++k) {
      if (out.cv_mse[k] <= cutoff) {
        best = k;  // grid is descending, so the first hit is the largest penalty
        break;
      }
    }
  }
  out.lambda = out.lambda_grid[best];

  // full-data path down to the chosen penalty, warm-started
  PathSolver solver(s_full, params);
  for (Index k = 0; k <= best; ++k) solver.step(out.lambda_grid[k]);
  out.fit =
      finish_fit(s_full, solver.coefficients(), out.lambda, solver.last_sweeps(), solver.converged());
  return out;
}

CvLassoResult cv_lasso(const Eigen::Ref<const Mat>& predictors,
                       const Eigen::Ref<const Vec>& response, int n_folds, std::uint64_t seed,
                       const LassoParams& params) {
  check_finite(predictors, response);
  const Index n = predictors.rows();
  if (n_folds < 2 || n < n_folds) throw std::invalid_argument("cv_lasso: need n >= n_folds >= 2");

  Rng rng(seed);
  auto order = rng.sample_without_replacement<Index>(n, n);
  std::vector<RegressionMoments> folds;
  Index start = 0;
  for (int f = 0; f < n_folds; ++f) {
    const Index size = n / n_folds + (f < static_cast<int>(n % n_folds) ? 1 : 0);
    std::vector<Index> rows(order.begin() + start, order.begin() + start + size);
    start += size;
    folds.push_back(RegressionMoments::from_data(predictors(rows, Eigen::all), response(rows)));
  }
  return cv_lasso_moments(RegressionMoments::from_data(predictors, response), folds, params);
}

}  // namespace forestiv
