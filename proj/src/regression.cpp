#include "forestiv/regression.hpp"

#include "forestiv/distributions.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace forestiv {

namespace {

constexpr double kRankThreshold = 1e-10;

struct LeastSquares {
  Vec beta;
  Vec residuals;
  double rss;
  Mat xtx_inverse;  // (A'A)^-1 from the QR factors
};

LeastSquares solve_ls(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Mat>& a,
                      const char* who) {
  const Index n = a.rows();
  const Index k = a.cols();
  if (y.size() != n) throw std::invalid_argument(std::string(who) + ": row count mismatch");
  if (n <= k) throw std::invalid_argument(std::string(who) + ": need n > K");
  Eigen::ColPivHouseholderQR<Mat> qr(a);
  qr.setThreshold(kRankThreshold);
  if (qr.rank() < k) throw std::invalid_argument(std::string(who) + ": rank-deficient design");
  LeastSquares out;
  out.beta = qr.solve(y);
  out.residuals = y - a * out.beta;
  out.rss = out.residuals.squaredNorm();
  // A P = Q R  =>  (A'A)^-1 = P R^-1 R^-T P'
  Mat r_inv = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(
      Mat::Identity(k, k));
  out.xtx_inverse = qr.colsPermutation() * (r_inv * r_inv.transpose()) *
                    qr.colsPermutation().transpose();
  return out;
}

std::vector<std::string> default_names(Index k) {
  std::vector<std::string> names;
  for (Index i = 0; i < k; ++i) names.push_back("b" + std::to_string(i));
  return names;
}

}  // namespace

Vec EstimateResult::se() const { return vcov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

EstimateResult ols(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Mat>& design,
                   std::vector<std::string> names, std::string method) {
  auto ls = solve_ls(y, design, "ols");
  const Index n = design.rows();
  const Index k = design.cols();
  EstimateResult r;
  r.beta = std::move(ls.beta);
  r.vcov = (ls.rss / static_cast<double>(n - k)) * ls.xtx_inverse;
  r.n = n;
  r.method = std::move(method);
  r.names = names.empty() ? default_names(k) : std::move(names);
  if (static_cast<Index>(r.names.size()) != k)
    throw std::invalid_argument("ols: coefficient name count mismatch");
  return r;
}

Mat econ_design(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Mat>& controls) {
  const Index n = x.size();
  if (controls.rows() != n) throw std::invalid_argument("econ_design: row count mismatch");
  Mat d(n, controls.cols() + 1);
  d.col(0) = controls.col(0);
  d.col(1) = x;
  if (controls.cols() > 1) d.rightCols(controls.cols() - 1) = controls.rightCols(controls.cols() - 1);
  return d;
}

EstimateResult tsls(const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& x,
                    const Eigen::Ref<const Mat>& controls, const Eigen::Ref<const Mat>& instruments,
                    std::vector<std::string> names, std::string method) {
  const Index n = y.size();
  if (instruments.cols() < 1) throw std::invalid_argument("tsls: need at least one instrument");
  if (x.size() != n || controls.rows() != n || instruments.rows() != n)
    throw std::invalid_argument("tsls: row count mismatch");
  const Index k = controls.cols() + 1;
  if (n <= k + instruments.cols()) throw std::invalid_argument("tsls: need n > K + |W|");

  Mat stage1(n, instruments.cols() + controls.cols());
  stage1.leftCols(instruments.cols()) = instruments;
  stage1.rightCols(controls.cols()) = controls;
  auto first = solve_ls(x, stage1, "tsls stage 1");
  const Vec x_fitted = stage1 * first.beta;

  const Mat c = econ_design(x_fitted, controls);
  auto second = solve_ls(y, c, "tsls stage 2");

  // classical 2SLS covariance: residuals from the original x
  const Vec resid = y - econ_design(x, controls) * second.beta;
  const double s2 = resid.squaredNorm() / static_cast<double>(n - k);

  EstimateResult r;
  r.beta = std::move(second.beta);
  r.vcov = s2 * second.xtx_inverse;
  r.n = n;
  r.method = std::move(method);
  r.names = names.empty() ? default_names(k) : std::move(names);
  if (static_cast<Index>(r.names.size()) != k)
    throw std::invalid_argument("tsls: coefficient name count mismatch");
  return r;
}

HotellingResult hotelling(const EstimateResult& a, const EstimateResult& b) {
  const Index k = a.k();
  if (b.k() != k || a.vcov.rows() != k || b.vcov.rows() != k)
    throw std::invalid_argument("hotelling: dimension mismatch");
  const Vec d = a.beta - b.beta;
  const Mat s = a.vcov + b.vcov;

  HotellingResult h;
  h.dof = static_cast<int>(k);
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (s + s.transpose()));
  const Vec lambda = eig.eigenvalues();
  const double lmax = lambda.cwiseAbs().maxCoeff();
  if (lmax <= 0.0) {
    h.singular = true;
    h.statistic = d.isZero(0.0) ? 0.0 : std::numeric_limits<double>::infinity();
    h.p_value = d.isZero(0.0) ? 1.0 : 0.0;
    return h;
  }
  const double tol = kRankThreshold * lmax;
  double stat = 0.0;
  for (Index i = 0; i < k; ++i) {
    if (lambda[i] > tol) {
      const double proj = eig.eigenvectors().col(i).dot(d);
      stat += proj * proj / lambda[i];
    } else {
      h.singular = true;
    }
  }
  h.statistic = stat;
  h.p_value = chi2_tail(stat, h.dof);
  return h;
}

double empirical_mse(const EstimateResult& iv, const EstimateResult& ref) {
  if (iv.k() != ref.k()) throw std::invalid_argument("empirical_mse: dimension mismatch");
  return (iv.beta - ref.beta).squaredNorm() + iv.vcov.trace();
}

double first_stage_f(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Mat>& instruments,
                     const Eigen::Ref<const Mat>& controls) {
  const Index n = x.size();
  const Index q = instruments.cols();
  const Index k = controls.cols();
  if (q < 1) throw std::invalid_argument("first_stage_f: need instruments");
  Mat full(n, q + k);
  full.leftCols(q) = instruments;
  full.rightCols(k) = controls;
  auto unrestricted = solve_ls(x, full, "first_stage_f");
  auto restricted = solve_ls(x, controls, "first_stage_f restricted");
  const double scale = restricted.rss + x.squaredNorm() * 1e-30;
  if (unrestricted.rss <= 1e-12 * std::max(scale, 1e-300))
    return std::numeric_limits<double>::infinity();
  const double num = (restricted.rss - unrestricted.rss) / static_cast<double>(q);
  const double den = unrestricted.rss / static_cast<double>(n - q - k);
  return num / den;
}

double exclusion_adjusted_r2(const Eigen::Ref<const Vec>& errors,
                             const Eigen::Ref<const Mat>& instruments) {
  const Index n = errors.size();
  const Index q = instruments.cols();
  if (n <= q + 1) throw std::invalid_argument("exclusion_adjusted_r2: need n > |W| + 1");
  Mat design(n, q + 1);
  design.col(0).setOnes();
  design.rightCols(q) = instruments;
  auto ls = solve_ls(errors, design, "exclusion_adjusted_r2");
  const double tss = (errors.array() - errors.mean()).matrix().squaredNorm();
  if (tss <= 0.0) return 0.0;
  const double r2 = 1.0 - ls.rss / tss;
  return 1.0 - (1.0 - r2) * static_cast<double>(n - 1) / static_cast<double>(n - q - 1);
}

std::string estimate_to_json(const EstimateResult& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["n"] = r.n;
  j["names"] = r.names;
  j["beta"] = std::vector<double>(r.beta.begin(), r.beta.end());
  const Vec se = r.se();
  j["se"] = std::vector<double>(se.begin(), se.end());
  std::vector<std::vector<double>> vcov;
  for (Index i = 0; i < r.vcov.rows(); ++i)
    vcov.emplace_back(r.vcov.row(i).begin(), r.vcov.row(i).end());
  j["vcov"] = vcov;
  if (!r.note.empty()) j["note"] = r.note;
  return j.dump(2);
}

}  // namespace forestiv
