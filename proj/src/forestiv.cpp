#include "forestiv/forestiv.hpp"

#include "forestiv/distributions.hpp"
#include "forestiv/parallel.hpp"
#include "forestiv/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace forestiv {

namespace {

struct GramBundle {
  Mat gram;
  Vec colsum;
  Index n = 0;

  static GramBundle from_rows(const Eigen::Ref<const Mat>& rows) {
    GramBundle b;
    b.n = rows.rows();
    b.gram = Mat::Zero(rows.cols(), rows.cols());
    b.gram.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
    b.gram.triangularView<Eigen::StrictlyUpper>() = b.gram.transpose();
    b.colsum = rows.colwise().sum();
    return b;
  }

  GramBundle& operator+=(const GramBundle& other) {
    gram += other.gram;
    colsum += other.colsum;
    n += other.n;
    return *this;
  }
};

using SparseWeights = std::vector<std::pair<Index, double>>;

RegressionMoments moments_for(const GramBundle& b, const std::vector<int>& cols,
                              const SparseWeights& w) {
  const Index q = static_cast<Index>(cols.size());
  RegressionMoments m;
  m.n = b.n;
  m.xtx.resize(q, q);
  m.xty = Vec::Zero(q);
  m.xsum.resize(q);
  for (Index a = 0; a < q; ++a) {
    m.xsum[a] = b.colsum[cols[static_cast<std::size_t>(a)]];
    for (Index c = 0; c <= a; ++c) {
      const double g = b.gram(cols[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(c)]);
      m.xtx(a, c) = g;
      m.xtx(c, a) = g;
    }
  }
  m.ysum = 0.0;
  m.yty = 0.0;
  for (const auto& [k, wk] : w) {
    m.ysum += wk * b.colsum[k];
    for (Index a = 0; a < q; ++a)
      m.xty[a] += wk * b.gram(cols[static_cast<std::size_t>(a)], k);
    for (const auto& [l, wl] : w) m.yty += wk * wl * b.gram(k, l);
  }
  return m;
}

std::vector<GramBundle> fold_bundles(const Eigen::Ref<const Mat>& rows, int n_folds,
                                     std::uint64_t seed) {
  const Index n = rows.rows();
  Rng rng(seed);
  auto order = rng.sample_without_replacement<Index>(n, n);
  std::vector<GramBundle> folds;
  Index start = 0;
  for (int f = 0; f < n_folds; ++f) {
    const Index size = n / n_folds + (f < static_cast<int>(n % n_folds) ? 1 : 0);
    std::vector<Index> idx(order.begin() + start, order.begin() + start + size);
    start += size;
    folds.push_back(GramBundle::from_rows(rows(idx, Eigen::all)));
  }
  return folds;
}

bool is_subset(const std::vector<int>& a, const std::vector<int>& b) {
  // both sorted
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

struct SelectionContext::Impl {
  Index m = 0;  // tree count
  SelectionOptions opts;
  int folds_used = 0;
  std::vector<GramBundle> test_folds;  // over [P_test, X]
  GramBundle test_total;
  std::vector<GramBundle> pool_folds;  // over P_pool
  GramBundle pool_total;

  IVSelection select(const std::vector<int>& endog, const std::vector<int>& candidates0) const;
};

SelectionContext::SelectionContext(const Eigen::Ref<const Mat>& tree_pred_test,
                                   const Eigen::Ref<const Vec>& truth_test,
                                   const Eigen::Ref<const Mat>& tree_pred_pool,
                                   const SelectionOptions& opts)
    : impl_(std::make_unique<Impl>()) {
  const Index m = tree_pred_test.cols();
  if (m < 2) throw std::invalid_argument("instrument selection: need at least two trees");
  if (tree_pred_pool.cols() != m)
    throw std::invalid_argument("instrument selection: test/pool tree count mismatch");
  if (tree_pred_test.rows() == 0) throw std::invalid_argument("instrument selection: test partition empty");
  if (truth_test.size() != tree_pred_test.rows())
    throw std::invalid_argument("instrument selection: truth length mismatch");
  const Index min_rows = std::min(tree_pred_test.rows(), tree_pred_pool.rows());
  if (min_rows < 4)
    throw std::invalid_argument("instrument selection: need at least four rows per split");

  impl_->m = m;
  impl_->opts = opts;
  impl_->folds_used =
      std::max(2, std::min<int>(opts.n_folds, static_cast<int>(min_rows / 2)));

  Mat extended(tree_pred_test.rows(), m + 1);
  extended.leftCols(m) = tree_pred_test;
  extended.col(m) = truth_test;
  impl_->test_folds =
      fold_bundles(extended, impl_->folds_used, derive_seed(opts.seed, "test-folds"));
  impl_->pool_folds =
      fold_bundles(tree_pred_pool, impl_->folds_used, derive_seed(opts.seed, "pool-folds"));
  impl_->test_total = impl_->test_folds.front();
  impl_->pool_total = impl_->pool_folds.front();
  for (std::size_t f = 1; f < impl_->test_folds.size(); ++f) impl_->test_total += impl_->test_folds[f];
  for (std::size_t f = 1; f < impl_->pool_folds.size(); ++f) impl_->pool_total += impl_->pool_folds[f];
}

SelectionContext::~SelectionContext() = default;
SelectionContext::SelectionContext(SelectionContext&&) noexcept = default;

Index SelectionContext::tree_count() const { return impl_->m; }

IVSelection SelectionContext::Impl::select(const std::vector<int>& endog,
                                           const std::vector<int>& candidates0) const {
  IVSelection sel;
  sel.endog_trees = endog;

  const double inv = 1.0 / static_cast<double>(endog.size());
  SparseWeights w_error;  // endog prediction error on the test split
  SparseWeights w_pred;   // endog prediction on the pool
  for (int q : endog) {
    w_error.emplace_back(q, inv);
    w_pred.emplace_back(q, inv);
  }
  w_error.emplace_back(m, -1.0);  // truth column

  auto cv = [&](const GramBundle& total, const std::vector<GramBundle>& parts,
                const std::vector<int>& cols, const SparseWeights& w, PenaltyRule rule) {
    std::vector<RegressionMoments> folds;
    folds.reserve(parts.size());
    for (const auto& part : parts) folds.push_back(moments_for(part, cols, w));
    LassoParams params = opts.lasso;
    params.rule = rule;
    return cv_lasso_moments(moments_for(total, cols, w), folds, params);
  };

  std::vector<int> curr = candidates0;
  std::sort(curr.begin(), curr.end());
  const int max_iterations = static_cast<int>(m) - 1;

  while (true) {
    if (curr.empty()) {
      sel.converged = true;
      break;
    }
    ++sel.iterations;
    if (sel.iterations > max_iterations)
      throw std::logic_error("instrument selection exceeded its iteration bound");

    // invalid-instrument removal: keep the zero coefficients. cv_min errs
    // toward flagging violations, which is the conservative side here.
    const auto step1 = cv(test_total, test_folds, curr, w_error, PenaltyRule::cv_min);
    std::vector<int> surviving;
    {
      std::vector<bool> active(curr.size(), false);
      for (int a : step1.fit.active_set) active[static_cast<std::size_t>(a)] = true;
      for (std::size_t k = 0; k < curr.size(); ++k)
        if (!active[k]) surviving.push_back(curr[k]);
    }

    // strong-instrument selection: keep the nonzero coefficients, with the
    // sparser rule so weak instruments stay out
    std::vector<int> selected;
    if (!surviving.empty()) {
      const auto step2 = cv(pool_total, pool_folds, surviving, w_pred, opts.lasso.rule);
      for (int a : step2.fit.active_set)
        selected.push_back(surviving[static_cast<std::size_t>(a)]);
    }

    sel.trace.emplace_back(static_cast<int>(surviving.size()), static_cast<int>(selected.size()));

    if (selected == curr) {
      sel.converged = true;
      break;
    }
    if (selected.size() >= curr.size() || !is_subset(selected, curr))
      throw std::logic_error("instrument selection failed to shrink");
    curr = std::move(selected);
  }

  sel.instruments = curr;
  return sel;
}

IVSelection SelectionContext::select_tree(int i) const {
  if (i < 0 || i >= impl_->m) throw std::invalid_argument("select_tree: tree index out of range");
  std::vector<int> candidates;
  for (Index j = 0; j < impl_->m; ++j)
    if (j != i) candidates.push_back(static_cast<int>(j));
  return impl_->select({i}, candidates);
}

IVSelection SelectionContext::select_group(const std::vector<int>& endog_trees) const {
  if (endog_trees.empty()) throw std::invalid_argument("select_group: empty tree group");
  std::vector<bool> in_group(static_cast<std::size_t>(impl_->m), false);
  for (int q : endog_trees) {
    if (q < 0 || q >= impl_->m) throw std::invalid_argument("select_group: tree index out of range");
    in_group[static_cast<std::size_t>(q)] = true;
  }
  std::vector<int> candidates;
  for (Index j = 0; j < impl_->m; ++j)
    if (!in_group[static_cast<std::size_t>(j)]) candidates.push_back(static_cast<int>(j));
  if (candidates.empty()) throw std::invalid_argument("select_group: no candidate trees left");
  return impl_->select(endog_trees, candidates);
}

IVSelection select_instruments(int i, const Eigen::Ref<const Mat>& tree_pred_test,
                               const Eigen::Ref<const Vec>& truth_test,
                               const Eigen::Ref<const Mat>& tree_pred_pool,
                               const SelectionOptions& opts) {
  return SelectionContext(tree_pred_test, truth_test, tree_pred_pool, opts).select_tree(i);
}

const EstimateResult& ForestIVOutput::chosen_estimate() const {
  if (!chosen) throw std::runtime_error("no retained candidate");
  return *candidates[static_cast<std::size_t>(*chosen)].estimate;
}

namespace {

std::vector<Index> final_rows_of(const Dataset& d, FinalSample fs) {
  if (fs == FinalSample::unlabel) return d.rows_with(Partition::unlabel);
  return d.all_rows();
}

void finalize_output(ForestIVOutput& out) {
  out.skipped_empty = 0;
  out.failed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < out.candidates.size(); ++k) {
    const auto& rec = out.candidates[k];
    if (!rec.estimate) {
      if (rec.selection.instruments.empty())
        ++out.skipped_empty;
      else
        ++out.failed;
      continue;
    }
    if (rec.retained && rec.mse < best) {
      best = rec.mse;
      out.chosen = static_cast<int>(k);
    }
  }
}

}  // namespace

ForestIVOutput forest_iv(const ForestModel& f, const Dataset& d, const EconData& econ,
                         const ForestIVOptions& opts) {
  econ.validate(d.n_rows());
  if (!econ.y.allFinite()) throw std::invalid_argument("forest_iv: non-finite dependent variable");
  const auto label = d.label_rows();
  const auto test = d.rows_with(Partition::test);
  const auto pool = d.pool_rows();
  const auto final_rows = final_rows_of(d, opts.final_sample);
  if (final_rows.empty()) throw std::invalid_argument("forest_iv: empty estimation sample");

  const Mat p_all = tree_prediction_matrix(f, d.features);
  const auto names = coefficient_names(econ);

  ForestIVOutput out;
  out.alpha = opts.alpha;
  out.reference = ols(econ.y(label), econ_design(d.truth(label), econ.controls(label, Eigen::all)),
                      names, "ols");
  out.critical_value = chi2_quantile(1.0 - opts.alpha, static_cast<int>(names.size()));

  SelectionOptions sopts = opts.selection;
  sopts.seed = derive_seed(opts.seed, "selection");
  SelectionContext ctx(p_all(test, Eigen::all), d.truth(test), p_all(pool, Eigen::all), sopts);

  const Vec y_final = econ.y(final_rows);
  const Mat z_final = econ.controls(final_rows, Eigen::all);
  const Mat p_final = p_all(final_rows, Eigen::all);

  const Index m = f.tree_count();
  out.candidates.resize(static_cast<std::size_t>(m));
  parallel_for(m, [&](Index i) {
    CandidateRecord rec;
    rec.id = static_cast<int>(i);
    rec.selection = ctx.select_tree(static_cast<int>(i));
    if (rec.selection.instruments.empty()) {
      rec.note = "no instruments selected";
    } else {
      try {
        auto est = tsls(y_final, p_final.col(i), z_final,
                        p_final(Eigen::all, rec.selection.instruments), names, "tsls");
        rec.hotelling = hotelling(est, out.reference);
        rec.mse = empirical_mse(est, out.reference);
        rec.retained = rec.hotelling.statistic < out.critical_value;
        rec.estimate = std::move(est);
      } catch (const std::exception& e) {
        rec.note = e.what();
      }
    }
    out.candidates[static_cast<std::size_t>(i)] = std::move(rec);
  });

  finalize_output(out);
  return out;
}

EstimateResult sample_split_iv(const Dataset& d, const EconData& econ, const ForestParams& params,
                               FinalSample final_sample, std::uint64_t seed) {
  econ.validate(d.n_rows());
  const auto train = d.rows_with(Partition::train);
  const Index half = static_cast<Index>(train.size()) / 2;
  if (half < 2) throw std::invalid_argument("sample_split_iv: training split too small to halve");

  Rng rng(derive_seed(seed, "halves"));
  auto order = rng.sample_without_replacement<Index>(static_cast<Index>(train.size()),
                                                     static_cast<Index>(train.size()));

  // two datasets that differ only in which training half stays tagged train
  auto half_dataset = [&](bool first) {
    Dataset h = d;
    for (Index k = 0; k < static_cast<Index>(train.size()); ++k) {
      const bool in_first = k < half;
      if (in_first != first)
        h.partition[static_cast<std::size_t>(train[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])])] =
            Partition::unlabel;
    }
    return h;
  };

  const ForestModel f1 = fit_forest(half_dataset(true), params, derive_seed(seed, "half", 0));
  const ForestModel f2 = fit_forest(half_dataset(false), params, derive_seed(seed, "half", 1));

  const auto rows = final_rows_of(d, final_sample);
  const Mat x_rows = d.features(rows, Eigen::all);
  const Vec endog = predict_forest(f1, x_rows);
  const Vec instr = predict_forest(f2, x_rows);
  return tsls(econ.y(rows), endog, econ.controls(rows, Eigen::all), instr,
              coefficient_names(econ), "tsls");
}

ForestIVOutput subset_tree_iv(const ForestModel& f, const Dataset& d, const EconData& econ,
                              double q_percent, int n_draws, const ForestIVOptions& opts) {
  econ.validate(d.n_rows());
  if (!(q_percent > 0.0 && q_percent < 100.0))
    throw std::invalid_argument("subset_tree_iv: q must be strictly between 0 and 100");
  if (n_draws < 1) throw std::invalid_argument("subset_tree_iv: need at least one draw");
  const Index m = f.tree_count();
  const auto subset_size =
      static_cast<Index>(std::ceil(q_percent / 100.0 * static_cast<double>(m)));
  if (subset_size < 1 || subset_size >= m)
    throw std::invalid_argument("subset_tree_iv: subset leaves no instruments");

  const auto label = d.label_rows();
  const auto test = d.rows_with(Partition::test);
  const auto pool = d.pool_rows();
  const auto final_rows = final_rows_of(d, opts.final_sample);

  const Mat p_all = tree_prediction_matrix(f, d.features);
  const auto names = coefficient_names(econ);

  ForestIVOutput out;
  out.alpha = opts.alpha;
  out.reference = ols(econ.y(label), econ_design(d.truth(label), econ.controls(label, Eigen::all)),
                      names, "ols");
  out.critical_value = chi2_quantile(1.0 - opts.alpha, static_cast<int>(names.size()));

  SelectionOptions sopts = opts.selection;
  sopts.seed = derive_seed(opts.seed, "selection");
  SelectionContext ctx(p_all(test, Eigen::all), d.truth(test), p_all(pool, Eigen::all), sopts);

  // draw the tree groups up front so the estimation loop can run in parallel
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(n_draws));
  {
    Rng rng(derive_seed(opts.seed, "draws"));
    for (auto& g : groups) {
      auto idx = rng.sample_without_replacement<Index>(m, subset_size);
      g.assign(idx.begin(), idx.end());
      std::sort(g.begin(), g.end());
    }
  }

  const Vec y_final = econ.y(final_rows);
  const Mat z_final = econ.controls(final_rows, Eigen::all);
  const Mat p_final = p_all(final_rows, Eigen::all);

  out.candidates.resize(static_cast<std::size_t>(n_draws));
  parallel_for(n_draws, [&](Index b) {
    const auto& group = groups[static_cast<std::size_t>(b)];
    CandidateRecord rec;
    rec.id = static_cast<int>(b);
    rec.selection = ctx.select_group(group);
    if (rec.selection.instruments.empty()) {
      rec.note = "no instruments selected";
    } else {
      try {
        const Vec endog = p_final(Eigen::all, group).rowwise().mean();
        auto est = tsls(y_final, endog, z_final,
                        p_final(Eigen::all, rec.selection.instruments), names, "tsls");
        rec.hotelling = hotelling(est, out.reference);
        rec.mse = empirical_mse(est, out.reference);
        rec.retained = rec.hotelling.statistic < out.critical_value;
        rec.estimate = std::move(est);
      } catch (const std::exception& e) {
        rec.note = e.what();
      }
    }
    out.candidates[static_cast<std::size_t>(b)] = std::move(rec);
  });

  finalize_output(out);
  return out;
}

EstimateResult averaging_estimate(const ForestIVOutput& out) {
  std::vector<const EstimateResult*> retained;
  for (const auto& rec : out.candidates)
    if (rec.retained && rec.estimate) retained.push_back(&*rec.estimate);
  if (retained.empty()) throw std::runtime_error("averaging_estimate: no retained candidates");

  EstimateResult r = *retained.front();
  for (std::size_t k = 1; k < retained.size(); ++k) {
    r.beta += retained[k]->beta;
    r.vcov += retained[k]->vcov;
  }
  const double inv = 1.0 / static_cast<double>(retained.size());
  r.beta *= inv;
  r.vcov *= inv;
  r.method = "forestiv";
  r.note = "average of retained candidates; variance is the mean candidate vcov";
  return r;
}

BootstrapResult bootstrap_se(const Dataset& d, const EconData& econ, int n_replicates,
                             std::uint64_t seed, const BootstrapPipeline& pipeline) {
  econ.validate(d.n_rows());
  if (n_replicates < 2) throw std::invalid_argument("bootstrap_se: need at least two replicates");

  std::vector<std::vector<Index>> samples(static_cast<std::size_t>(n_replicates));
  for (int b = 0; b < n_replicates; ++b) {
    Rng rng(derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(b)));
    auto& rows = samples[static_cast<std::size_t>(b)];
    for (Partition p : {Partition::train, Partition::test, Partition::unlabel}) {
      const auto part = d.rows_with(p);
      if (part.empty()) continue;
      for (std::size_t k = 0; k < part.size(); ++k)
        rows.push_back(part[rng.below(part.size())]);
    }
  }

  std::vector<std::optional<Vec>> draws(static_cast<std::size_t>(n_replicates));
  parallel_for(n_replicates, [&](Index b) {
    const auto& rows = samples[static_cast<std::size_t>(b)];
    Dataset rep = d.subset(rows);
    EconData econ_rep;
    econ_rep.y = econ.y(rows);
    econ_rep.controls = econ.controls(rows, Eigen::all);
    econ_rep.x_name = econ.x_name;
    econ_rep.control_names = econ.control_names;
    draws[static_cast<std::size_t>(b)] =
        pipeline(rep, econ_rep, derive_seed(seed, "replicate", static_cast<std::uint64_t>(b)));
  });

  BootstrapResult out;
  out.replicates = n_replicates;
  for (auto& v : draws) {
    if (v)
      out.draws.push_back(std::move(*v));
    else
      ++out.degenerate;
  }
  if (out.draws.empty()) throw std::runtime_error("bootstrap_se: all replicates degenerate");

  const Index k = out.draws.front().size();
  Vec mean = Vec::Zero(k);
  for (const auto& v : out.draws) mean += v;
  mean /= static_cast<double>(out.draws.size());
  Vec ss = Vec::Zero(k);
  for (const auto& v : out.draws) ss += (v - mean).cwiseAbs2();
  const auto denom = std::max<std::size_t>(out.draws.size() - 1, 1);
  out.se = (ss / static_cast<double>(denom)).cwiseSqrt();
  return out;
}

std::int64_t BinaryCellCounts::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

BinaryCellCounts BinaryCellCounts::from_vectors(const Eigen::Ref<const Vec>& truth,
                                                const Eigen::Ref<const Vec>& pred_i,
                                                const Eigen::Ref<const Vec>& pred_j) {
  if (truth.size() != pred_i.size() || truth.size() != pred_j.size())
    throw std::invalid_argument("cell counts: length mismatch");
  BinaryCellCounts c;
  for (Index r = 0; r < truth.size(); ++r) {
    const int x = truth[r] > 0.5 ? 1 : 0;
    const int pi = pred_i[r] > 0.5 ? 1 : 0;
    const int pj = pred_j[r] > 0.5 ? 1 : 0;
    ++c.counts[static_cast<std::size_t>(4 * x + 2 * pi + pj)];
  }
  return c;
}

BinaryErrorCovariances binary_error_covariances(const BinaryCellCounts& cells) {
  const std::int64_t n = cells.total();
  if (n < 2) throw std::invalid_argument("binary_error_covariances: need at least two observations");

  // exact integer accumulation; cell index encodes (x, xhat_i, xhat_j)
  std::int64_t sum_ei = 0, sum_ej = 0, sum_x = 0, sum_xj = 0;
  std::int64_t sum_eiej = 0, sum_eix = 0, sum_eixj = 0;
  for (int idx = 0; idx < 8; ++idx) {
    const std::int64_t c = cells.counts[static_cast<std::size_t>(idx)];
    const std::int64_t x = (idx >> 2) & 1;
    const std::int64_t pi = (idx >> 1) & 1;
    const std::int64_t pj = idx & 1;
    const std::int64_t ei = pi - x;
    const std::int64_t ej = pj - x;
    sum_ei += c * ei;
    sum_ej += c * ej;
    sum_x += c * x;
    sum_xj += c * pj;
    sum_eiej += c * ei * ej;
    sum_eix += c * ei * x;
    sum_eixj += c * ei * pj;
  }

  const std::int64_t num_eix = n * sum_eix - sum_ei * sum_x;
  const std::int64_t num_eiej = n * sum_eiej - sum_ei * sum_ej;
  const std::int64_t num_eixj = n * sum_eixj - sum_ei * sum_xj;
  const double n2 = static_cast<double>(n) * static_cast<double>(n);

  BinaryErrorCovariances out;
  out.cov_error_truth = static_cast<double>(num_eix) / n2;
  out.cov_error_error = static_cast<double>(num_eiej) / n2;
  out.cov_error_instrument = static_cast<double>(num_eixj) / n2;
  out.degenerate = (sum_x == 0) || (sum_x == n);

  // marginal (x, xhat_i) counts drive the sign of Cov(e_i, X)
  const std::int64_t n00 = cells.counts[0] + cells.counts[1];
  const std::int64_t n01 = cells.counts[2] + cells.counts[3];
  const std::int64_t n10 = cells.counts[4] + cells.counts[5];
  const std::int64_t n11 = cells.counts[6] + cells.counts[7];
  const std::int64_t premise = n10 * (n00 + 2 * n01) + n01 * n11;
  out.error_truth_sign_ok = premise > 0 ? num_eix < 0 : num_eix == 0;

  // cell-count certificate for the sign of Cov(e_i, e_j)
  const std::int64_t n000 = cells.counts[0], n001 = cells.counts[1];
  const std::int64_t n010 = cells.counts[2], n011 = cells.counts[3];
  const std::int64_t n100 = cells.counts[4], n101 = cells.counts[5];
  const std::int64_t n110 = cells.counts[6], n111 = cells.counts[7];
  const std::int64_t x0 = n000 + n001 + n010 + n011;
  const std::int64_t x1 = n100 + n101 + n110 + n111;
  const std::int64_t condition = (n000 + n111) * (n011 + n100) + 2 * (x0 - n000) * n100 +
                                 2 * (x1 - n111) * n011 + (n010 - n101) * (n110 - n001);
  out.condition_value = static_cast<double>(condition) / n2;
  out.condition_positive = condition > 0;
  out.error_error_sign_ok = (num_eiej > 0) == (condition > 0);
  return out;
}

ExclusionDiagnostic exclusion_diagnostic(const ForestModel& f, const Dataset& d) {
  const auto test = d.rows_with(Partition::test);
  if (test.size() < 3) throw std::invalid_argument("exclusion_diagnostic: need at least 3 test rows");
  const Mat p = tree_prediction_matrix(f, d.features(test, Eigen::all));
  const Vec x = d.truth(test);
  const Index n = p.rows();
  const Index m = p.cols();

  Mat pc = p.rowwise() - p.colwise().mean();
  Mat ec = p.colwise() - x;  // errors
  ec.rowwise() -= ec.colwise().mean();

  ExclusionDiagnostic out;
  out.cov = (pc.transpose() * ec) / static_cast<double>(n);
  out.cov.diagonal().setZero();
  const double pairs = static_cast<double>(m) * static_cast<double>(m - 1);
  out.mean_offdiag = out.cov.sum() / pairs;
  out.mean_abs_offdiag = out.cov.cwiseAbs().sum() / pairs;
  out.max_abs_offdiag = out.cov.cwiseAbs().maxCoeff();
  return out;
}

namespace {

nlohmann::json estimate_json(const EstimateResult& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["n"] = r.n;
  j["names"] = r.names;
  j["beta"] = std::vector<double>(r.beta.begin(), r.beta.end());
  const Vec se = r.se();
  j["se"] = std::vector<double>(se.begin(), se.end());
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

}  // namespace

std::string forest_iv_output_to_json(const ForestIVOutput& out) {
  nlohmann::json j;
  j["alpha"] = out.alpha;
  j["critical_value"] = out.critical_value;
  j["reference"] = estimate_json(out.reference);
  j["skipped_empty"] = out.skipped_empty;
  j["failed"] = out.failed;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& rec : out.candidates) {
    nlohmann::json r;
    r["id"] = rec.id;
    r["endog_trees"] = rec.selection.endog_trees;
    r["instruments"] = rec.selection.instruments;
    r["iterations"] = rec.selection.iterations;
    r["converged"] = rec.selection.converged;
    r["retained"] = rec.retained;
    if (rec.estimate) {
      r["hotelling"] = rec.hotelling.statistic;
      r["p_value"] = rec.hotelling.p_value;
      r["mse"] = rec.mse;
      r["estimate"] = estimate_json(*rec.estimate);
    }
    if (!rec.note.empty()) r["note"] = rec.note;
    rows.push_back(std::move(r));
  }
  j["candidates"] = std::move(rows);
  if (out.chosen) {
    j["chosen"] = *out.chosen;
    j["chosen_estimate"] = estimate_json(out.chosen_estimate());
  } else {
    j["chosen"] = nullptr;
    j["no_valid_tuple"] = true;
  }
  if (out.bootstrap_se)
    j["bootstrap_se"] = std::vector<double>(out.bootstrap_se->begin(), out.bootstrap_se->end());
  return j.dump(2);
}

std::string forest_iv_output_to_csv(const ForestIVOutput& out) {
  std::string csv = "id,n_instruments,iterations,hotelling,p_value,mse,retained";
  for (const auto& name : out.reference.names) csv += ",beta_" + name;
  csv += "\n";
  char buf[64];
  for (const auto& rec : out.candidates) {
    if (!rec.estimate) continue;
    csv += std::to_string(rec.id) + "," + std::to_string(rec.selection.instruments.size()) + "," +
           std::to_string(rec.selection.iterations);
    for (double v : {rec.hotelling.statistic, rec.hotelling.p_value, rec.mse}) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      csv += buf;
    }
    csv += rec.retained ? ",1" : ",0";
    for (Index k = 0; k < rec.estimate->beta.size(); ++k) {
      std::snprintf(buf, sizeof(buf), ",%.17g", rec.estimate->beta[k]);
      csv += buf;
    }
    csv += "\n";
  }
  return csv;
}

}  // namespace forestiv
