#pragma once

#include "forestiv/dataset.hpp"
#include "forestiv/forest.hpp"
#include "forestiv/lasso.hpp"
#include "forestiv/regression.hpp"
#include "forestiv/types.hpp"

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace forestiv {

struct IVSelection {
  std::vector<int> endog_trees;  // trees whose mean prediction is the endogenous covariate
  std::vector<int> instruments;  // selected tree indices, disjoint from endog_trees
  std::vector<std::pair<int, int>> trace;  // (|V|, |S|) per iteration
  bool converged = false;
  int iterations = 0;
};

struct SelectionOptions {
  int n_folds = 10;
  // the one-SE rule keeps weak instruments out of the strong-selection step
  LassoParams lasso{.tol = 1e-7,
                    .max_iter = 10000,
                    .rule = PenaltyRule::one_se,
                    .cv_early_stop = true};
  std::uint64_t seed = 0;
};

// Cross products of tree predictions (plus truth on the test split) shared
// across all candidate selections of one forest. Building it costs one pass
// over the data; each selection then runs on moment algebra alone.
class SelectionContext {
 public:
  SelectionContext(const Eigen::Ref<const Mat>& tree_pred_test,
                   const Eigen::Ref<const Vec>& truth_test,
                   const Eigen::Ref<const Mat>& tree_pred_pool, const SelectionOptions& opts);
  ~SelectionContext();
  SelectionContext(SelectionContext&&) noexcept;

  Index tree_count() const;

  // Alternating removal of invalid instruments (lasso of the candidate's
  // prediction error on the current instruments over the test split, keep
  // zero coefficients) and selection of strong instruments (lasso of the
  // candidate's prediction on the survivors over the pool, keep nonzero
  // coefficients), until the set is a fixed point. Terminates in at most
  // M-1 iterations; each non-fixed-point iteration strictly shrinks the set,
  // which is asserted on every run.
  IVSelection select_tree(int i) const;
  // Same procedure with the mean prediction of endog_trees as the endogenous
  // covariate and the remaining trees as candidates.
  IVSelection select_group(const std::vector<int>& endog_trees) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrapper around SelectionContext.
IVSelection select_instruments(int i, const Eigen::Ref<const Mat>& tree_pred_test,
                               const Eigen::Ref<const Vec>& truth_test,
                               const Eigen::Ref<const Mat>& tree_pred_pool,
                               const SelectionOptions& opts = {});

enum class FinalSample { unlabel, label_plus_unlabel };

struct ForestIVOptions {
  double alpha = 0.05;
  FinalSample final_sample = FinalSample::unlabel;
  SelectionOptions selection;
  std::uint64_t seed = 0;
};

struct CandidateRecord {
  int id = 0;  // tree index, or draw index for tree-group candidates
  IVSelection selection;
  std::optional<EstimateResult> estimate;
  HotellingResult hotelling;
  double mse = 0.0;
  bool retained = false;
  std::string note;  // set when estimation failed or no instruments survived
};

struct ForestIVOutput {
  EstimateResult reference;  // OLS on the labeled rows with the true covariate
  std::vector<CandidateRecord> candidates;
  std::optional<int> chosen;  // index into candidates: retained with smallest MSE
  double alpha = 0.05;
  double critical_value = 0.0;
  int skipped_empty = 0;  // candidates whose selection came back empty
  int failed = 0;
  std::optional<Vec> bootstrap_se;

  const EstimateResult& chosen_estimate() const;
};

// Candidate estimation over every tree: 2SLS with tree i endogenous and its
// selected instruments, Hotelling screen against the labeled-data estimate,
// minimum empirical MSE among the retained.
ForestIVOutput forest_iv(const ForestModel& f, const Dataset& d, const EconData& econ,
                         const ForestIVOptions& opts);

// Two forests on disjoint halves of the training split; forest-1 predictions
// endogenous, forest-2 predictions the single instrument.
EstimateResult sample_split_iv(const Dataset& d, const EconData& econ, const ForestParams& params,
                               FinalSample final_sample, std::uint64_t seed);

// Random tree subsets: the subset mean is the endogenous covariate,
// instruments are selected from the remaining trees.
ForestIVOutput subset_tree_iv(const ForestModel& f, const Dataset& d, const EconData& econ,
                              double q_percent, int n_draws, const ForestIVOptions& opts);

// Unweighted mean of the retained candidates; the variance is the mean of
// their covariance matrices (descriptive, not a sampling variance).
EstimateResult averaging_estimate(const ForestIVOutput& out);

struct BootstrapResult {
  Vec se;
  int replicates = 0;
  int degenerate = 0;  // replicates that produced no estimate
  std::vector<Vec> draws;
};

using BootstrapPipeline =
    std::function<std::optional<Vec>(const Dataset&, const EconData&, std::uint64_t)>;

// Resamples rows with replacement within each partition independently and
// reruns the supplied pipeline per replicate.
BootstrapResult bootstrap_se(const Dataset& d, const EconData& econ, int n_replicates,
                             std::uint64_t seed, const BootstrapPipeline& pipeline);

// Counts of (X, Xhat_i, Xhat_j) cells over {0,1}^3; index = 4*x + 2*xi + xj.
struct BinaryCellCounts {
  std::array<std::int64_t, 8> counts{};

  std::int64_t total() const;
  static BinaryCellCounts from_vectors(const Eigen::Ref<const Vec>& truth,
                                       const Eigen::Ref<const Vec>& pred_i,
                                       const Eigen::Ref<const Vec>& pred_j);
};

// Sample covariances among a tree's prediction error, a second tree's
// error, the truth, and the second tree's prediction, computed exactly from
// cell counts, plus the sign identities they satisfy.
struct BinaryErrorCovariances {
  double cov_error_truth = 0.0;       // Cov(e_i, X), negative whenever tree i errs
  double cov_error_error = 0.0;       // Cov(e_i, e_j)
  double cov_error_instrument = 0.0;  // Cov(e_i, Xhat_j), the exclusion quantity
  double condition_value = 0.0;       // sign certificate for cov_error_error
  bool condition_positive = false;
  bool error_truth_sign_ok = false;   // cov_error_truth matches its closed-form sign
  bool error_error_sign_ok = false;   // cov_error_error > 0 iff condition_value > 0
  bool degenerate = false;            // all mass in one truth class
};

BinaryErrorCovariances binary_error_covariances(const BinaryCellCounts& cells);

// Empirical Cov(Xhat_j, e_i) over the test split for all i != j; a
// finite-sample health check of instrument exclusion.
struct ExclusionDiagnostic {
  Mat cov;  // (j, i) entry = Cov(prediction j, error i); diagonal zeroed
  double mean_offdiag = 0.0;
  double mean_abs_offdiag = 0.0;
  double max_abs_offdiag = 0.0;
};

ExclusionDiagnostic exclusion_diagnostic(const ForestModel& f, const Dataset& d);

std::string forest_iv_output_to_json(const ForestIVOutput& out);
std::string forest_iv_output_to_csv(const ForestIVOutput& out);

}  // namespace forestiv
