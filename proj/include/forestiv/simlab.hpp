#pragma once

#include "forestiv/baselines.hpp"
#include "forestiv/dataset.hpp"
#include "forestiv/forest.hpp"
#include "forestiv/forestiv.hpp"
#include "forestiv/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace forestiv {

enum class ControlDist { uniform, normal, bernoulli };

struct ControlSpec {
  ControlDist kind = ControlDist::normal;
  double p1 = 0.0;  // uniform lower / normal mean / bernoulli p
  double p2 = 1.0;  // uniform upper / normal sd
  std::string name;
};

// A control generated rho-correlated with the ML prediction error (the
// correction blindspot design); the control must be normal.
struct CorrelatedControlSpec {
  int index = 0;  // among the non-intercept controls
  double rho = 0.0;
};

struct DGPSpec {
  Vec beta;  // intercept, x, controls
  std::vector<ControlSpec> controls;
  double noise_sd = 2.0;
  std::optional<CorrelatedControlSpec> corr_control;
  std::string x_name = "x";
};

// y = beta0 + beta_x * x + Z beta_z + eps; deterministic given seed.
EconData simulate_econ(const DGPSpec& dgp, const Vec& x_values, std::uint64_t seed,
                       const Vec* ml_error = nullptr);

enum class TruthComponent { sine, quadratic, linear, cosine };

struct SynthSpec {
  Index n = 6200;
  Index p = 10;
  double target_sd = 1.5;  // sd of the additive score
  double zeta_sd = 0.5;    // sd of the irreducible noise
  bool binary = false;     // threshold the latent score at its sample median
  std::vector<TruthComponent> components;  // per feature; empty = cycling default
};

// Features uniform on [0,1]^p, truth a sum of univariate smooth components
// plus centered Gaussian noise, scaled so the score sd matches target_sd.
Dataset synthesize_truth(const SynthSpec& spec, std::uint64_t seed);

enum class Method {
  biased,
  unbiased,
  forest_iv,
  sample_split,
  subset_tree,
  averaging,
  simex,
  mc_simex
};

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  SynthSpec synth;
  DGPSpec dgp;
  ForestParams forest;
  Index n_train = 1000;
  Index n_test = 200;
  std::vector<Method> methods;
  int rounds = 30;
  std::uint64_t master_seed = 1;
  double alpha = 0.05;
  FinalSample final_sample = FinalSample::unlabel;
  SelectionOptions selection;
  double subset_q = 50.0;
  int subset_draws = 100;
  SimexConfig simex;
  const Dataset* dataset = nullptr;  // when set, replaces the synthetic truth
};

struct MethodSummary {
  Method method = Method::biased;
  Vec mean;
  Vec sd;       // across-round sampling sd
  Vec p_value;  // t-test of the round mean against the true coefficient
  double ave_mse = 0.0;
  int rounds_used = 0;
  double mean_hotelling = 0.0;  // NaN unless the method screens candidates
  Mat raw;                      // rounds x K, NaN rows where no estimate
};

struct ExperimentReport {
  std::vector<std::string> coef_names;
  Vec true_beta;
  int rounds = 0;
  std::uint64_t master_seed = 0;
  std::vector<MethodSummary> methods;
  double axis_value = 0.0;  // set by sensitivity_sweep
  bool has_axis = false;

  const MethodSummary& summary(Method m) const;
};

// Per round: fresh split, fresh forest, fresh econ noise; all requested
// methods see the same draws. Bit-identical output for a fixed master seed.
ExperimentReport run_experiment(const ExperimentConfig& config);

enum class SweepAxis { unlabel_size, noise_sd, n_trees };

// Re-runs the experiment per axis value with the same master seed, so
// values are compared on shared randomness where the axis allows it.
std::vector<ExperimentReport> sensitivity_sweep(const ExperimentConfig& base, SweepAxis axis,
                                                const std::vector<double>& values);

std::string report_to_json(const ExperimentReport& report, bool include_timestamp,
                           const std::string& config_echo = "");
std::string report_to_csv(const ExperimentReport& report);
std::string report_raw_csv(const ExperimentReport& report);

}  // namespace forestiv
