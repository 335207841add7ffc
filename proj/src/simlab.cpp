#include "forestiv/simlab.hpp"

#include "forestiv/distributions.hpp"
#include "forestiv/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <limits>
#include <stdexcept>

namespace forestiv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double component_value(TruthComponent c, double f) {
  switch (c) {
    case TruthComponent::sine: return std::sin(2.0 * M_PI * f);
    case TruthComponent::cosine: return std::cos(2.0 * M_PI * f);
    case TruthComponent::linear: return 2.0 * f - 1.0;
    case TruthComponent::quadratic: {
      const double v = 2.0 * f - 1.0;
      return v * v - 1.0 / 3.0;
    }
  }
  return 0.0;
}

double component_variance(TruthComponent c) {
  switch (c) {
    case TruthComponent::sine:
    case TruthComponent::cosine: return 0.5;
    case TruthComponent::linear: return 1.0 / 3.0;
    case TruthComponent::quadratic: return 4.0 / 45.0;
  }
  return 0.0;
}

}  // namespace

EconData simulate_econ(const DGPSpec& dgp, const Vec& x_values, std::uint64_t seed,
                       const Vec* ml_error) {
  const Index n = x_values.size();
  const auto n_controls = static_cast<Index>(dgp.controls.size());
  if (dgp.beta.size() != n_controls + 2)
    throw std::invalid_argument("simulate_econ: beta must have 2 + #controls entries");
  if (dgp.noise_sd < 0.0) throw std::invalid_argument("simulate_econ: negative noise sd");

  Rng rng(seed);
  EconData econ;
  econ.x_name = dgp.x_name;
  econ.controls.resize(n, n_controls + 1);
  econ.controls.col(0).setOnes();
  econ.control_names.push_back("(Intercept)");

  for (Index c = 0; c < n_controls; ++c) {
    const auto& spec = dgp.controls[static_cast<std::size_t>(c)];
    econ.control_names.push_back(spec.name.empty() ? "z" + std::to_string(c + 1) : spec.name);
    auto col = econ.controls.col(c + 1);
    switch (spec.kind) {
      case ControlDist::uniform:
        if (!(spec.p1 < spec.p2)) throw std::invalid_argument("simulate_econ: uniform needs a < b");
        for (Index r = 0; r < n; ++r) col[r] = rng.uniform(spec.p1, spec.p2);
        break;
      case ControlDist::normal:
        if (spec.p2 < 0.0) throw std::invalid_argument("simulate_econ: normal needs sd >= 0");
        for (Index r = 0; r < n; ++r) col[r] = rng.normal(spec.p1, spec.p2);
        break;
      case ControlDist::bernoulli:
        if (spec.p1 < 0.0 || spec.p1 > 1.0)
          throw std::invalid_argument("simulate_econ: bernoulli needs p in [0,1]");
        for (Index r = 0; r < n; ++r) col[r] = rng.bernoulli(spec.p1);
        break;
    }
  }

  if (dgp.corr_control) {
    const auto& cc = *dgp.corr_control;
    if (cc.index < 0 || cc.index >= n_controls)
      throw std::invalid_argument("simulate_econ: correlated-control index out of range");
    const auto& spec = dgp.controls[static_cast<std::size_t>(cc.index)];
    if (spec.kind != ControlDist::normal)
      throw std::invalid_argument("simulate_econ: correlated control must be normal");
    if (std::abs(cc.rho) >= 1.0) throw std::invalid_argument("simulate_econ: |rho| < 1 required");
    if (!ml_error)
      throw std::invalid_argument("simulate_econ: correlated control needs the ML error vector");
    if (ml_error->size() != n) throw std::invalid_argument("simulate_econ: ML error length mismatch");
    const double e_mean = ml_error->mean();
    const double e_sd = std::sqrt((ml_error->array() - e_mean).square().sum() /
                                  static_cast<double>(n - 1));
    if (e_sd <= 0.0) throw std::invalid_argument("simulate_econ: ML error is constant");
    auto col = econ.controls.col(cc.index + 1);
    const double mix = std::sqrt(1.0 - cc.rho * cc.rho);
    for (Index r = 0; r < n; ++r) {
      const double e_std = ((*ml_error)[r] - e_mean) / e_sd;
      const double raw_std = spec.p2 > 0.0 ? (col[r] - spec.p1) / spec.p2 : 0.0;
      col[r] = spec.p1 + spec.p2 * (cc.rho * e_std + mix * raw_std);
    }
  }

  econ.y.resize(n);
  for (Index r = 0; r < n; ++r) {
    double v = dgp.beta[0] + dgp.beta[1] * x_values[r];
    for (Index c = 0; c < n_controls; ++c) v += dgp.beta[c + 2] * econ.controls(r, c + 1);
    econ.y[r] = v + rng.normal(0.0, dgp.noise_sd);
  }
  return econ;
}

Dataset synthesize_truth(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n < 1 || spec.p < 1) throw std::invalid_argument("synthesize_truth: need n, p >= 1");
  if (!spec.components.empty() && static_cast<Index>(spec.components.size()) != spec.p)
    throw std::invalid_argument("synthesize_truth: component list must match feature count");
  if (spec.target_sd <= spec.zeta_sd)
    throw std::invalid_argument("synthesize_truth: target sd must exceed noise sd");

  static const TruthComponent kCycle[4] = {TruthComponent::sine, TruthComponent::quadratic,
                                           TruthComponent::linear, TruthComponent::cosine};
  std::vector<TruthComponent> kinds(static_cast<std::size_t>(spec.p));
  for (Index j = 0; j < spec.p; ++j)
    kinds[static_cast<std::size_t>(j)] =
        spec.components.empty() ? kCycle[j % 4] : spec.components[static_cast<std::size_t>(j)];

  // amplitude weights decay slowly so several features stay relevant
  Vec weight(spec.p);
  double var_sum = 0.0;
  for (Index j = 0; j < spec.p; ++j) {
    weight[j] = 1.0 / std::sqrt(1.0 + static_cast<double>(j));
    var_sum += weight[j] * weight[j] * component_variance(kinds[static_cast<std::size_t>(j)]);
  }
  const double score_var = spec.target_sd * spec.target_sd - spec.zeta_sd * spec.zeta_sd;
  weight *= std::sqrt(score_var / var_sum);

  Rng rng(seed);
  Dataset d;
  d.features.resize(spec.n, spec.p);
  d.truth.resize(spec.n);
  for (Index r = 0; r < spec.n; ++r) {
    double score = 0.0;
    for (Index j = 0; j < spec.p; ++j) {
      const double f = rng.next_double();
      d.features(r, j) = f;
      score += weight[j] * component_value(kinds[static_cast<std::size_t>(j)], f);
    }
    d.truth[r] = score + (spec.zeta_sd > 0.0 ? rng.normal(0.0, spec.zeta_sd) : 0.0);
  }

  if (spec.binary) {
    std::vector<double> latent(d.truth.begin(), d.truth.end());
    std::nth_element(latent.begin(), latent.begin() + spec.n / 2, latent.end());
    const double median = latent[static_cast<std::size_t>(spec.n / 2)];
    for (Index r = 0; r < spec.n; ++r) d.truth[r] = d.truth[r] > median ? 1.0 : 0.0;
  }

  d.has_truth.assign(static_cast<std::size_t>(spec.n), 1);
  d.partition.assign(static_cast<std::size_t>(spec.n), Partition::unlabel);
  for (Index j = 0; j < spec.p; ++j) d.feature_names.push_back("f" + std::to_string(j + 1));
  d.truth_name = "x";
  return d;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::biased: return "biased";
    case Method::unbiased: return "unbiased";
    case Method::forest_iv: return "forestiv";
    case Method::sample_split: return "sample-split";
    case Method::subset_tree: return "subset";
    case Method::averaging: return "averaging";
    case Method::simex: return "simex";
    case Method::mc_simex: return "mc-simex";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::biased, Method::unbiased, Method::forest_iv, Method::sample_split,
                   Method::subset_tree, Method::averaging, Method::simex, Method::mc_simex})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + name + "'");
}

const MethodSummary& ExperimentReport::summary(Method m) const {
  for (const auto& s : methods)
    if (s.method == m) return s;
  throw std::invalid_argument("report has no summary for method " + method_name(m));
}

namespace {

bool uses_forest(Method m) { return m != Method::unbiased; }

bool screens_candidates(Method m) {
  return m == Method::forest_iv || m == Method::subset_tree || m == Method::averaging;
}

struct RoundResult {
  std::optional<EstimateResult> estimate;
  double hotelling = kNaN;  // chosen candidate's statistic when screened
};

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (config.methods.empty()) throw std::invalid_argument("run_experiment: no methods requested");
  if (config.rounds < 1) throw std::invalid_argument("run_experiment: rounds must be >= 1");
  const bool binary_task = config.forest.task == Task::classification;
  for (Method m : config.methods) {
    if (m == Method::mc_simex && !binary_task)
      throw std::invalid_argument("run_experiment: mc-simex needs a classification task");
    if (m == Method::simex && binary_task)
      throw std::invalid_argument("run_experiment: simex needs a regression task");
  }

  SynthSpec synth = config.synth;
  synth.binary = binary_task;
  const Dataset base =
      config.dataset ? *config.dataset : synthesize_truth(synth, derive_seed(config.master_seed, "data"));

  bool need_forest = config.dgp.corr_control.has_value();
  for (Method m : config.methods) need_forest = need_forest || uses_forest(m);
  const bool need_candidates =
      std::any_of(config.methods.begin(), config.methods.end(),
                  [](Method m) { return m == Method::forest_iv || m == Method::averaging; });

  ExperimentReport report;
  report.rounds = config.rounds;
  report.master_seed = config.master_seed;
  report.true_beta = config.dgp.beta;

  const Index k = config.dgp.beta.size();
  std::vector<MethodSummary> summaries;
  for (Method m : config.methods) {
    MethodSummary s;
    s.method = m;
    s.raw = Mat::Constant(config.rounds, k, kNaN);
    s.mean_hotelling = kNaN;
    summaries.push_back(std::move(s));
  }
  std::vector<double> mse_sum(config.methods.size(), 0.0);
  std::vector<double> hotelling_sum(config.methods.size(), 0.0);
  std::vector<int> hotelling_count(config.methods.size(), 0);

  for (int round = 0; round < config.rounds; ++round) {
    const std::uint64_t sr = derive_seed(config.master_seed, "round", static_cast<std::uint64_t>(round));
    const Dataset d = split(base, config.n_train, config.n_test, derive_seed(sr, "split"));

    ForestModel forest;
    Vec forecast;  // aggregate prediction on all rows
    if (need_forest) {
      forest = fit_forest(d, config.forest, derive_seed(sr, "forest"));
      forecast = predict_forest(forest, d.features);
    }

    Vec ml_error;
    const Vec* error_ptr = nullptr;
    if (config.dgp.corr_control) {
      ml_error = forecast - d.truth;
      error_ptr = &ml_error;
    }
    const EconData econ = simulate_econ(config.dgp, d.truth, derive_seed(sr, "econ"), error_ptr);
    if (report.coef_names.empty()) report.coef_names = coefficient_names(econ);

    const auto label = d.label_rows();
    const auto final_rows =
        config.final_sample == FinalSample::unlabel ? d.rows_with(Partition::unlabel) : d.all_rows();
    const EstimateResult reference =
        ols(econ.y(label), econ_design(d.truth(label), econ.controls(label, Eigen::all)),
            report.coef_names, "ols");

    std::optional<ForestIVOutput> candidates;
    if (need_candidates) {
      ForestIVOptions opts;
      opts.alpha = config.alpha;
      opts.final_sample = config.final_sample;
      opts.selection = config.selection;
      opts.seed = derive_seed(sr, "forestiv");
      candidates = forest_iv(forest, d, econ, opts);
    }

    for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
      const Method m = config.methods[mi];
      RoundResult result;
      switch (m) {
        case Method::unbiased:
          result.estimate = reference;
          break;
        case Method::biased:
          result.estimate =
              ols(econ.y(final_rows),
                  econ_design(forecast(final_rows), econ.controls(final_rows, Eigen::all)),
                  report.coef_names, "ols");
          break;
        case Method::forest_iv:
          if (candidates->chosen) {
            result.estimate = candidates->chosen_estimate();
            result.hotelling =
                candidates->candidates[static_cast<std::size_t>(*candidates->chosen)].hotelling.statistic;
          }
          break;
        case Method::averaging: {
          bool any = false;
          for (const auto& rec : candidates->candidates) any = any || rec.retained;
          if (any) result.estimate = averaging_estimate(*candidates);
          break;
        }
        case Method::sample_split:
          result.estimate = sample_split_iv(d, econ, config.forest, config.final_sample,
                                            derive_seed(sr, "samplesplit"));
          break;
        case Method::subset_tree: {
          ForestIVOptions opts;
          opts.alpha = config.alpha;
          opts.final_sample = config.final_sample;
          opts.selection = config.selection;
          opts.seed = derive_seed(sr, "subset");
          const auto out =
              subset_tree_iv(forest, d, econ, config.subset_q, config.subset_draws, opts);
          if (out.chosen) {
            result.estimate = out.chosen_estimate();
            result.hotelling =
                out.candidates[static_cast<std::size_t>(*out.chosen)].hotelling.statistic;
          }
          break;
        }
        case Method::simex: {
          const auto test = d.rows_with(Partition::test);
          const Vec err = forecast(test) - d.truth(test);
          const double sigma_e = std::sqrt((err.array() - err.mean()).square().sum() /
                                           static_cast<double>(err.size() - 1));
          SimexConfig cfg = config.simex;
          cfg.seed = derive_seed(sr, "simex");
          result.estimate =
              simex(econ.y(final_rows), forecast(final_rows),
                    econ.controls(final_rows, Eigen::all), sigma_e, cfg, report.coef_names);
          break;
        }
        case Method::mc_simex: {
          const auto test = d.rows_with(Partition::test);
          const auto pi = estimate_misclassification(forecast(test), d.truth(test));
          SimexConfig cfg = config.simex;
          cfg.seed = derive_seed(sr, "mcsimex");
          result.estimate =
              mc_simex(econ.y(final_rows), forecast(final_rows),
                       econ.controls(final_rows, Eigen::all), pi, cfg, report.coef_names);
          break;
        }
      }

      auto& summary = summaries[mi];
      if (result.estimate) {
        summary.raw.row(round) = result.estimate->beta.transpose();
        ++summary.rounds_used;
        if (m != Method::unbiased) mse_sum[mi] += empirical_mse(*result.estimate, reference);
        if (std::isfinite(result.hotelling)) {
          hotelling_sum[mi] += result.hotelling;
          ++hotelling_count[mi];
        }
      }
    }
  }

  for (std::size_t mi = 0; mi < summaries.size(); ++mi) {
    auto& s = summaries[mi];
    s.mean = Vec::Zero(k);
    s.sd = Vec::Zero(k);
    s.p_value = Vec::Constant(k, kNaN);
    if (s.rounds_used > 0) {
      for (Index c = 0; c < k; ++c) {
        double sum = 0.0;
        for (int r = 0; r < config.rounds; ++r)
          if (std::isfinite(s.raw(r, c))) sum += s.raw(r, c);
        s.mean[c] = sum / s.rounds_used;
        double ss = 0.0;
        for (int r = 0; r < config.rounds; ++r)
          if (std::isfinite(s.raw(r, c))) ss += (s.raw(r, c) - s.mean[c]) * (s.raw(r, c) - s.mean[c]);
        s.sd[c] = s.rounds_used > 1 ? std::sqrt(ss / (s.rounds_used - 1)) : 0.0;
        if (s.rounds_used > 1) {
          const double delta = s.mean[c] - report.true_beta[c];
          if (s.sd[c] > 0.0) {
            const double t = delta / (s.sd[c] / std::sqrt(static_cast<double>(s.rounds_used)));
            s.p_value[c] = student_t_two_sided_p(t, s.rounds_used - 1);
          } else {
            s.p_value[c] = delta == 0.0 ? 1.0 : 0.0;
          }
        }
      }
      // the labeled-data estimate is the yardstick: its own Ave_MSE is 0 by convention
      s.ave_mse = s.method == Method::unbiased ? 0.0 : mse_sum[mi] / s.rounds_used;
    }
    if (screens_candidates(s.method) && hotelling_count[mi] > 0)
      s.mean_hotelling = hotelling_sum[mi] / hotelling_count[mi];
  }
  report.methods = std::move(summaries);
  return report;
}

std::vector<ExperimentReport> sensitivity_sweep(const ExperimentConfig& base, SweepAxis axis,
                                                const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sensitivity_sweep: no axis values");
  std::vector<ExperimentReport> reports;
  std::vector<Dataset> keepalive;
  for (double v : values) {
    ExperimentConfig cfg = base;
    switch (axis) {
      case SweepAxis::unlabel_size: {
        if (v < 1.0) throw std::invalid_argument("sensitivity_sweep: unlabel size must be >= 1");
        const Index total = cfg.n_train + cfg.n_test + static_cast<Index>(v);
        if (cfg.dataset) {
          if (cfg.dataset->n_rows() < total)
            throw std::invalid_argument("sensitivity_sweep: dataset too small for unlabel size");
          std::vector<Index> rows(static_cast<std::size_t>(total));
          for (Index i = 0; i < total; ++i) rows[static_cast<std::size_t>(i)] = i;
          keepalive.push_back(cfg.dataset->subset(rows));
          cfg.dataset = &keepalive.back();
        } else {
          cfg.synth.n = total;
        }
        break;
      }
      case SweepAxis::noise_sd:
        if (v < 0.0) throw std::invalid_argument("sensitivity_sweep: noise sd must be >= 0");
        cfg.dgp.noise_sd = v;
        break;
      case SweepAxis::n_trees:
        if (v < 1.0) throw std::invalid_argument("sensitivity_sweep: tree count must be >= 1");
        cfg.forest.n_trees = static_cast<int>(v);
        break;
    }
    ExperimentReport r = run_experiment(cfg);
    r.axis_value = v;
    r.has_axis = true;
    reports.push_back(std::move(r));
  }
  return reports;
}

namespace {

std::string iso8601_now() {
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_to_json(const ExperimentReport& report, bool include_timestamp,
                           const std::string& config_echo) {
  nlohmann::json j;
  if (include_timestamp) j["generated_at"] = iso8601_now();
  j["master_seed"] = report.master_seed;
  j["rounds"] = report.rounds;
  j["coef_names"] = report.coef_names;
  j["true_beta"] = std::vector<double>(report.true_beta.begin(), report.true_beta.end());
  if (report.has_axis) j["axis_value"] = report.axis_value;
  if (!config_echo.empty()) j["config"] = nlohmann::json::parse(config_echo);
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& s : report.methods) {
    nlohmann::json m;
    m["method"] = method_name(s.method);
    m["rounds_used"] = s.rounds_used;
    m["mean"] = std::vector<double>(s.mean.begin(), s.mean.end());
    m["sd"] = std::vector<double>(s.sd.begin(), s.sd.end());
    std::vector<nlohmann::json> pvals;
    for (Index c = 0; c < s.p_value.size(); ++c)
      pvals.push_back(std::isnan(s.p_value[c]) ? nlohmann::json(nullptr)
                                               : nlohmann::json(s.p_value[c]));
    m["p_value"] = pvals;
    m["ave_mse"] = s.ave_mse;
    if (!std::isnan(s.mean_hotelling)) m["mean_hotelling"] = s.mean_hotelling;
    methods.push_back(std::move(m));
  }
  j["methods"] = std::move(methods);
  return j.dump(2);
}

std::string report_to_csv(const ExperimentReport& report) {
  std::string csv = "method,coefficient,true,mean,sd,p_value,ave_mse,rounds_used\n";
  for (const auto& s : report.methods) {
    for (Index c = 0; c < report.true_beta.size(); ++c) {
      csv += method_name(s.method) + "," + report.coef_names[static_cast<std::size_t>(c)] + "," +
             format_value(report.true_beta[c]) + "," + format_value(s.mean[c]) + "," +
             format_value(s.sd[c]) + "," + format_value(s.p_value[c]) + "," +
             format_value(s.ave_mse) + "," + std::to_string(s.rounds_used) + "\n";
    }
  }
  return csv;
}

std::string report_raw_csv(const ExperimentReport& report) {
  std::string csv = "method,round,coefficient,estimate\n";
  for (const auto& s : report.methods) {
    for (int r = 0; r < s.raw.rows(); ++r) {
      for (Index c = 0; c < s.raw.cols(); ++c) {
        if (!std::isfinite(s.raw(r, c))) continue;
        csv += method_name(s.method) + "," + std::to_string(r) + "," +
               report.coef_names[static_cast<std::size_t>(c)] + "," + format_value(s.raw(r, c)) +
               "\n";
      }
    }
  }
  return csv;
}

}  // namespace forestiv
