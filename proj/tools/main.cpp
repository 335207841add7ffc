#include "forestiv/baselines.hpp"
#include "forestiv/dataset.hpp"
#include "forestiv/forest.hpp"
#include "forestiv/forestiv.hpp"
#include "forestiv/parallel.hpp"
#include "forestiv/regression.hpp"
#include "forestiv/rng.hpp"
#include "forestiv/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

using nlohmann::json;
using namespace forestiv;

namespace {

// ---------------------------------------------------------------------------
// config handling

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void require_keys(const json& section, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!section.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : section.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

void validate_config(const json& cfg) {
  require_keys(cfg, "config",
               {"master_seed", "threads", "task", "data", "split", "forest", "econ", "estimate",
                "subset", "simex", "experiment", "benchmark"});
  if (cfg.contains("data"))
    require_keys(cfg["data"], "data",
                 {"source", "n", "p", "target_sd", "zeta_sd", "components", "path", "schema"});
  if (cfg.contains("split")) require_keys(cfg["split"], "split", {"n_train", "n_test"});
  if (cfg.contains("forest")) require_keys(cfg["forest"], "forest", {"n_trees", "mtry", "min_node"});
  if (cfg.contains("econ")) {
    require_keys(cfg["econ"], "econ",
                 {"beta", "noise_sd", "x_name", "controls", "correlated_control", "y_column",
                  "control_columns"});
    if (cfg["econ"].contains("controls"))
      for (const auto& c : cfg["econ"]["controls"])
        require_keys(c, "econ.controls[]", {"dist", "a", "b", "mean", "sd", "p", "name"});
    if (cfg["econ"].contains("correlated_control"))
      require_keys(cfg["econ"]["correlated_control"], "econ.correlated_control", {"index", "rho"});
  }
  if (cfg.contains("estimate"))
    require_keys(cfg["estimate"], "estimate", {"alpha", "final_sample", "n_folds"});
  if (cfg.contains("subset")) require_keys(cfg["subset"], "subset", {"q_percent", "n_draws"});
  if (cfg.contains("simex")) require_keys(cfg["simex"], "simex", {"lambda_grid", "replicates"});
  if (cfg.contains("experiment")) {
    require_keys(cfg["experiment"], "experiment", {"rounds", "methods", "sweep"});
    if (cfg["experiment"].contains("sweep"))
      require_keys(cfg["experiment"]["sweep"], "experiment.sweep", {"axis", "values"});
  }
  if (cfg.contains("benchmark"))
    require_keys(cfg["benchmark"], "benchmark",
                 {"kind", "rho", "sigma_x", "sigma_z", "sigma_e", "noise_sd", "n", "rounds"});
}

Task task_of(const json& cfg) {
  const std::string t = cfg.value("task", "regression");
  if (t == "regression") return Task::regression;
  if (t == "classification") return Task::classification;
  throw ConfigError("task must be 'regression' or 'classification'");
}

ForestParams forest_params_of(const json& cfg) {
  ForestParams p;
  p.task = task_of(cfg);
  if (cfg.contains("forest")) {
    const auto& f = cfg["forest"];
    p.n_trees = f.value("n_trees", p.n_trees);
    p.mtry = f.value("mtry", p.mtry);
    p.min_node = f.value("min_node", p.min_node);
  }
  return p;
}

SynthSpec synth_spec_of(const json& cfg) {
  SynthSpec s;
  s.binary = task_of(cfg) == Task::classification;
  if (!cfg.contains("data")) return s;
  const auto& d = cfg["data"];
  s.n = d.value("n", s.n);
  s.p = d.value("p", s.p);
  s.target_sd = d.value("target_sd", s.target_sd);
  s.zeta_sd = d.value("zeta_sd", s.zeta_sd);
  if (d.contains("components")) {
    for (const auto& name : d["components"]) {
      const std::string c = name.get<std::string>();
      if (c == "sine")
        s.components.push_back(TruthComponent::sine);
      else if (c == "cosine")
        s.components.push_back(TruthComponent::cosine);
      else if (c == "linear")
        s.components.push_back(TruthComponent::linear);
      else if (c == "quadratic")
        s.components.push_back(TruthComponent::quadratic);
      else
        throw ConfigError("unknown truth component '" + c + "'");
    }
  }
  return s;
}

Schema schema_of(const json& cfg) {
  if (!cfg.contains("data") || !cfg["data"].contains("schema"))
    throw ConfigError("csv data needs data.schema");
  Schema schema;
  for (const auto& [column, role] : cfg["data"]["schema"].items()) {
    const std::string r = role.get<std::string>();
    if (r == "feature")
      schema[column] = ColumnRole::feature;
    else if (r == "truth")
      schema[column] = ColumnRole::truth;
    else if (r == "ignore")
      schema[column] = ColumnRole::ignore;
    else
      throw ConfigError("schema role must be feature|truth|ignore, got '" + r + "'");
  }
  return schema;
}

DGPSpec dgp_of(const json& cfg) {
  if (!cfg.contains("econ")) throw ConfigError("config needs an econ section");
  const auto& e = cfg["econ"];
  if (!e.contains("beta")) throw ConfigError("econ needs beta");
  DGPSpec dgp;
  const auto beta = e["beta"].get<std::vector<double>>();
  dgp.beta = Eigen::Map<const Vec>(beta.data(), static_cast<Index>(beta.size()));
  dgp.noise_sd = e.value("noise_sd", dgp.noise_sd);
  dgp.x_name = e.value("x_name", dgp.x_name);
  if (e.contains("controls")) {
    for (const auto& c : e["controls"]) {
      ControlSpec spec;
      const std::string dist = c.value("dist", "normal");
      if (dist == "uniform") {
        spec.kind = ControlDist::uniform;
        spec.p1 = c.value("a", 0.0);
        spec.p2 = c.value("b", 1.0);
      } else if (dist == "normal") {
        spec.kind = ControlDist::normal;
        spec.p1 = c.value("mean", 0.0);
        spec.p2 = c.value("sd", 1.0);
      } else if (dist == "bernoulli") {
        spec.kind = ControlDist::bernoulli;
        spec.p1 = c.value("p", 0.5);
      } else {
        throw ConfigError("control dist must be uniform|normal|bernoulli");
      }
      spec.name = c.value("name", "");
      dgp.controls.push_back(spec);
    }
  }
  if (e.contains("correlated_control")) {
    CorrelatedControlSpec cc;
    cc.index = e["correlated_control"].value("index", 0);
    cc.rho = e["correlated_control"].value("rho", 0.0);
    dgp.corr_control = cc;
  }
  return dgp;
}

SimexConfig simex_of(const json& cfg) {
  SimexConfig s;
  if (!cfg.contains("simex")) return s;
  const auto& j = cfg["simex"];
  if (j.contains("lambda_grid")) {
    const auto grid = j["lambda_grid"].get<std::vector<double>>();
    s.lambda_grid = Eigen::Map<const Vec>(grid.data(), static_cast<Index>(grid.size()));
  }
  s.replicates = j.value("replicates", s.replicates);
  return s;
}

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool no_timestamp = false;
  int rounds_override = 0;
};

json load_and_prepare(const CommonFlags& flags, std::uint64_t* master_seed) {
  json cfg = load_config(flags.config_path);
  validate_config(cfg);
  if (flags.rounds_override > 0) cfg["experiment"]["rounds"] = flags.rounds_override;
  *master_seed = flags.seed_set ? flags.seed : cfg.value("master_seed", 1ull);
  const int threads = flags.threads > 0 ? flags.threads : cfg.value("threads", 0);
  set_max_threads(threads);
  return cfg;
}

// ---------------------------------------------------------------------------
// shared pipeline pieces

Dataset load_dataset(const json& cfg, const std::string& data_path, std::uint64_t master_seed) {
  Dataset d = load_csv(data_path, schema_of(cfg));
  const bool has_partition =
      !d.rows_with(Partition::train).empty() || !d.rows_with(Partition::test).empty();
  if (!has_partition) {
    if (!cfg.contains("split"))
      throw ConfigError("data has no __partition column; config needs a split section");
    d = split(d, cfg["split"].value("n_train", Index{0}), cfg["split"].value("n_test", Index{0}),
              derive_seed(master_seed, "split"));
  }
  return d;
}

ForestModel load_forest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open forest: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return forest_from_json(buffer.str());
}

EconData econ_of(const json& cfg, const Dataset& d, const std::string& data_path,
                 std::uint64_t master_seed, const ForestModel* forest) {
  if (!cfg.contains("econ")) throw ConfigError("config needs an econ section");
  const auto& e = cfg["econ"];
  if (e.contains("y_column")) {
    // observed outcome and controls stored alongside the features
    std::vector<std::string> names{e["y_column"].get<std::string>()};
    std::vector<std::string> controls;
    if (e.contains("control_columns"))
      controls = e["control_columns"].get<std::vector<std::string>>();
    names.insert(names.end(), controls.begin(), controls.end());
    const auto columns = read_csv_columns(data_path, names);
    EconData econ;
    econ.y = columns.at(names[0]);
    if (econ.y.size() != d.n_rows()) throw ConfigError("econ columns are misaligned with the data");
    econ.controls.resize(d.n_rows(), static_cast<Index>(controls.size()) + 1);
    econ.controls.col(0).setOnes();
    econ.control_names = {"(Intercept)"};
    for (std::size_t k = 0; k < controls.size(); ++k) {
      econ.controls.col(static_cast<Index>(k) + 1) = columns.at(controls[k]);
      econ.control_names.push_back(controls[k]);
    }
    econ.x_name = e.value("x_name", d.truth_name.empty() ? std::string("x") : d.truth_name);
    return econ;
  }
  const DGPSpec dgp = dgp_of(cfg);
  Vec ml_error;
  const Vec* error_ptr = nullptr;
  if (dgp.corr_control) {
    if (!forest) throw ConfigError("correlated_control needs a fitted forest");
    ml_error = predict_forest(*forest, d.features) - d.truth;
    error_ptr = &ml_error;
  }
  return simulate_econ(dgp, d.truth, derive_seed(master_seed, "econ"), error_ptr);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write: " + path);
  out << text;
}

std::string timestamp_field(bool no_timestamp) {
  if (no_timestamp) return "";
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ExperimentConfig experiment_of(const json& cfg, std::uint64_t master_seed,
                               Dataset* dataset_storage) {
  ExperimentConfig x;
  x.synth = synth_spec_of(cfg);
  x.dgp = dgp_of(cfg);
  x.forest = forest_params_of(cfg);
  x.master_seed = master_seed;
  if (cfg.contains("split")) {
    x.n_train = cfg["split"].value("n_train", x.n_train);
    x.n_test = cfg["split"].value("n_test", x.n_test);
  }
  if (cfg.contains("estimate")) {
    const auto& est = cfg["estimate"];
    x.alpha = est.value("alpha", x.alpha);
    const std::string fs = est.value("final_sample", "unlabel");
    if (fs == "unlabel")
      x.final_sample = FinalSample::unlabel;
    else if (fs == "label+unlabel")
      x.final_sample = FinalSample::label_plus_unlabel;
    else
      throw ConfigError("final_sample must be 'unlabel' or 'label+unlabel'");
    x.selection.n_folds = est.value("n_folds", x.selection.n_folds);
  }
  if (cfg.contains("subset")) {
    x.subset_q = cfg["subset"].value("q_percent", x.subset_q);
    x.subset_draws = cfg["subset"].value("n_draws", x.subset_draws);
  }
  x.simex = simex_of(cfg);
  if (!cfg.contains("experiment")) throw ConfigError("config needs an experiment section");
  x.rounds = cfg["experiment"].value("rounds", x.rounds);
  if (!cfg["experiment"].contains("methods")) throw ConfigError("experiment needs a methods list");
  for (const auto& m : cfg["experiment"]["methods"])
    x.methods.push_back(parse_method(m.get<std::string>()));
  if (cfg.contains("data") && cfg["data"].value("source", "synthetic") == "csv") {
    const std::string path = cfg["data"].value("path", "");
    if (path.empty()) throw ConfigError("data.source=csv needs data.path");
    *dataset_storage = load_csv(path, schema_of(cfg));
    x.dataset = dataset_storage;
  }
  return x;
}

void write_reports(const std::vector<ExperimentReport>& reports, const std::string& prefix,
                   bool no_timestamp, const json& cfg) {
  if (reports.size() == 1) {
    write_file(prefix + ".json", report_to_json(reports[0], !no_timestamp, cfg.dump()));
    write_file(prefix + ".csv", report_to_csv(reports[0]));
    write_file(prefix + "_raw.csv", report_raw_csv(reports[0]));
    return;
  }
  json all = json::array();
  std::string csv;
  for (const auto& r : reports) {
    all.push_back(json::parse(report_to_json(r, false)));
    std::istringstream lines(report_to_csv(r));
    std::string line;
    bool header = true;
    while (std::getline(lines, line)) {
      if (header) {
        if (csv.empty()) csv = "axis_value," + line + "\n";
        header = false;
      } else {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", r.axis_value);
        csv += std::string(buf) + "," + line + "\n";
      }
    }
  }
  json top;
  const std::string ts = timestamp_field(no_timestamp);
  if (!ts.empty()) top["generated_at"] = ts;
  top["config"] = cfg;
  top["reports"] = std::move(all);
  write_file(prefix + ".json", top.dump(2));
  write_file(prefix + ".csv", csv);
}

// first-stage strength and exclusion leakage per candidate, before (all
// other trees as instruments) and after selection
json selection_diagnostics(const ForestModel& forest, const Dataset& d,
                           const ForestIVOutput& out) {
  const auto test = d.rows_with(Partition::test);
  const Mat p_test = tree_prediction_matrix(forest, d.features(test, Eigen::all));
  const Vec truth_test = d.truth(test);
  const Mat ones = Mat::Ones(static_cast<Index>(test.size()), 1);

  json rows = json::array();
  for (const auto& rec : out.candidates) {
    if (rec.selection.endog_trees.size() != 1) continue;
    const int i = rec.selection.endog_trees[0];
    json r;
    r["id"] = rec.id;
    std::vector<int> all_others;
    for (Index j = 0; j < p_test.cols(); ++j)
      if (static_cast<int>(j) != i) all_others.push_back(static_cast<int>(j));
    const Vec x = p_test.col(i);
    const Vec err = x - truth_test;
    try {
      const Mat w_before = p_test(Eigen::all, all_others);
      r["f_before"] = first_stage_f(x, w_before, ones);
      r["r2_before"] = exclusion_adjusted_r2(err, w_before);
    } catch (const std::exception&) {
      // more candidates than test rows; the before-selection fit is undefined
    }
    if (!rec.selection.instruments.empty()) {
      const Mat w_after = p_test(Eigen::all, rec.selection.instruments);
      r["f_after"] = first_stage_f(x, w_after, ones);
      r["r2_after"] = exclusion_adjusted_r2(err, w_after);
      r["n_instruments"] = rec.selection.instruments.size();
      r["hotelling"] = rec.hotelling.statistic;
      r["p_value"] = rec.hotelling.p_value;
      r["retained"] = rec.retained;
    }
    rows.push_back(std::move(r));
  }

  const auto excl = exclusion_diagnostic(forest, d);
  json j;
  j["candidates"] = std::move(rows);
  j["exclusion_covariance"] = {{"mean", excl.mean_offdiag},
                               {"mean_abs", excl.mean_abs_offdiag},
                               {"max_abs", excl.max_abs_offdiag}};
  j["alpha"] = out.alpha;
  j["critical_value"] = out.critical_value;
  return j;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_fit_forest(const CommonFlags& flags, const std::string& data_path,
                   const std::string& out_path) {
  std::uint64_t master_seed = 0;
  const json cfg = load_and_prepare(flags, &master_seed);
  const Dataset d = load_dataset(cfg, data_path, master_seed);
  const ForestModel f = fit_forest(d, forest_params_of(cfg), derive_seed(master_seed, "forest"));

  const auto test = d.rows_with(Partition::test);
  if (!test.empty()) {
    const Vec pred = predict_forest(f, d.features(test, Eigen::all));
    const Vec truth = d.truth(test);
    if (f.params.task == Task::classification) {
      std::printf("test accuracy: %.4f\n", (pred.array() == truth.array()).cast<double>().mean());
    } else {
      std::printf("test rmse: %.4f\n",
                  std::sqrt((pred - truth).squaredNorm() / static_cast<double>(test.size())));
    }
  }
  write_file(out_path, forest_to_json(f));
  return 0;
}

int cmd_estimate(const CommonFlags& flags, const std::string& data_path,
                 const std::string& forest_path, const std::string& mode,
                 const std::string& out_path, std::optional<double> alpha_override,
                 const std::string& final_sample_flag, int bootstrap, bool diagnose) {
  std::uint64_t master_seed = 0;
  json cfg = load_and_prepare(flags, &master_seed);
  if (alpha_override) cfg["estimate"]["alpha"] = *alpha_override;
  if (!final_sample_flag.empty()) cfg["estimate"]["final_sample"] = final_sample_flag;

  const Dataset d = load_dataset(cfg, data_path, master_seed);
  const ForestModel forest = load_forest(forest_path);
  if (forest.n_features != d.n_features())
    throw ConfigError("forest and data disagree on the feature count");

  const EconData econ = econ_of(cfg, d, data_path, master_seed, &forest);
  ForestIVOptions opts;
  opts.seed = derive_seed(master_seed, "estimate");
  if (cfg.contains("estimate")) {
    opts.alpha = cfg["estimate"].value("alpha", opts.alpha);
    const std::string fs = cfg["estimate"].value("final_sample", "unlabel");
    opts.final_sample =
        fs == "label+unlabel" ? FinalSample::label_plus_unlabel : FinalSample::unlabel;
    opts.selection.n_folds = cfg["estimate"].value("n_folds", opts.selection.n_folds);
  }

  json out;
  const std::string ts = timestamp_field(flags.no_timestamp);
  if (!ts.empty()) out["generated_at"] = ts;
  out["mode"] = mode;

  const auto final_rows = opts.final_sample == FinalSample::unlabel
                              ? d.rows_with(Partition::unlabel)
                              : d.all_rows();
  const auto names = coefficient_names(econ);

  if (mode == "biased") {
    const Vec xhat = predict_forest(forest, d.features(final_rows, Eigen::all));
    const auto fit = ols(econ.y(final_rows),
                         econ_design(xhat, econ.controls(final_rows, Eigen::all)), names, "ols");
    out["estimate"] = json::parse(estimate_to_json(fit));
  } else if (mode == "unbiased") {
    const auto label = d.label_rows();
    const auto fit =
        ols(econ.y(label), econ_design(d.truth(label), econ.controls(label, Eigen::all)), names,
            "ols");
    out["estimate"] = json::parse(estimate_to_json(fit));
  } else if (mode == "sample-split") {
    const auto fit = sample_split_iv(d, econ, forest.params, opts.final_sample,
                                     derive_seed(master_seed, "samplesplit"));
    out["estimate"] = json::parse(estimate_to_json(fit));
  } else if (mode == "forestiv" || mode == "averaging" || mode == "subset") {
    ForestIVOutput result;
    if (mode == "subset") {
      double q = 50.0;
      int draws = 100;
      if (cfg.contains("subset")) {
        q = cfg["subset"].value("q_percent", q);
        draws = cfg["subset"].value("n_draws", draws);
      }
      result = subset_tree_iv(forest, d, econ, q, draws, opts);
    } else {
      result = forest_iv(forest, d, econ, opts);
    }
    if (bootstrap > 0 && mode == "forestiv") {
      const auto params = forest.params;
      const auto boot = bootstrap_se(
          d, econ, bootstrap, derive_seed(master_seed, "bootstrap"),
          [&](const Dataset& rep, const EconData& e, std::uint64_t seed) -> std::optional<Vec> {
            const auto rf = fit_forest(rep, params, derive_seed(seed, "forest"));
            ForestIVOptions ro = opts;
            ro.seed = derive_seed(seed, "estimate");
            const auto r = forest_iv(rf, rep, e, ro);
            if (!r.chosen) return std::nullopt;
            return r.chosen_estimate().beta;
          });
      result.bootstrap_se = boot.se;
      out["bootstrap"] = {{"replicates", boot.replicates}, {"degenerate", boot.degenerate}};
    }
    out["result"] = json::parse(forest_iv_output_to_json(result));
    if (mode == "averaging") {
      bool any = false;
      for (const auto& rec : result.candidates) any = any || rec.retained;
      if (any)
        out["estimate"] = json::parse(estimate_to_json(averaging_estimate(result)));
      else
        out["no_valid_tuple"] = true;
    }
    if (diagnose && mode != "subset") out["diagnostics"] = selection_diagnostics(forest, d, result);
    const std::string csv_path =
        out_path.size() > 5 && out_path.substr(out_path.size() - 5) == ".json"
            ? out_path.substr(0, out_path.size() - 5) + ".csv"
            : out_path + ".csv";
    write_file(csv_path, forest_iv_output_to_csv(result));
  } else {
    throw ConfigError("unknown mode '" + mode + "'");
  }

  write_file(out_path, out.dump(2));
  return 0;
}

int cmd_simulate(const CommonFlags& flags, const std::string& out_prefix) {
  std::uint64_t master_seed = 0;
  const json cfg = load_and_prepare(flags, &master_seed);
  Dataset storage;
  ExperimentConfig x = experiment_of(cfg, master_seed, &storage);

  std::vector<ExperimentReport> reports;
  if (cfg["experiment"].contains("sweep")) {
    const auto& sweep = cfg["experiment"]["sweep"];
    const std::string axis_name = sweep.value("axis", "");
    SweepAxis axis;
    if (axis_name == "unlabel_size")
      axis = SweepAxis::unlabel_size;
    else if (axis_name == "noise_sd")
      axis = SweepAxis::noise_sd;
    else if (axis_name == "n_trees")
      axis = SweepAxis::n_trees;
    else
      throw ConfigError("sweep axis must be unlabel_size|noise_sd|n_trees");
    reports = sensitivity_sweep(x, axis, sweep["values"].get<std::vector<double>>());
  } else {
    reports.push_back(run_experiment(x));
  }
  write_reports(reports, out_prefix, flags.no_timestamp, cfg);
  return 0;
}

int cmd_benchmark(const CommonFlags& flags, const std::string& out_prefix) {
  std::uint64_t master_seed = 0;
  const json cfg = load_and_prepare(flags, &master_seed);
  if (!cfg.contains("benchmark")) throw ConfigError("config needs a benchmark section");
  const std::string kind = cfg["benchmark"].value("kind", "");

  if (kind == "blindspot") {
    BlindspotDesign design;
    const auto& b = cfg["benchmark"];
    design.rho = b.value("rho", design.rho);
    design.sigma_x = b.value("sigma_x", design.sigma_x);
    design.sigma_z = b.value("sigma_z", design.sigma_z);
    design.sigma_e = b.value("sigma_e", design.sigma_e);
    design.noise_sd = b.value("noise_sd", design.noise_sd);
    design.n = b.value("n", design.n);
    design.rounds = b.value("rounds", design.rounds);
    design.simex = simex_of(cfg);
    const auto report = simex_blindspot_check(design, derive_seed(master_seed, "blindspot"));
    json j;
    const std::string ts = timestamp_field(flags.no_timestamp);
    if (!ts.empty()) j["generated_at"] = ts;
    j["bias_naive"] = report.bias_naive;
    j["bias_simex"] = report.bias_simex;
    j["condition_lhs"] = report.condition_lhs;
    j["condition_rhs"] = report.condition_rhs;
    j["condition_holds"] = report.condition_holds;
    j["simex_more_biased"] = report.simex_more_biased;
    write_file(out_prefix + "_condition.json", j.dump(2));
    // the full-pipeline comparison on the same correlated-error design
    if (cfg.contains("experiment")) {
      Dataset storage;
      ExperimentConfig x = experiment_of(cfg, master_seed, &storage);
      write_reports({run_experiment(x)}, out_prefix, flags.no_timestamp, cfg);
    }
    return 0;
  }
  if (kind != "simex" && kind != "mc-simex")
    throw ConfigError("benchmark kind must be simex|mc-simex|blindspot");
  Dataset storage;
  ExperimentConfig x = experiment_of(cfg, master_seed, &storage);
  const Method wanted = kind == "simex" ? Method::simex : Method::mc_simex;
  if (std::find(x.methods.begin(), x.methods.end(), wanted) == x.methods.end())
    x.methods.push_back(wanted);
  write_reports({run_experiment(x)}, out_prefix, flags.no_timestamp, cfg);
  return 0;
}

int cmd_diagnose(const CommonFlags& flags, const std::string& data_path,
                 const std::string& forest_path, const std::string& out_path) {
  std::uint64_t master_seed = 0;
  const json cfg = load_and_prepare(flags, &master_seed);
  const Dataset d = load_dataset(cfg, data_path, master_seed);
  const ForestModel forest = load_forest(forest_path);

  const EconData econ = econ_of(cfg, d, data_path, master_seed, &forest);
  ForestIVOptions opts;
  opts.seed = derive_seed(master_seed, "estimate");
  if (cfg.contains("estimate")) opts.alpha = cfg["estimate"].value("alpha", opts.alpha);
  const auto result = forest_iv(forest, d, econ, opts);

  json out = selection_diagnostics(forest, d, result);
  const std::string ts = timestamp_field(flags.no_timestamp);
  if (!ts.empty()) out["generated_at"] = ts;
  write_file(out_path, out.dump(2));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ForestIV: random-forest instruments for ML-generated covariates"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string data_path, forest_path, out_path, out_prefix, mode, final_sample_flag;
  double alpha_value = 0.0;
  bool alpha_set = false;
  int bootstrap = 0;
  bool diagnose = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "JSON config file")->required();
    cmd->add_option("--seed", flags.seed, "master seed (overrides config)")
        ->each([&](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--threads", flags.threads, "cap worker threads");
    cmd->add_flag("--no-timestamp", flags.no_timestamp, "omit timestamps from outputs");
  };

  auto* fit = app.add_subcommand("fit-forest", "fit a forest and serialize it");
  add_common(fit);
  fit->add_option("--data", data_path, "input CSV")->required();
  fit->add_option("--out", out_path, "output forest JSON")->required();

  auto* est = app.add_subcommand("estimate", "estimate the econometric model");
  add_common(est);
  est->add_option("--data", data_path, "input CSV")->required();
  est->add_option("--forest", forest_path, "serialized forest JSON")->required();
  est->add_option("--mode", mode, "biased|unbiased|forestiv|sample-split|subset|averaging")
      ->required();
  est->add_option("--out", out_path, "output JSON")->required();
  est->add_option("--alpha", alpha_value, "screening level")
      ->each([&](const std::string&) { alpha_set = true; });
  est->add_option("--final-sample", final_sample_flag, "unlabel|label+unlabel");
  est->add_option("--bootstrap", bootstrap, "bootstrap replicates for standard errors");
  est->add_flag("--diagnose", diagnose, "add instrument diagnostics");

  auto* sim = app.add_subcommand("simulate", "run the experiment harness");
  add_common(sim);
  sim->add_option("--out-prefix", out_prefix, "output path prefix")->required();
  sim->add_option("--rounds", flags.rounds_override, "override experiment rounds");

  auto* bench = app.add_subcommand("benchmark", "corrector comparisons");
  add_common(bench);
  bench->add_option("--out-prefix", out_prefix, "output path prefix")->required();

  auto* diag = app.add_subcommand("diagnose", "instrument diagnostics for a fitted forest");
  add_common(diag);
  diag->add_option("--data", data_path, "input CSV")->required();
  diag->add_option("--forest", forest_path, "serialized forest JSON")->required();
  diag->add_option("--out", out_path, "output JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) return cmd_fit_forest(flags, data_path, out_path);
    if (est->parsed())
      return cmd_estimate(flags, data_path, forest_path, mode, out_path,
                          alpha_set ? std::optional<double>(alpha_value) : std::nullopt,
                          final_sample_flag, bootstrap, diagnose);
    if (sim->parsed()) return cmd_simulate(flags, out_prefix);
    if (bench->parsed()) return cmd_benchmark(flags, out_prefix);
    if (diag->parsed()) return cmd_diagnose(flags, data_path, forest_path, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
