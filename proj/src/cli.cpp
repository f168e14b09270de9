#include "scbm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "scbm/error.hpp"
#include "scbm/interpret.hpp"
#include "scbm/util.hpp"

namespace scbm {

namespace fs = std::filesystem;

void apply_propensity_flag(const std::string& flag, PropensityConfig& config) {
  if (flag == "rf") {
    config.kind = PropensityKind::random_forest;
  } else if (flag == "logistic") {
    config.kind = PropensityKind::logistic;
  } else if (flag.rfind("known:", 0) == 0) {
    const std::string text = flag.substr(6);
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() || !(v > 0.0 && v < 1.0)) {
      throw ConfigError("--propensity: known:<value> needs a value strictly between 0 and 1, got '" + text + "'");
    }
    config.kind = PropensityKind::known_constant;
    config.constant = v;
  } else {
    throw ConfigError("--propensity: expected rf, logistic or known:<value>, got '" + flag + "'");
  }
}

int scenario_with_regime(int id, Regime regime) {
  scenario(id);  // range check
  const int base = (id - 1) % 6 + 1;
  return regime == Regime::rct ? base : base + 6;
}

ModelArchive fit_estimator(const Dataset& data, const std::string& estimator, const RunConfig& config) {
  ModelArchive archive;
  if (estimator == "cm") {
    archive.model = fit_causal_mars(data, config.cm_config(), config.seed);
  } else if (estimator == "bcm") {
    PropensityConfig pc = config.scbm.propensity;
    pc.seed = derive_seed(config.seed, {0});
    pc.threads = config.threads;
    archive.model = fit_bcm(data, config.bcm_config(), fit_propensity(data, pc));
  } else {
    ScbmConfig c = config.scbm_config();
    c.variant = parse_variant(estimator);
    archive.model = fit_model(data, c);
  }
  return archive;
}

namespace {

// Flags shared by the commands that fit models. Only flags actually given
// override the configuration.
struct ModelFlags {
  std::optional<std::string> variant;
  std::optional<std::size_t> b, m_max, k_max, min_child, cv_folds, q;
  std::optional<std::string> propensity;
  std::optional<double> clip_eps;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "Estimator: scbm, prop0, prop1, cm or bcm");
    app->add_option("--b", b, "Bootstrap replicates");
    app->add_option("--m-max", m_max, "Maximum forward-pass terms");
    app->add_option("--k-max", k_max, "Maximum interaction degree");
    app->add_option("--min-child", min_child, "Minimum positive rows on each side of a knot (default: end-span rule)");
    app->add_option("--cv-folds", cv_folds, "Cross-validation folds of the penalty path");
    app->add_option("--propensity", propensity, "rf, logistic or known:<value>");
    app->add_option("--clip-eps", clip_eps, "Propensity clipping bound");
    app->add_option("--q", q, "Propensity strata of bcm");
  }

  void apply(RunConfig& c) const {
    if (b) c.scbm.b = c.bcm.b = *b;
    if (m_max) c.scbm.forward.m_max = c.cm.m_max = c.bcm.forward.m_max = *m_max;
    if (k_max) c.scbm.forward.k_max = c.cm.k_max = c.bcm.forward.k_max = *k_max;
    if (min_child) c.scbm.forward.min_child = c.cm.min_child = c.bcm.forward.min_child = *min_child;
    if (cv_folds) c.scbm.lasso.folds = *cv_folds;
    if (propensity) apply_propensity_flag(*propensity, c.scbm.propensity);
    if (clip_eps) c.scbm.clip_epsilon = *clip_eps;
    if (q) c.bcm.q = *q;
  }

  std::string estimator(const RunConfig& c) const {
    const std::string name = variant.value_or(to_string(c.scbm.variant));
    const auto& known = known_estimators();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("--variant: expected scbm, prop0, prop1, cm or bcm, got '" + name + "'");
    }
    return name;
  }
};

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--threads", threads, "Worker threads (default: SCBM_THREADS or 1)");
  }

  RunConfig resolve(const ModelFlags* model = nullptr) const {
    RunConfig c = default_run_config();
    if (config) c = load_run_config(*config, c);
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (model) model->apply(c);
    c.validate();
    return c;
  }
};

Arm parse_arm(const std::string& s) {
  if (s == "treated" || s == "1") return Arm::treated;
  if (s == "control" || s == "0") return Arm::control;
  throw ConfigError("--arm: expected treated, control, 1 or 0, got '" + s + "'");
}

// Writes to the named file, or to `out` when the name is empty or "-".
template <class F> void emit(const std::string& path, std::ostream& out, F&& write) {
  if (path.empty() || path == "-") {
    write(out);
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write '" + path + "'");
  write(file);
  if (!file) throw Error("failed writing '" + path + "'");
}

std::vector<std::string> excluded(const std::string& t, const std::string& y) { return {t, y}; }

const FittedScbm& require_scbm(const ModelArchive& archive, const char* command) {
  const auto* m = std::get_if<FittedScbm>(&archive.model);
  if (!m) {
    throw UnsupportedOperation(std::string(command) + " needs an scbm-family model, got " + archive.model_type());
  }
  return *m;
}

std::size_t resolve_variable(const std::string& token, const FittedScbm& model) {
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    if (model.feature_names[j] == token) return j;
  }
  std::size_t used = 0;
  long long v = -1;
  try {
    v = std::stoll(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != token.size() || v < 0 || static_cast<std::size_t>(v) >= model.p) {
    throw ConfigError("--variables: '" + token + "' is neither a covariate name nor an index below " +
                      std::to_string(model.p));
  }
  return static_cast<std::size_t>(v);
}

BenchSetting parse_setting(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x != std::string::npos) {
      std::size_t a = 0, b = 0;
      const auto n = std::stoul(s.substr(0, x), &a);
      const auto p = std::stoul(s.substr(x + 1), &b);
      if (a == x && b == s.size() - x - 1) return {n, p};
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("--settings: expected entries like 200x50, got '" + s + "'");
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shared-basis causal MARS: fit, predict and benchmark heterogeneous treatment effect models",
               "scbm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "scbm 1.0");

  CommonFlags common;
  ModelFlags model_flags;
  std::string data_path, model_path, out_path, json_path, treatment = "t", outcome = "y";

  auto add_data = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--data", data_path, "Input CSV with a header row");
    if (required) o->required();
    sub->add_option("--treatment", treatment, "Treatment column name")->capture_default_str();
    sub->add_option("--outcome", outcome, "Outcome column name")->capture_default_str();
  };

  auto* fit = app.add_subcommand("fit", "Fit a model on a CSV and write its JSON archive");
  add_data(fit, true);
  common.add(fit);
  model_flags.add(fit);
  fit->add_option("--out,-o", out_path, "Archive path (default: <output_dir>/model.json)");

  std::string arm;
  auto* predict = app.add_subcommand("predict", "Per-row effect (or arm outcome) predictions as CSV");
  predict->add_option("--model", model_path, "Model archive")->required();
  add_data(predict, true);
  predict->add_option("--arm", arm, "Predict the outcome of this arm (treated or control)");
  predict->add_option("--out,-o", out_path, "Output CSV (default: standard output)");

  int scenario_id = 1;
  std::size_t sim_n = 200, sim_p = 50;
  std::optional<std::string> regime;
  std::string truth_path;
  auto* simulate = app.add_subcommand("simulate", "Draw a benchmark scenario as CSV");
  simulate->add_option("--scenario", scenario_id, "Scenario 1-12")->required();
  simulate->add_option("--n", sim_n, "Rows")->capture_default_str();
  simulate->add_option("--p", sim_p, "Covariates (at least 9)")->capture_default_str();
  simulate->add_option("--regime", regime, "rct or observational (overrides the scenario's)");
  simulate->add_option("--seed", common.seed, "Seed");
  simulate->add_option("--out,-o", out_path, "Output CSV (default: standard output)");
  simulate->add_option("--truth", truth_path, "Also write the true effect and propensity per row");

  std::vector<int> scenarios;
  std::vector<std::string> settings, estimators;
  std::optional<std::size_t> reps, n_test;
  std::string out_dir;
  bool oracle_propensity = false;
  auto* bench = app.add_subcommand("bench", "Run the simulation grid and write report files");
  bench->add_option("--scenarios", scenarios, "Scenario ids, comma separated")->delimiter(',');
  bench->add_option("--settings", settings, "Sizes as NxP, comma separated")->delimiter(',');
  bench->add_option("--estimators", estimators, "Estimators, comma separated")->delimiter(',');
  bench->add_option("--reps", reps, "Replications per cell");
  bench->add_option("--n-test", n_test, "Test points per draw");
  bench->add_option("--out-dir", out_dir, "Report directory (default: output_dir)");
  bench->add_flag("--oracle-propensity", oracle_propensity, "Stratify bcm by the true propensity");
  common.add(bench);
  model_flags.add(bench);

  std::string mode = "zero_groups";
  auto* importance = app.add_subcommand("importance", "Variable importance of an scbm model");
  importance->add_option("--model", model_path, "Model archive")->required();
  add_data(importance, true);
  importance->add_option("--mode", mode, "zero_groups or refit")->capture_default_str();
  importance->add_option("--out,-o", out_path, "Output CSV (default: standard output)");
  importance->add_option("--json", json_path, "Also write a JSON report");

  std::vector<std::string> variables;
  std::size_t points = 25;
  auto* pdp = app.add_subcommand("pdp", "Partial dependence curves of an scbm model");
  pdp->add_option("--model", model_path, "Model archive")->required();
  add_data(pdp, true);
  pdp->add_option("--variables", variables, "Covariate names or indices (default: all)")->delimiter(',');
  pdp->add_option("--points", points, "Grid points per curve")->capture_default_str();
  pdp->add_option("--arm", arm, "Curve of this arm's outcome instead of the effect");
  pdp->add_option("--out,-o", out_path, "Output CSV (default: standard output)");

  std::optional<std::size_t> k, cal_reps;
  std::optional<double> holdout;
  bool iptw = false;
  auto* calibrate = app.add_subcommand("calibrate", "Subgroup calibration of estimated effects");
  add_data(calibrate, true);
  calibrate->add_option("--model", model_path, "Evaluate this model once instead of refitting");
  calibrate->add_option("--k", k, "Subgroups");
  calibrate->add_option("--reps", cal_reps, "Split/refit replications");
  calibrate->add_option("--holdout", holdout, "Held-out share per replication");
  calibrate->add_flag("--iptw", iptw, "Inverse-propensity weighted subgroup ATEs");
  calibrate->add_option("--out,-o", out_path, "Output CSV (default: standard output)");
  calibrate->add_option("--json", json_path, "Also write a JSON report");
  common.add(calibrate);
  model_flags.add(calibrate);

  auto* config = app.add_subcommand("config", "Print the resolved run configuration as JSON");
  common.add(config);
  model_flags.add(config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (fit->parsed()) {
      const RunConfig cfg = common.resolve(&model_flags);
      const std::string name = model_flags.estimator(cfg);
      const Dataset data = load_csv(data_path, treatment, outcome);
      const ModelArchive archive = fit_estimator(data, name, cfg);
      const std::string path = out_path.empty() ? (fs::path(cfg.output_dir) / "model.json").string() : out_path;
      emit(path, out, [&](std::ostream& o) { o << archive_to_json(archive); });
      err << "fitted " << name << " on n=" << data.n() << ", p=" << data.p() << "; wrote " << path << "\n";
      if (const auto* m = std::get_if<FittedScbm>(&archive.model)) {
        for (const auto& w : m->diagnostics.warnings) err << "warning: " << w << "\n";
      } else if (const auto* b = std::get_if<StratifiedBcmFit>(&archive.model)) {
        for (const auto& w : b->warnings) err << "warning: " << w << "\n";
      }
    } else if (predict->parsed()) {
      const ModelArchive archive = load_model(model_path);
      const Matrix x = load_covariates(data_path, archive.feature_names(), archive.p(), excluded(treatment, outcome));
      Vector v;
      std::string header;
      if (arm.empty()) {
        v = archive.predict_hte(x);
        header = "tau_hat";
      } else {
        const Arm a = parse_arm(arm);
        v = archive.predict_outcome(x, a);
        header = a == Arm::treated ? "mu_treated" : "mu_control";
      }
      emit(out_path, out, [&](std::ostream& o) { write_columns_csv(o, {header}, {v}); });
    } else if (simulate->parsed()) {
      int id = scenario_id;
      if (scenario_id < 1 || scenario_id > 12) throw ConfigError("--scenario: expected 1-12");
      if (regime) {
        if (*regime != "rct" && *regime != "observational") {
          throw ConfigError("--regime: expected rct or observational, got '" + *regime + "'");
        }
        id = scenario_with_regime(id, *regime == "rct" ? Regime::rct : Regime::observational);
      }
      if (sim_p < kScenarioMinP) throw ConfigError("--p: scenarios need at least 9 covariates");
      if (sim_n < 1) throw ConfigError("--n: must be >= 1");
      const auto draw = draw_scenario(scenario(id), sim_n, sim_p, 0, common.seed.value_or(0));
      emit(out_path, out, [&](std::ostream& o) { write_dataset_csv(draw.train, o); });
      if (!truth_path.empty()) {
        emit(truth_path, out, [&](std::ostream& o) {
          write_columns_csv(o, {"tau", "e"}, {draw.true_tau_train, draw.true_propensity_train});
        });
      }
    } else if (bench->parsed()) {
      RunConfig cfg = common.resolve(&model_flags);
      if (!scenarios.empty()) cfg.bench.scenarios = scenarios;
      if (!settings.empty()) {
        cfg.bench.settings.clear();
        for (const auto& s : settings) cfg.bench.settings.push_back(parse_setting(s));
      }
      if (!estimators.empty()) cfg.bench.estimators = estimators;
      if (reps) cfg.bench.replications = *reps;
      if (n_test) cfg.bench.n_test = *n_test;
      if (oracle_propensity) cfg.bench.oracle_propensity = true;
      cfg.validate();
      const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
      fs::create_directories(dir);
      const BenchReport report = run_bench(cfg.bench_config());
      write_bench_csv(report, (dir / "bench.csv").string());
      write_bench_json(report, (dir / "bench.json").string());
      write_bench_plot_csv(report, (dir / "bench_plot.csv").string());
      write_bench_timings(report, (dir / "bench_timings.csv").string());
      std::size_t failed = 0;
      for (const auto& r : report.records) failed += r.ok ? 0 : 1;
      err << report.records.size() << " runs (" << failed << " failed); reports in " << dir.string() << "\n";
    } else if (importance->parsed()) {
      const ModelArchive archive = load_model(model_path);
      const FittedScbm& m = require_scbm(archive, "importance");
      const ImportanceMode im = parse_importance_mode(mode);
      const Dataset data = load_csv(data_path, treatment, outcome);
      const Dataset aligned(load_covariates(data_path, m.feature_names, m.p, excluded(treatment, outcome)),
                            data.treatment(), data.outcome(), m.feature_names);
      const ImportanceReport report = variable_importance(m, aligned, im);
      emit(out_path, out, [&](std::ostream& o) {
        o << "variable,raw,normalized\n";
        for (Eigen::Index j = 0; j < report.raw.size(); ++j) {
          const auto idx = static_cast<std::size_t>(j);
          o << csv_field(idx < report.names.size() ? report.names[idx] : "x" + std::to_string(j + 1)) << ','
            << format_double(report.raw(j)) << ',' << format_double(report.normalized(j)) << '\n';
        }
      });
      if (!json_path.empty()) write_importance_json(report, json_path);
    } else if (pdp->parsed()) {
      const ModelArchive archive = load_model(model_path);
      const FittedScbm& m = require_scbm(archive, "pdp");
      const Matrix x = load_covariates(data_path, m.feature_names, m.p, excluded(treatment, outcome));
      std::optional<Arm> a;
      if (!arm.empty()) a = parse_arm(arm);
      if (points < 2) throw ConfigError("--points: must be >= 2");
      std::vector<std::size_t> vars;
      if (variables.empty()) {
        for (std::size_t j = 0; j < m.p; ++j) vars.push_back(j);
      } else {
        for (const auto& v : variables) vars.push_back(resolve_variable(v, m));
      }
      std::vector<PartialDependence> curves;
      for (auto j : vars) curves.push_back(partial_dependence(m, x, j, default_grid(x, j, points), a));
      emit(out_path, out, [&](std::ostream& o) {
        o << "variable,target,grid,value\n";
        for (const auto& c : curves) {
          const std::string name =
              c.variable < m.feature_names.size() ? m.feature_names[c.variable] : "x" + std::to_string(c.variable + 1);
          const std::string target = !c.arm ? "tau" : (*c.arm == Arm::treated ? "mu_treated" : "mu_control");
          for (std::size_t g = 0; g < c.grid.size(); ++g) {
            o << csv_field(name) << ',' << target << ',' << format_double(c.grid[g]) << ','
              << format_double(c.values[g]) << '\n';
          }
        }
      });
    } else if (calibrate->parsed()) {
      RunConfig cfg = common.resolve(&model_flags);
      if (k) cfg.calibration.k = *k;
      if (cal_reps) cfg.calibration.replications = *cal_reps;
      if (holdout) cfg.calibration.holdout = *holdout;
      if (iptw) cfg.calibration.iptw = true;
      cfg.validate();
      const Dataset data = load_csv(data_path, treatment, outcome);
      CalibrationReport report;
      if (!model_path.empty()) {
        const ModelArchive archive = load_model(model_path);
        const FittedScbm& m = require_scbm(archive, "calibrate --model");
        const Dataset aligned(load_covariates(data_path, m.feature_names, m.p, excluded(treatment, outcome)),
                              data.treatment(), data.outcome(), m.feature_names);
        report = subgroup_calibration(m, aligned, cfg.calibration.k, cfg.calibration.iptw);
      } else {
        const std::string name = model_flags.estimator(cfg);
        if (name == "scbm" || name == "prop0" || name == "prop1") {
          ScbmConfig sc = cfg.scbm_config();
          sc.variant = parse_variant(name);
          report = subgroup_calibration(data, sc, cfg.calibration_config());
        } else {
          const RefitProtocol protocol = [&](const Dataset& train, std::uint64_t seed) {
            RunConfig c = cfg;
            c.seed = seed;
            c.threads = 1;
            auto fitted = std::make_shared<ModelArchive>(fit_estimator(train, name, c));
            PropensityConfig pc = c.scbm.propensity;
            pc.seed = derive_seed(seed, {0});
            pc.threads = 1;
            auto prop = std::make_shared<PropensityModel>(fit_propensity(train, pc));
            const double eps = std::max(c.scbm.clip_epsilon, 1e-6);
            return Predictors{[fitted](const Matrix& x) { return fitted->predict_hte(x); },
                              [prop, eps](const Matrix& x) {
                                return Vector(prop->predict(x).cwiseMax(eps).cwiseMin(1.0 - eps));
                              }};
          };
          report = subgroup_calibration(data, protocol, cfg.calibration_config());
        }
      }
      emit(out_path, out, [&](std::ostream& o) {
        o << "subgroup,mean_tau_hat,mean_ate,ate_available\n";
        for (std::size_t g = 0; g < report.k; ++g) {
          o << g + 1 << ',' << format_double(report.mean_tau_hat[g]) << ',' << format_double(report.mean_ate[g])
            << ',' << report.ate_available[g] << '\n';
        }
      });
      if (!json_path.empty()) write_calibration_json(report, json_path);
      err << "spearman " << format_double(report.spearman) << "; positive in " << report.positive_replicates << " of "
          << report.replicates.size() << " replications\n";
    } else if (config->parsed()) {
      out << run_config_to_json(common.resolve(&model_flags));
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"scbm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace scbm
