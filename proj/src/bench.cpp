#include "scbm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

std::string setting_label(const BenchSetting& s) {
  return "n" + std::to_string(s.n) + "_p" + std::to_string(s.p);
}

PropensityConfig known_half() {
  PropensityConfig pc;
  pc.kind = PropensityKind::known_constant;
  pc.constant = 0.5;
  return pc;
}

Vector true_propensity(const Scenario& sc, const Matrix& x) {
  Vector e(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    e(i) = sc.propensity(row);
  }
  return e;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names{"scbm", "prop0", "prop1", "cm", "bcm"};
  return names;
}

void BenchConfig::validate() const {
  if (scenarios.empty()) throw ConfigError("bench.scenarios must not be empty");
  for (int s : scenarios) scenario(s);
  if (settings.empty()) throw ConfigError("bench.settings must not be empty");
  for (const auto& s : settings) {
    if (s.n < 2) throw ConfigError("bench.settings: n must be >= 2");
    if (s.p < kScenarioMinP) throw ConfigError("bench.settings: p must be >= 9");
  }
  if (estimators.empty()) throw ConfigError("bench.estimators must not be empty");
  for (const auto& e : estimators) {
    const auto& k = known_estimators();
    if (std::find(k.begin(), k.end(), e) == k.end()) {
      throw ConfigError("bench.estimators: unknown estimator '" + e + "'");
    }
  }
  if (replications < 1) throw ConfigError("bench.replications must be >= 1");
  if (n_test < 1) throw ConfigError("bench.n_test must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  scbm.validate();
  cm.validate();
  bcm.validate();
}

const BenchSummary& BenchReport::summary(int scenario, const BenchSetting& setting,
                                         const std::string& estimator,
                                         const std::string& metric) const {
  for (const auto& s : summaries) {
    if (s.scenario == scenario && s.setting == setting && s.estimator == estimator && s.metric == metric) {
      return s;
    }
  }
  throw InvalidInput("no summary for scenario " + std::to_string(scenario) + ", " + estimator);
}

std::uint64_t bench_draw_seed(std::uint64_t master, int scenario, std::size_t setting,
                              std::size_t replication) {
  return derive_seed(master, {static_cast<std::uint64_t>(scenario), setting, replication});
}

Vector run_estimator(const std::string& name, const SimDraw& draw, const Scenario& sc,
                     const BenchConfig& config, std::uint64_t seed) {
  const PropensityConfig prop = sc.regime == Regime::rct ? known_half() : config.scbm.propensity;
  if (name == "scbm" || name == "prop0" || name == "prop1") {
    ScbmConfig c = config.scbm;
    c.variant = parse_variant(name);
    c.seed = seed;
    c.threads = 1;
    c.propensity = prop;
    return fit_model(draw.train, c).predict_hte(draw.test_covariates);
  }
  if (name == "cm") return fit_causal_mars(draw.train, config.cm, seed).predict_hte(draw.test_covariates);
  if (name == "bcm") {
    BcmConfig c = config.bcm;
    c.seed = seed;
    c.threads = 1;
    if (config.oracle_propensity) {
      const auto fit = fit_bcm(draw.train, c, draw.true_propensity_train);
      return fit.predict_hte(draw.test_covariates, true_propensity(sc, draw.test_covariates));
    }
    // randomized draws get the known score, i.e. a single stratum
    PropensityConfig pc = prop;
    pc.seed = derive_seed(seed, {0});
    pc.threads = 1;
    return fit_bcm(draw.train, c, fit_propensity(draw.train, pc)).predict_hte(draw.test_covariates);
  }
  throw ConfigError("unknown estimator '" + name + "'");
}

BenchReport run_bench(const BenchConfig& config) {
  config.validate();
  BenchReport report;
  report.config = config;
  const std::size_t n_est = config.estimators.size();
  const std::size_t n_rep = config.replications;
  const std::size_t n_set = config.settings.size();
  const std::size_t draws = config.scenarios.size() * n_set * n_rep;
  report.records.resize(draws * n_est);

  // one job per draw; its estimators share the simulated data
  parallel_for(draws, config.threads, [&](std::size_t job) {
    const std::size_t rep = job % n_rep;
    const std::size_t set = (job / n_rep) % n_set;
    const int id = config.scenarios[job / (n_rep * n_set)];
    const auto& sc = scenario(id);
    const auto& setting = config.settings[set];
    const std::uint64_t draw_seed = bench_draw_seed(config.seed, id, set, rep);
    const SimDraw draw = draw_scenario(sc, setting.n, setting.p, config.n_test, draw_seed);
    for (std::size_t e = 0; e < n_est; ++e) {
      auto& r = report.records[job * n_est + e];
      r.scenario = id;
      r.setting = setting;
      r.estimator = config.estimators[e];
      r.replication = rep;
      r.seed = derive_seed(draw_seed, {name_hash(r.estimator)});
      const auto start = std::chrono::steady_clock::now();
      try {
        const Vector tau_hat = run_estimator(r.estimator, draw, sc, config, r.seed);
        if (!tau_hat.allFinite()) throw FitError("non-finite effect predictions");
        r.mse = mse(tau_hat, draw.true_tau_test);
        r.abs_bias = abs_bias(tau_hat, draw.true_tau_test);
      } catch (const std::exception& ex) {
        r.ok = false;
        r.error = ex.what();
        r.mse = r.abs_bias = std::numeric_limits<double>::quiet_NaN();
      }
      r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  });

  for (int id : config.scenarios) {
    for (const auto& setting : config.settings) {
      for (const auto& est : config.estimators) {
        for (const std::string metric : {"mse", "abs_bias"}) {
          BenchSummary s{id, setting, est, metric};
          std::vector<double> v;
          for (const auto& r : report.records) {
            if (r.scenario != id || !(r.setting == setting) || r.estimator != est) continue;
            if (!r.ok) {
              ++s.failed;
              continue;
            }
            v.push_back(metric == "mse" ? r.mse : r.abs_bias);
          }
          s.completed = v.size();
          if (v.empty()) {
            s.mean = s.median = s.q1 = s.q3 = std::numeric_limits<double>::quiet_NaN();
          } else {
            s.mean = mean(v);
            s.median = quantile(v, 0.5);
            s.q1 = quantile(v, 0.25);
            s.q3 = quantile(v, 0.75);
          }
          report.summaries.push_back(s);
        }
      }
    }
  }
  return report;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "scenario,n,p,estimator,replication,seed,status,mse,abs_bias,error\n";
  for (const auto& r : report.records) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << r.scenario << ',' << r.setting.n << ',' << r.setting.p << ',' << r.estimator << ','
        << r.replication << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
        << (r.ok ? format_double(r.mse) : "") << ',' << (r.ok ? format_double(r.abs_bias) : "")
        << ",\"" << err << "\"\n";
  }
}

void write_bench_json(const BenchReport& report, const std::string& path) {
  const auto& c = report.config;
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["target"] = "true treatment effect on an independent test set";
  meta["seed"] = c.seed;
  meta["replications"] = c.replications;
  meta["n_test"] = c.n_test;
  meta["scenarios"] = c.scenarios;
  meta["estimators"] = c.estimators;
  meta["b"] = c.scbm.b;
  meta["bcm_q"] = c.bcm.q;
  meta["oracle_propensity"] = c.oracle_propensity;
  meta["m_max"] = c.scbm.forward.m_max;
  meta["k_max"] = c.scbm.forward.k_max;
  nlohmann::json settings = nlohmann::json::array();
  for (const auto& s : c.settings) settings.push_back({{"n", s.n}, {"p", s.p}});
  meta["settings"] = settings;
  meta["grid"] = c.replications >= 250 && c.settings.size() >= 3 ? "full" : "scaled";

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    rows.push_back({{"scenario", s.scenario},
                    {"n", s.setting.n},
                    {"p", s.setting.p},
                    {"estimator", s.estimator},
                    {"metric", s.metric},
                    {"completed", s.completed},
                    {"failed", s.failed},
                    {"mean", number_or_null(s.mean)},
                    {"median", number_or_null(s.median)},
                    {"q1", number_or_null(s.q1)},
                    {"q3", number_or_null(s.q3)}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : report.records) {
    if (r.ok) continue;
    failures.push_back({{"scenario", r.scenario},
                        {"n", r.setting.n},
                        {"p", r.setting.p},
                        {"estimator", r.estimator},
                        {"replication", r.replication},
                        {"error", r.error}});
  }
  auto out = open_out(path);
  out << nlohmann::json{{"metadata", meta}, {"summaries", rows}, {"failures", failures}}.dump(2) << '\n';
}

void write_bench_plot_csv(const BenchReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "estimator,scenario,setting,metric,replication,value\n";
  for (const auto& r : report.records) {
    if (!r.ok) continue;
    const auto label = setting_label(r.setting);
    out << r.estimator << ',' << r.scenario << ',' << label << ",mse," << r.replication << ','
        << format_double(r.mse) << '\n';
    out << r.estimator << ',' << r.scenario << ',' << label << ",abs_bias," << r.replication << ','
        << format_double(r.abs_bias) << '\n';
  }
}

void write_bench_timings(const BenchReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "scenario,n,p,estimator,replication,wall_time_s\n";
  for (const auto& r : report.records) {
    out << r.scenario << ',' << r.setting.n << ',' << r.setting.p << ',' << r.estimator << ','
        << r.replication << ',' << format_double(r.wall_time) << '\n';
  }
}

}  // namespace scbm
