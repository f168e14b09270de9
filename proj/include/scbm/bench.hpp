#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scbm/baselines.hpp"
#include "scbm/scbm.hpp"
#include "scbm/simbench.hpp"

namespace scbm {

struct BenchSetting {
  std::size_t n = 200;
  std::size_t p = 50;

  friend bool operator==(const BenchSetting&, const BenchSetting&) = default;
};

/// Estimators understood by run_bench: scbm, prop0, prop1, cm, bcm.
const std::vector<std::string>& known_estimators();

struct BenchConfig {
  std::vector<int> scenarios{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<BenchSetting> settings{{200, 50}};
  std::vector<std::string> estimators{"scbm", "prop0", "prop1", "cm", "bcm"};
  std::size_t replications = 20;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Shared by the scbm, prop0 and prop1 estimators (variant, seed and
  /// threads are overridden per job). Its propensity settings are used for
  /// observational scenarios, by bcm as well; randomized ones use the known
  /// value 1/2.
  ScbmConfig scbm;
  /// bcm strata from the true propensity instead of an estimate from
  /// scbm.propensity.
  bool oracle_propensity = false;
  /// Forward-pass settings of cm; bcm uses bcm.forward.
  ForwardConfig cm;
  BcmConfig bcm;

  void validate() const;
};

struct BenchRecord {
  int scenario = 0;
  BenchSetting setting;
  std::string estimator;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double mse = 0.0;
  double abs_bias = 0.0;
  double wall_time = 0.0;
};

struct BenchSummary {
  int scenario = 0;
  BenchSetting setting;
  std::string estimator;
  std::string metric;
  std::size_t completed = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

struct BenchReport {
  BenchConfig config;
  /// Ordered by scenario, setting, replication, estimator.
  std::vector<BenchRecord> records;
  std::vector<BenchSummary> summaries;

  /// Summary for one cell and metric; throws InvalidInput when absent.
  const BenchSummary& summary(int scenario, const BenchSetting& setting,
                              const std::string& estimator, const std::string& metric) const;
};

/// Seed of the simulated draw for one (scenario, setting, replication) cell.
std::uint64_t bench_draw_seed(std::uint64_t master, int scenario, std::size_t setting,
                              std::size_t replication);

/// Fits one estimator on a draw and predicts effects at the test covariates.
Vector run_estimator(const std::string& name, const SimDraw& draw, const Scenario& sc,
                     const BenchConfig& config, std::uint64_t seed);

BenchReport run_bench(const BenchConfig& config);

/// One row per record. Wall times are left out so reports stay reproducible.
void write_bench_csv(const BenchReport& report, const std::string& path);
/// Aggregates plus run metadata.
void write_bench_json(const BenchReport& report, const std::string& path);
/// Long format: estimator, scenario, setting, metric, replication, value.
void write_bench_plot_csv(const BenchReport& report, const std::string& path);
void write_bench_timings(const BenchReport& report, const std::string& path);

}  // namespace scbm
