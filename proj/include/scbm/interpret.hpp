#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scbm/scbm.hpp"

namespace scbm {

enum class ImportanceMode { zero_groups, refit };

std::string to_string(ImportanceMode mode);
ImportanceMode parse_importance_mode(const std::string& name);

struct ImportanceReport {
  ImportanceMode mode = ImportanceMode::zero_groups;
  /// Squared error of the own-arm outcome predictions with every group kept.
  double baseline_loss = 0.0;
  /// Loss without variable j minus the baseline; may be negative in refit mode.
  Vector raw;
  /// Raw values floored at zero and scaled so the largest is 100.
  Vector normalized;
  std::vector<std::string> names;
};

/// 100 * max(raw, 0) / max(raw); all zeros when no raw value is positive.
Vector normalize_importance(const Vector& raw);

/// Removal importance of each covariate. Needs per-arm coefficients, so
/// prop0/prop1 models throw UnsupportedOperation.
ImportanceReport variable_importance(const FittedScbm& model, const Dataset& data,
                                     ImportanceMode mode = ImportanceMode::zero_groups);

struct PartialDependence {
  std::size_t variable = 0;
  std::vector<double> grid;
  std::vector<double> values;
  /// Set when the curve is of an arm's outcome model instead of the effect.
  std::optional<Arm> arm;
};

/// {0,1} for a binary column, else up to `points` distinct empirical quantiles.
std::vector<double> default_grid(const Matrix& x, std::size_t j, std::size_t points = 25);

/// Mean prediction over the rows of x with column j overwritten by each grid
/// value. The grid must be non-empty; it is sorted and deduplicated.
PartialDependence partial_dependence(const FittedScbm& model, const Matrix& x, std::size_t j,
                                     std::optional<std::vector<double>> grid = std::nullopt,
                                     std::optional<Arm> arm = std::nullopt);

struct CalibrationConfig {
  std::size_t k = 9;
  std::size_t replications = 100;
  /// Share of rows held out for evaluation in each replication.
  double holdout = 0.5;
  std::uint64_t seed = 0;
  /// Weight subgroup arm means by inverse propensity.
  bool iptw = false;
  std::size_t threads = 1;

  void validate() const;
};

struct Subgroup {
  double mean_tau_hat = 0.0;
  /// Missing when the subgroup lacks one arm.
  std::optional<double> ate;
  std::size_t treated = 0;
  std::size_t control = 0;
};

struct CalibrationReplicate {
  std::vector<Subgroup> groups;
  /// Rank correlation of mean estimate and ATE over complete subgroups; NaN
  /// with fewer than two.
  double spearman = 0.0;
};

struct CalibrationReport {
  std::size_t k = 0;
  std::vector<CalibrationReplicate> replicates;
  /// Replication averages; the ATE average skips missing values.
  std::vector<double> mean_tau_hat;
  std::vector<double> mean_ate;
  std::vector<std::size_t> ate_available;
  /// Rank correlation of the two averaged curves.
  double spearman = 0.0;
  std::size_t positive_replicates = 0;
};

/// One replication on already-predicted rows: sort by tau_hat, cut into k
/// contiguous slices of equal size (within one), compare per-slice mean
/// estimate and arm-mean difference. `e` enables inverse-propensity weights.
CalibrationReplicate calibrate_once(const Vector& tau_hat, const Dataset& data, std::size_t k,
                                    const Vector* e = nullptr);

/// Fits on a training split and returns effect and propensity predictors.
struct Predictors {
  std::function<Vector(const Matrix&)> tau;
  std::function<Vector(const Matrix&)> propensity;
};
using RefitProtocol = std::function<Predictors(const Dataset& train, std::uint64_t seed)>;

/// Repeated split / fit / calibrate.
CalibrationReport subgroup_calibration(const Dataset& data, const RefitProtocol& fit,
                                       const CalibrationConfig& config);
/// Refit protocol built on fit_model with the given configuration.
CalibrationReport subgroup_calibration(const Dataset& data, const ScbmConfig& model_config,
                                       const CalibrationConfig& config);
/// A fixed model evaluated once on all rows of data.
CalibrationReport subgroup_calibration(const FittedScbm& model, const Dataset& data,
                                       std::size_t k, bool iptw = false);

void write_importance_csv(const ImportanceReport& report, const std::string& path);
void write_importance_json(const ImportanceReport& report, const std::string& path);
/// Long format: variable, grid value, value.
void write_pdp_csv(const std::vector<PartialDependence>& curves, const std::string& path);
void write_calibration_csv(const CalibrationReport& report, const std::string& path);
void write_calibration_json(const CalibrationReport& report, const std::string& path);

}  // namespace scbm
