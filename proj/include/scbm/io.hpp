#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scbm/baselines.hpp"
#include "scbm/bench.hpp"
#include "scbm/interpret.hpp"
#include "scbm/scbm.hpp"

namespace scbm {

/// Header plus raw cells of an RFC-4180 style file (quoted fields may hold
/// commas, doubled quotes and newlines; CRLF and a UTF-8 BOM are accepted).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::string& path);

/// Dataset with every column other than the two named ones as covariates,
/// in file order and with their header names.
Dataset load_csv(const std::string& path, const std::string& treatment_column,
                 const std::string& outcome_column);
Dataset dataset_from_table(const CsvTable& table, const std::string& treatment_column,
                           const std::string& outcome_column);

/// Covariates for prediction. Columns are matched by name when every name in
/// `feature_names` is present; otherwise the columns left after dropping the
/// `ignore` names are used in order and must number exactly p.
Matrix load_covariates(const std::string& path, const std::vector<std::string>& feature_names,
                       std::size_t p, const std::vector<std::string>& ignore = {});
Matrix covariates_from_table(const CsvTable& table, const std::vector<std::string>& feature_names,
                             std::size_t p, const std::vector<std::string>& ignore = {});

/// Quotes a field when it holds a comma, quote or line break.
std::string csv_field(const std::string& s);

/// Covariates, then treatment and outcome columns.
void write_dataset_csv(const Dataset& data, std::ostream& out, const std::string& treatment_column = "t",
                       const std::string& outcome_column = "y");
/// Equal-length columns under the given header.
void write_columns_csv(std::ostream& out, const std::vector<std::string>& header,
                       const std::vector<Vector>& columns);

inline constexpr int kArchiveFormatVersion = 1;

using FittedModel = std::variant<FittedScbm, CausalMarsFit, StratifiedBcmFit>;

/// A fitted model of any supported type together with its schema version.
struct ModelArchive {
  int format_version = kArchiveFormatVersion;
  FittedModel model;

  /// "scbm" (with variants scbm/prop0/prop1), "causal_mars" or "bcm".
  std::string model_type() const;
  std::size_t p() const;
  const std::vector<std::string>& feature_names() const;
  Vector predict_hte(const Matrix& x) const;
  /// Arm-specific outcome; bcm and the prop variants throw UnsupportedOperation.
  Vector predict_outcome(const Matrix& x, Arm arm) const;
};

std::string archive_to_json(const ModelArchive& archive);
/// Throws SchemaError on malformed or truncated input, VersionError when the
/// format version differs. Unknown fields are ignored.
ModelArchive archive_from_json(std::string_view text);
void save_model(const ModelArchive& archive, const std::string& path);
ModelArchive load_model(const std::string& path);

/// Every tunable of a run. `seed` and `threads` apply to every module; the
/// bench section holds only the grid, its estimators use scbm/cm/bcm.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output_dir = ".";
  ScbmConfig scbm;
  ForwardConfig cm;
  BcmConfig bcm;
  BenchConfig bench;
  CalibrationConfig calibration;

  /// Copies of the module configs with the shared seed and worker count.
  ScbmConfig scbm_config() const;
  ForwardConfig cm_config() const { return cm; }
  BcmConfig bcm_config() const;
  BenchConfig bench_config() const;
  CalibrationConfig calibration_config() const;

  /// Throws ConfigError with the section name prefixed to the field.
  void validate() const;
};

/// Defaults overridden by SCBM_THREADS and SCBM_OUTPUT_DIR when set.
RunConfig default_run_config();
/// Applies the fields present in a JSON object on top of `base`. Unknown keys
/// and ill-typed values throw ConfigError naming the field path.
RunConfig run_config_from_json(std::string_view text, RunConfig base = default_run_config());
RunConfig load_run_config(const std::string& path, RunConfig base = default_run_config());
std::string run_config_to_json(const RunConfig& config);

}  // namespace scbm
