#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/core.hpp"
#include "scbm/group_lasso.hpp"
#include "scbm/mars_forward.hpp"
#include "scbm/propensity.hpp"

namespace scbm {

enum class Variant { scbm, prop0, prop1 };

std::string to_string(Variant v);
/// Parses "scbm", "prop0" or "prop1"; throws ConfigError otherwise.
Variant parse_variant(const std::string& name);

struct ScbmConfig {
  /// Bootstrap replicates used to grow candidate basis functions.
  std::size_t b = 20;
  ForwardConfig forward;
  PropensityConfig propensity;
  double clip_epsilon = 0.01;
  PathConfig lasso;
  /// Skip cross-validation and use this penalty directly.
  std::optional<double> fixed_lambda;
  Variant variant = Variant::scbm;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Every replicate sees the training rows unchanged instead of a resample.
  bool identity_resample = false;

  void validate() const;
};

struct FitDiagnostics {
  double lambda = 0.0;
  CvCurve curve;
  std::size_t active_groups = 0;
  /// Replicates whose forward pass accepted no pair.
  std::size_t empty_replicates = 0;
  /// Pooled basis functions dropped because they vanish on one arm.
  std::size_t dropped_basis = 0;
  /// Column scale factors of the grouped design (treated, control per group).
  Vector column_scale;
  std::vector<std::string> warnings;
};

/// Fitted shared-basis model (or a transformed-outcome reference variant).
/// For the scbm variant coef_treat/coef_control hold the per-arm
/// coefficients of each basis function; prop0/prop1 use `weights` directly
/// as an effect model.
class FittedScbm {
 public:
  Variant variant = Variant::scbm;
  std::size_t p = 0;
  std::vector<std::string> feature_names;
  std::vector<BasisFunction> basis;
  /// Replicate that first produced each basis function.
  std::vector<std::size_t> provenance;
  Vector coef_treat;
  Vector coef_control;
  Vector weights;
  PropensityModel propensity;
  ScbmConfig config;
  FitDiagnostics diagnostics;

  double predict_hte(std::span<const double> x) const;
  Vector predict_hte(const Matrix& x) const;
  /// Arm-specific conditional mean; scbm variant only.
  double predict_outcome(std::span<const double> x, Arm arm) const;
  Vector predict_outcome(const Matrix& x, Arm arm) const;

  /// Per-basis effect coefficients: coef_treat - coef_control or weights.
  Vector effect_coefficients() const;
  void check_consistent() const;

 private:
  void check_dimension(std::size_t got) const;
};

/// Full pipeline: propensity, transformed outcome, bootstrap forward passes
/// on the transformed outcome, pooled basis, then a grouped fit of the
/// observed outcome with treatment/control coefficient pairs per basis.
FittedScbm fit_scbm(const Dataset& data, const ScbmConfig& config);

/// prop0: per-replicate lasso of the transformed outcome, averaged.
/// prop1: pooled basis refit jointly by ridge of the transformed outcome.
FittedScbm fit_to_bagging_mars(const Dataset& data, const ScbmConfig& config);

/// Dispatches on config.variant.
FittedScbm fit_model(const Dataset& data, const ScbmConfig& config);

/// Bootstrap basis generation shared by every variant; one entry per replicate.
std::vector<std::vector<BasisFunction>> grow_replicate_bases(const Matrix& x, const Vector& z,
                                                             const ScbmConfig& config);

}  // namespace scbm
