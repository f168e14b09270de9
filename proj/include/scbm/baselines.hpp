#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scbm/core.hpp"
#include "scbm/mars_forward.hpp"
#include "scbm/propensity.hpp"

namespace scbm {

/// Causal MARS: terms are chosen by how much arm-specific coefficients
/// improve on a shared coefficient, and enter both arm models.
struct CausalMarsFit {
  std::size_t p = 0;
  std::vector<std::string> feature_names;
  std::vector<BasisFunction> basis;
  Vector coef_treat;
  Vector coef_control;
  /// Per-arm model RSS before and after each accepted pair.
  std::vector<double> rss_trace;
  std::vector<AcceptedSplit> splits;
  ForwardConfig config;

  Vector predict_hte(const Matrix& x) const;
  Vector predict_outcome(const Matrix& x, Arm arm) const;
};

CausalMarsFit fit_causal_mars(const Dataset& data, const ForwardConfig& config,
                              std::uint64_t seed = 0);

struct BcmConfig {
  ForwardConfig forward;
  std::size_t b = 20;
  /// Number of equal-frequency propensity strata.
  std::size_t q = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool identity_resample = false;

  void validate() const;
};

struct BcmReplicate {
  std::vector<BasisFunction> basis;
  /// Merged group of each of the q strata for this replicate.
  std::vector<std::size_t> group_of_stratum;
  /// Coefficients, one column per merged group.
  Matrix coef_treat;
  Matrix coef_control;
};

/// Bagged causal MARS with propensity-score stratification.
struct StratifiedBcmFit {
  std::size_t p = 0;
  std::vector<std::string> feature_names;
  std::size_t q = 1;
  /// Interior stratum edges (q - 1 values, non-decreasing).
  std::vector<double> edges;
  std::vector<BcmReplicate> replicates;
  PropensityModel propensity;
  /// Strata merged into a neighbor because a resample lost one arm there.
  std::size_t merged_strata = 0;
  std::vector<std::string> warnings;
  BcmConfig config;

  std::size_t stratum_of(double e) const;
  /// Effects with strata located by the stored propensity model.
  Vector predict_hte(const Matrix& x) const;
  /// Effects with caller-supplied propensities for locating strata.
  Vector predict_hte(const Matrix& x, const Vector& e) const;
  /// One replicate's stratum-local effects.
  Vector predict_replicate(std::size_t b, const Matrix& x, const Vector& e) const;
};

StratifiedBcmFit fit_bcm(const Dataset& data, const BcmConfig& config,
                         const PropensityModel& propensity);
/// Strata built from caller-supplied training propensities. The stored
/// propensity model is left at its default, so predict with explicit e.
StratifiedBcmFit fit_bcm(const Dataset& data, const BcmConfig& config, const Vector& e_train);

}  // namespace scbm
