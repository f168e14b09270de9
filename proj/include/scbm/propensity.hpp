#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "scbm/core.hpp"

namespace scbm {

enum class PropensityKind { known_constant, logistic, random_forest };

struct ForestConfig {
  std::size_t trees = 200;
  std::size_t max_depth = 6;
  std::size_t min_leaf = 10;
  /// Features tried per split; 0 means floor(sqrt(p)).
  std::size_t features_per_split = 0;
  bool bootstrap = true;
};

struct PropensityConfig {
  PropensityKind kind = PropensityKind::random_forest;
  double constant = 0.5;
  double logistic_ridge = 1e-4;
  double logistic_tolerance = 1e-8;
  std::size_t logistic_max_iter = 100;
  ForestConfig forest;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Binary classification tree stored as a flat node array; node 0 is the root.
struct ProbabilityTree {
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // x <= threshold goes left
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;  // treated fraction among the node's training rows
  };
  std::vector<Node> nodes;

  double predict(const Matrix& x, Eigen::Index row) const;
};

struct ConstantPropensity {
  double value = 0.5;
};

struct LogisticPropensity {
  double intercept = 0.0;
  Vector coefficients;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

struct ForestPropensity {
  ForestConfig config;
  std::uint64_t seed = 0;
  std::vector<ProbabilityTree> trees;
};

/// P(t = 1 | x). Deterministic given the fitting seed; prediction is read-only.
class PropensityModel {
 public:
  using Parameters = std::variant<ConstantPropensity, LogisticPropensity, ForestPropensity>;

  PropensityModel() = default;
  explicit PropensityModel(Parameters params) : params_(std::move(params)) {}

  PropensityKind kind() const noexcept;
  const Parameters& parameters() const noexcept { return params_; }

  double predict(const Matrix& x, Eigen::Index row) const;
  Vector predict(const Matrix& x) const;

 private:
  Parameters params_{ConstantPropensity{}};
};

PropensityModel fit_propensity(const Dataset& data, const PropensityConfig& config);

struct TransformedOutcome {
  Vector z;
  double clip_epsilon = 0.0;
  Vector propensity_used;
};

/// Inverse-probability transformed outcome: y/e for treated rows and
/// -y/(1-e) for control rows, with e clipped into [eps, 1-eps].
/// eps = 0 disables clipping and then requires every e strictly inside (0,1).
TransformedOutcome transform_outcome(const Dataset& data, const Vector& e_hat, double clip_epsilon);

}  // namespace scbm
