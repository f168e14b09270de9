#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scbm/core.hpp"

namespace scbm {

/// Columns partitioned into groups whose members are mutually orthogonal.
/// The penalty is applied on the standardized scale: column k is divided by
/// scale(k) before solving and coefficients are mapped back on return.
class GroupedDesign {
 public:
  GroupedDesign(Matrix columns, std::vector<std::vector<Eigen::Index>> groups,
                std::vector<bool> penalized, bool standardize = true);

  /// Treatment/control pairs (h_g 1[t=1], h_g 1[t=0]) for every column of h.
  /// Column 0 of h is taken as the constant and left unpenalized.
  static GroupedDesign arm_pairs(const Matrix& h, const Eigen::VectorXi& treatment,
                                 bool standardize = true);
  /// One group per column; column 0 unpenalized (plain lasso with intercept).
  static GroupedDesign singletons(const Matrix& h, bool standardize = true);

  Eigen::Index n() const { return columns_.rows(); }
  std::size_t group_count() const { return groups_.size(); }
  const Matrix& columns() const { return columns_; }
  const Vector& scale() const { return scale_; }
  const std::vector<std::vector<Eigen::Index>>& groups() const { return groups_; }
  const std::vector<bool>& penalized() const { return penalized_; }
  /// Labels used to stratify cross-validation folds (empty when unstratified).
  const Eigen::VectorXi& strata() const { return strata_; }
  void set_strata(Eigen::VectorXi strata);

  Matrix standardized() const;
  GroupedDesign subset(std::span<const std::size_t> rows) const;

 private:
  GroupedDesign() = default;

  Matrix columns_;
  Vector scale_;
  std::vector<std::vector<Eigen::Index>> groups_;
  std::vector<bool> penalized_;
  Eigen::VectorXi strata_;
};

struct SolverOptions {
  /// Stop when the largest coefficient change in a full sweep is below this.
  double tol = 1e-7;
  std::size_t max_iter = 10000;
  /// Record the objective after every sweep.
  bool record_objective = false;
};

struct GroupLassoSolution {
  /// Per-column coefficients on the original column scale.
  Vector beta;
  double lambda = 0.0;
  /// sum (y - X b)^2 + lambda * sum_g ||b_g|| on the standardized scale.
  double objective = 0.0;
  /// Largest KKT violation over groups divided by max(lambda, 1).
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
  std::vector<double> objective_trace;

  Vector predict(const Matrix& columns) const { return columns * beta; }
};

/// Block coordinate descent for sum (y - X b)^2 + lambda sum_g ||b_g||_2.
/// `warm_start` holds standardized-scale coefficients.
GroupLassoSolution solve(const GroupedDesign& design, const Vector& y, double lambda,
                         const SolverOptions& options = {},
                         const Vector* warm_start = nullptr);

/// Smallest lambda at which every penalized group is zero.
double lambda_max(const GroupedDesign& design, const Vector& y);

struct PathConfig {
  std::size_t n_lambda = 100;
  double lambda_min_ratio = 1e-3;
  std::size_t folds = 10;
  SolverOptions solver;
  std::size_t threads = 1;

  void validate() const;
};

struct CvCurve {
  std::vector<double> lambdas;
  std::vector<double> mean_error;
  std::vector<double> standard_error;
  std::size_t best = 0;
  std::size_t one_se = 0;
};

struct PathFit {
  double lambda = 0.0;
  GroupLassoSolution solution;
  CvCurve curve;
};

/// Log-spaced path from lambda_max down with warm starts, K-fold CV on
/// squared prediction error, and a full-data fit at the CV-minimizing lambda.
PathFit fit_path_cv(const GroupedDesign& design, const Vector& y, const PathConfig& config,
                    std::uint64_t seed);

/// Fold labels 0..folds-1, dealt round-robin within each stratum after a
/// seeded shuffle.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds,
                                      const Eigen::VectorXi& strata, std::uint64_t seed);

struct RidgeFit {
  /// Intercept first (unpenalized), then one weight per remaining column.
  Vector beta;
  double strength = 0.0;
  CvCurve curve;
};

/// Ridge regression on columns 1.. of h (column 0 is the unpenalized
/// constant), with the strength chosen by K-fold CV on a log grid.
RidgeFit fit_ridge_cv(const Matrix& h, const Vector& y, std::size_t folds, std::uint64_t seed,
                      std::size_t n_strength = 30);
/// Ridge at a fixed strength.
Vector ridge(const Matrix& h, const Vector& y, double strength);

}  // namespace scbm
