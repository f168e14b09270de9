#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scbm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexList = std::vector<std::size_t>;

enum class Arm : std::uint8_t { control = 0, treated = 1 };

/// Covariates, binary treatment and continuous outcome for n individuals.
///
/// Construction validates shapes, the {0,1} coding of the treatment and the
/// finiteness of covariates and outcome; a constructed Dataset is immutable.
class Dataset {
 public:
  Dataset(Matrix covariates, Eigen::VectorXi treatment, Vector outcome,
          std::vector<std::string> feature_names = {});

  std::size_t n() const noexcept { return static_cast<std::size_t>(covariates_.rows()); }
  std::size_t p() const noexcept { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const noexcept { return covariates_; }
  const Eigen::VectorXi& treatment() const noexcept { return treatment_; }
  const Vector& outcome() const noexcept { return outcome_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }

  bool treated(std::size_t i) const { return treatment_(static_cast<Eigen::Index>(i)) == 1; }
  std::size_t treated_count() const noexcept { return treated_count_; }
  std::size_t control_count() const noexcept { return n() - treated_count_; }

  /// Throws FitError unless both arms are non-empty.
  void require_both_arms() const;

  /// Rows in the given order (repeats allowed, as in a bootstrap resample).
  Dataset subset(std::span<const std::size_t> rows) const;

  /// Same treatment and outcome with replaced covariates of identical shape.
  Dataset with_covariates(Matrix covariates) const;

  /// Same covariates and treatment with a replaced outcome vector.
  Dataset with_outcome(Vector outcome) const;

 private:
  Matrix covariates_;
  Eigen::VectorXi treatment_;
  Vector outcome_;
  std::vector<std::string> feature_names_;
  std::size_t treated_count_ = 0;
};

enum class Sign : std::int8_t { negative = -1, positive = 1 };

/// One factor [s (x_j - c)]_+ of a basis function.
struct HingeTerm {
  std::size_t variable = 0;
  Sign sign = Sign::positive;
  double knot = 0.0;

  friend bool operator==(const HingeTerm&, const HingeTerm&) = default;
  friend std::partial_ordering operator<=>(const HingeTerm& a, const HingeTerm& b) {
    if (auto c = a.variable <=> b.variable; c != 0) return c;
    if (auto c = a.sign <=> b.sign; c != 0) return c;
    return a.knot <=> b.knot;
  }
};

inline double hinge_value(Sign sign, double knot, double x) noexcept {
  const double d = sign == Sign::positive ? x - knot : knot - x;
  return d > 0.0 ? d : 0.0;
}

/// max(0, x[j] - c) for a positive sign, max(0, c - x[j]) for a negative one.
double hinge_eval(const HingeTerm& term, std::span<const double> x);

/// Product of hinge terms; the empty product is the constant basis.
///
/// Terms are kept in canonical (variable, sign, knot) order, so two basis
/// functions built from the same multiset of terms compare equal. A variable
/// may appear in at most one term.
class BasisFunction {
 public:
  BasisFunction() = default;
  explicit BasisFunction(std::vector<HingeTerm> terms);

  static BasisFunction constant() { return {}; }

  const std::vector<HingeTerm>& terms() const noexcept { return terms_; }
  std::size_t degree() const noexcept { return terms_.size(); }
  bool is_constant() const noexcept { return terms_.empty(); }
  bool uses_variable(std::size_t j) const noexcept;
  /// Largest variable index referenced plus one (0 for the constant).
  std::size_t min_dimension() const noexcept;

  /// This basis multiplied by one more hinge on a variable it does not use.
  BasisFunction times(const HingeTerm& term) const;

  double eval(std::span<const double> x) const;
  /// Evaluation at row i of a covariate matrix.
  double eval_row(const Matrix& x, Eigen::Index i) const;

  friend bool operator==(const BasisFunction& a, const BasisFunction& b) {
    return a.terms_ == b.terms_;
  }
  friend std::partial_ordering operator<=>(const BasisFunction& a, const BasisFunction& b);

 private:
  std::vector<HingeTerm> terms_;
};

double basis_eval(const BasisFunction& basis, std::span<const double> x);
bool basis_equal(const BasisFunction& a, const BasisFunction& b);

/// basis evaluated at every row of `x`.
Vector design_column(const BasisFunction& basis, const Matrix& x);
Vector design_column(const BasisFunction& basis, const Dataset& data);

/// Deduplicated union of basis functions. The constant function is always
/// present exactly once, at index 0.
class BasisCollection {
 public:
  BasisCollection();

  /// Adds `basis` unless an equal one is present. Returns true if inserted.
  bool add(const BasisFunction& basis, std::size_t replicate);

  std::size_t size() const noexcept { return functions_.size(); }
  const BasisFunction& operator[](std::size_t g) const { return functions_[g]; }
  const std::vector<BasisFunction>& functions() const noexcept { return functions_; }
  /// Replicate index that first produced each function (0 for the constant).
  const std::vector<std::size_t>& provenance() const noexcept { return provenance_; }
  std::optional<std::size_t> find(const BasisFunction& basis) const;

 private:
  std::vector<BasisFunction> functions_;
  std::vector<std::size_t> provenance_;
  std::vector<std::size_t> sorted_;  // indices into functions_, ordered by value
};

/// Full design matrix with one column per basis function.
Matrix design_matrix(std::span<const BasisFunction> basis, const Matrix& x);

}  // namespace scbm
