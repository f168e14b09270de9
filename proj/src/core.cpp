#include "scbm/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scbm/error.hpp"

namespace scbm {

Dataset::Dataset(Matrix covariates, Eigen::VectorXi treatment, Vector outcome,
                 std::vector<std::string> feature_names)
    : covariates_(std::move(covariates)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      feature_names_(std::move(feature_names)) {
  if (covariates_.rows() < 1 || covariates_.cols() < 1) {
    throw InvalidInput("dataset needs at least one row and one covariate");
  }
  if (treatment_.size() != covariates_.rows() || outcome_.size() != covariates_.rows()) {
    std::ostringstream msg;
    msg << "dataset size mismatch: covariates have " << covariates_.rows() << " rows, treatment "
        << treatment_.size() << ", outcome " << outcome_.size();
    throw InvalidInput(msg.str());
  }
  if (!feature_names_.empty() && feature_names_.size() != p()) {
    throw InvalidInput("feature_names must have one entry per covariate");
  }
  if (feature_names_.empty()) {
    feature_names_.reserve(p());
    for (std::size_t j = 0; j < p(); ++j) feature_names_.push_back("x" + std::to_string(j + 1));
  }
  for (Eigen::Index i = 0; i < treatment_.size(); ++i) {
    const int t = treatment_(i);
    if (t != 0 && t != 1) {
      throw InvalidInput("treatment must be 0 or 1 (row " + std::to_string(i + 1) + ")");
    }
    treated_count_ += static_cast<std::size_t>(t);
    if (!std::isfinite(outcome_(i))) {
      throw InvalidInput("non-finite outcome at row " + std::to_string(i + 1));
    }
  }
  if (!covariates_.allFinite()) {
    for (Eigen::Index j = 0; j < covariates_.cols(); ++j) {
      for (Eigen::Index i = 0; i < covariates_.rows(); ++i) {
        if (!std::isfinite(covariates_(i, j))) {
          throw InvalidInput("non-finite covariate at row " + std::to_string(i + 1) + ", column " +
                             feature_names_[static_cast<std::size_t>(j)]);
        }
      }
    }
  }
}

void Dataset::require_both_arms() const {
  if (treated_count_ == 0 || treated_count_ == n()) {
    throw FitError("both treatment arms must be non-empty (treated " +
                   std::to_string(treated_count_) + " of " + std::to_string(n()) + ")");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix x(m, covariates_.cols());
  Eigen::VectorXi t(m);
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    if (i >= covariates_.rows()) throw InvalidInput("subset row index out of range");
    x.row(r) = covariates_.row(i);
    t(r) = treatment_(i);
    y(r) = outcome_(i);
  }
  return Dataset(std::move(x), std::move(t), std::move(y), feature_names_);
}

Dataset Dataset::with_covariates(Matrix covariates) const {
  if (covariates.rows() != covariates_.rows() || covariates.cols() != covariates_.cols()) {
    throw InvalidInput("replacement covariates must keep the dataset shape");
  }
  return Dataset(std::move(covariates), treatment_, outcome_, feature_names_);
}

Dataset Dataset::with_outcome(Vector outcome) const {
  return Dataset(covariates_, treatment_, std::move(outcome), feature_names_);
}

double hinge_eval(const HingeTerm& term, std::span<const double> x) {
  if (term.variable >= x.size()) {
    throw InvalidInput("hinge variable index " + std::to_string(term.variable) +
                       " out of range for dimension " + std::to_string(x.size()));
  }
  return hinge_value(term.sign, term.knot, x[term.variable]);
}

BasisFunction::BasisFunction(std::vector<HingeTerm> terms) : terms_(std::move(terms)) {
  std::sort(terms_.begin(), terms_.end(),
            [](const HingeTerm& a, const HingeTerm& b) { return (a <=> b) < 0; });
  for (std::size_t k = 1; k < terms_.size(); ++k) {
    if (terms_[k].variable == terms_[k - 1].variable) {
      throw InvalidInput("variable " + std::to_string(terms_[k].variable) +
                         " appears twice in one basis function");
    }
  }
  for (const auto& t : terms_) {
    if (t.sign != Sign::positive && t.sign != Sign::negative) {
      throw InvalidInput("hinge sign must be +1 or -1");
    }
    if (!std::isfinite(t.knot)) throw InvalidInput("hinge knot must be finite");
  }
}

bool BasisFunction::uses_variable(std::size_t j) const noexcept {
  return std::any_of(terms_.begin(), terms_.end(),
                     [j](const HingeTerm& t) { return t.variable == j; });
}

std::size_t BasisFunction::min_dimension() const noexcept {
  std::size_t d = 0;
  for (const auto& t : terms_) d = std::max(d, t.variable + 1);
  return d;
}

BasisFunction BasisFunction::times(const HingeTerm& term) const {
  auto terms = terms_;
  terms.push_back(term);
  return BasisFunction(std::move(terms));
}

double BasisFunction::eval(std::span<const double> x) const {
  double v = 1.0;
  for (const auto& t : terms_) v *= hinge_eval(t, x);
  return v;
}

double BasisFunction::eval_row(const Matrix& x, Eigen::Index i) const {
  double v = 1.0;
  for (const auto& t : terms_) {
    if (static_cast<Eigen::Index>(t.variable) >= x.cols()) {
      throw InvalidInput("basis references variable " + std::to_string(t.variable) +
                         " beyond covariate dimension " + std::to_string(x.cols()));
    }
    v *= hinge_value(t.sign, t.knot, x(i, static_cast<Eigen::Index>(t.variable)));
  }
  return v;
}

std::partial_ordering operator<=>(const BasisFunction& a, const BasisFunction& b) {
  if (auto c = a.terms_.size() <=> b.terms_.size(); c != 0) return c;
  for (std::size_t k = 0; k < a.terms_.size(); ++k) {
    if (auto c = a.terms_[k] <=> b.terms_[k]; c != 0) return c;
  }
  return std::partial_ordering::equivalent;
}

double basis_eval(const BasisFunction& basis, std::span<const double> x) { return basis.eval(x); }

bool basis_equal(const BasisFunction& a, const BasisFunction& b) { return a == b; }

Vector design_column(const BasisFunction& basis, const Matrix& x) {
  if (static_cast<Eigen::Index>(basis.min_dimension()) > x.cols()) {
    throw InvalidInput("basis references a variable beyond the covariate dimension");
  }
  Vector col = Vector::Ones(x.rows());
  for (const auto& t : basis.terms()) {
    const auto xj = x.col(static_cast<Eigen::Index>(t.variable));
    for (Eigen::Index i = 0; i < x.rows(); ++i) col(i) *= hinge_value(t.sign, t.knot, xj(i));
  }
  return col;
}

Vector design_column(const BasisFunction& basis, const Dataset& data) {
  return design_column(basis, data.covariates());
}

Matrix design_matrix(std::span<const BasisFunction> basis, const Matrix& x) {
  Matrix h(x.rows(), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t g = 0; g < basis.size(); ++g) {
    h.col(static_cast<Eigen::Index>(g)) = design_column(basis[g], x);
  }
  return h;
}

BasisCollection::BasisCollection() {
  functions_.push_back(BasisFunction::constant());
  provenance_.push_back(0);
  sorted_.push_back(0);
}

std::optional<std::size_t> BasisCollection::find(const BasisFunction& basis) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), basis,
                             [this](std::size_t idx, const BasisFunction& b) {
                               return (functions_[idx] <=> b) < 0;
                             });
  if (it != sorted_.end() && functions_[*it] == basis) return *it;
  return std::nullopt;
}

bool BasisCollection::add(const BasisFunction& basis, std::size_t replicate) {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), basis,
                             [this](std::size_t idx, const BasisFunction& b) {
                               return (functions_[idx] <=> b) < 0;
                             });
  if (it != sorted_.end() && functions_[*it] == basis) return false;
  sorted_.insert(it, functions_.size());
  functions_.push_back(basis);
  provenance_.push_back(replicate);
  return true;
}

}  // namespace scbm
