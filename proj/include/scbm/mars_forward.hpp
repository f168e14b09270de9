#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scbm/core.hpp"

namespace scbm {

struct ForwardConfig {
  /// Maximum number of non-intercept terms; terms arrive in mirrored pairs.
  std::size_t m_max = 10;
  /// Maximum interaction degree of a basis function.
  std::size_t k_max = 2;
  /// A parent needs this many strictly positive rows to be split.
  std::size_t min_active = 5;
  /// Each child of a split needs this many strictly positive rows; unset
  /// means end_span(p).
  std::optional<std::size_t> min_child;
  /// Cap on candidate knots per (parent, variable) pair.
  std::optional<std::size_t> knot_subsample;
  /// Score every candidate with a full least-squares refit (slow; for testing).
  bool naive_lof = false;

  void validate() const;
  /// min_child, or the end-span rule for p covariates when unset.
  std::size_t child_guard(std::size_t p) const;
};

/// Friedman's end-span count ceil(3 - log2(alpha / p)): 13 at p = 50.
std::size_t end_span(std::size_t p, double alpha = 0.05);

/// One accepted hinge pair: children of basis `parent` on `variable` at `knot`.
struct AcceptedSplit {
  std::size_t parent = 0;
  std::size_t variable = 0;
  double knot = 0.0;
  double lof = 0.0;

  friend bool operator==(const AcceptedSplit&, const AcceptedSplit&) = default;
};

struct ForwardFit {
  /// Constant first, then the accepted pairs as (+, -) children.
  std::vector<BasisFunction> basis;
  /// Least-squares coefficients of the response on `basis`.
  Vector coefficients;
  /// RSS of the constant model followed by the RSS after each accepted pair.
  std::vector<double> rss_trace;
  std::vector<AcceptedSplit> splits;
};

struct CandidateScore {
  std::size_t parent = 0;
  std::size_t variable = 0;
  double knot = 0.0;
  double lof = 0.0;
};

/// Greedy forward growth of hinge-pair terms minimizing the residual sum of
/// squares. Each step searches every (parent, unused variable, knot) triple,
/// with knots taken from observed values where the parent is positive, and
/// adds both mirrored children of the best one. Ties go to the
/// lexicographically smallest (parent, variable, knot).
ForwardFit forward_pass(const Matrix& x, const Vector& response, const ForwardConfig& config,
                        std::uint64_t seed = 0);

/// Every admissible candidate for extending `basis`, scored by the same
/// evaluation path forward_pass uses, in (parent, variable, knot) order.
std::vector<CandidateScore> score_candidates(const Matrix& x, const Vector& response,
                                             std::span<const BasisFunction> basis,
                                             const ForwardConfig& config, std::uint64_t seed = 0);

/// RSS of the least-squares fit of `response` on the current design plus the
/// two columns parent * (x - c)_+ and parent * (c - x)_+.
double candidate_lof(const Matrix& current_design, const Vector& parent_column, const Vector& xj,
                     double knot, const Vector& response);

}  // namespace scbm
