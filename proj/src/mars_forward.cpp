#include "scbm/mars_forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hinge_scan.hpp"
#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

void check_inputs(const Matrix& x, const Vector& response) {
  if (x.rows() != response.size()) throw InvalidInput("response length does not match rows of x");
  if (x.rows() < 1 || x.cols() < 1) throw InvalidInput("forward pass needs a non-empty matrix");
  if (!response.allFinite()) throw InvalidInput("response contains non-finite values");
  if (!x.allFinite()) throw InvalidInput("covariates contain non-finite values");
}

std::vector<double> admissible_knots(const Vector& parent, const Eigen::Ref<const Vector>& xj,
                                     std::size_t min_active, std::size_t min_child) {
  std::vector<double> values;
  for (Eigen::Index i = 0; i < parent.size(); ++i) {
    if (parent(i) > 0.0) values.push_back(xj(i));
  }
  if (values.size() < std::max<std::size_t>(min_active, 1)) return {};
  std::sort(values.begin(), values.end());
  std::vector<double> knots;
  for (std::size_t r = 0; r < values.size(); ++r) {
    if (r > 0 && values[r] == values[r - 1]) continue;
    const auto below = r;
    const auto above = static_cast<std::size_t>(values.end() - std::upper_bound(values.begin(), values.end(), values[r]));
    if (below >= min_child && above >= min_child) knots.push_back(values[r]);
  }
  return knots;
}

/// Calls visit(parent, variable, knot, lof) for every admissible candidate in
/// (parent, variable, knot) order.
template <class Visit>
void for_each_candidate(const Matrix& x, const Vector& response,
                        std::span<const BasisFunction> basis, const Matrix& design,
                        const detail::Cell& cell, const ForwardConfig& config, Rng& rng,
                        Visit&& visit) {
  const double rss = cell.rss();
  const auto p = static_cast<std::size_t>(x.cols());
  const std::size_t guard = config.child_guard(p);
  detail::HingeScanner scanner(static_cast<std::size_t>(x.rows()), std::span(&cell, 1));
  for (std::size_t m = 0; m < basis.size(); ++m) {
    if (basis[m].degree() >= config.k_max) continue;
    const Vector parent = design.col(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < p; ++j) {
      if (basis[m].uses_variable(j)) continue;
      const auto xj = x.col(static_cast<Eigen::Index>(j));
      if (config.naive_lof) {
        const auto knots = admissible_knots(parent, xj, config.min_active, guard);
        const auto mask = detail::knot_mask(knots.size(), config.knot_subsample, &rng);
        for (std::size_t k = 0; k < knots.size(); ++k) {
          if (!mask[k]) continue;
          visit(m, j, knots[k], candidate_lof(design, parent, xj, knots[k], response));
        }
      } else {
        scanner.scan(parent, xj, config.min_active, guard, config.knot_subsample, &rng,
                     [&](double knot, std::span<const detail::PairStats> stats) {
                       const double red = detail::pair_reduction(stats[0]);
                       visit(m, j, knot, std::max(0.0, rss - red));
                     });
      }
    }
  }
}

struct DesignState {
  Matrix design;
  detail::Cell cell;
};

DesignState build_state(const Matrix& x, const Vector& response,
                        std::span<const BasisFunction> basis) {
  IndexList all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), 0);
  DesignState s{design_matrix(basis, x), detail::Cell(std::move(all), response)};
  for (Eigen::Index g = 0; g < s.design.cols(); ++g) s.cell.add_column(s.design.col(g));
  return s;
}

}  // namespace

void ForwardConfig::validate() const {
  if (m_max < 2 || m_max % 2 != 0) throw ConfigError("forward.m_max must be an even integer >= 2");
  if (k_max < 1) throw ConfigError("forward.k_max must be >= 1");
  if (min_active < 1) throw ConfigError("forward.min_active must be >= 1");
  if (knot_subsample && *knot_subsample < 1) {
    throw ConfigError("forward.knot_subsample must be >= 1 when set");
  }
}

std::size_t ForwardConfig::child_guard(std::size_t p) const { return min_child ? *min_child : end_span(p); }

std::size_t end_span(std::size_t p, double alpha) {
  if (p == 0) return 0;
  return static_cast<std::size_t>(std::ceil(3.0 - std::log2(alpha / static_cast<double>(p))));
}

double candidate_lof(const Matrix& current_design, const Vector& parent_column, const Vector& xj,
                     double knot, const Vector& response) {
  const auto n = current_design.rows();
  if (parent_column.size() != n || xj.size() != n || response.size() != n) {
    throw InvalidInput("candidate_lof: inconsistent lengths");
  }
  Matrix augmented(n, current_design.cols() + 2);
  augmented.leftCols(current_design.cols()) = current_design;
  for (Eigen::Index i = 0; i < n; ++i) {
    augmented(i, current_design.cols()) = parent_column(i) * hinge_value(Sign::positive, knot, xj(i));
    augmented(i, current_design.cols() + 1) =
        parent_column(i) * hinge_value(Sign::negative, knot, xj(i));
  }
  const Vector beta = least_squares(augmented, response);
  return residual_sum_of_squares(augmented, response, beta);
}

std::vector<CandidateScore> score_candidates(const Matrix& x, const Vector& response,
                                             std::span<const BasisFunction> basis,
                                             const ForwardConfig& config, std::uint64_t seed) {
  config.validate();
  check_inputs(x, response);
  if (basis.empty()) throw InvalidInput("score_candidates needs at least the constant basis");
  const auto state = build_state(x, response, basis);
  Rng rng(seed);
  std::vector<CandidateScore> out;
  for_each_candidate(x, response, basis, state.design, state.cell, config, rng,
                     [&](std::size_t m, std::size_t j, double knot, double lof) {
                       out.push_back({m, j, knot, lof});
                     });
  return out;
}

ForwardFit forward_pass(const Matrix& x, const Vector& response, const ForwardConfig& config,
                        std::uint64_t seed) {
  config.validate();
  check_inputs(x, response);

  ForwardFit fit;
  fit.basis.push_back(BasisFunction::constant());
  auto state = build_state(x, response, fit.basis);
  fit.rss_trace.push_back(state.cell.rss());
  Rng rng(seed);

  while (fit.basis.size() - 1 < config.m_max) {
    CandidateScore best{0, 0, 0.0, std::numeric_limits<double>::infinity()};
    bool found = false;
    for_each_candidate(x, response, fit.basis, state.design, state.cell, config, rng,
                       [&](std::size_t m, std::size_t j, double knot, double lof) {
                         if (lof < best.lof) {
                           best = {m, j, knot, lof};
                           found = true;
                         }
                       });
    const double rss = state.cell.rss();
    if (!found || !(rss - best.lof > 1e-12 * rss)) break;

    const auto& parent = fit.basis[best.parent];
    const BasisFunction plus = parent.times({best.variable, Sign::positive, best.knot});
    const BasisFunction minus = parent.times({best.variable, Sign::negative, best.knot});
    const auto cols = state.design.cols();
    state.design.conservativeResize(Eigen::NoChange, cols + 2);
    state.design.col(cols) = design_column(plus, x);
    state.design.col(cols + 1) = design_column(minus, x);
    state.cell.add_column(state.design.col(cols));
    state.cell.add_column(state.design.col(cols + 1));
    fit.basis.push_back(plus);
    fit.basis.push_back(minus);
    fit.splits.push_back({best.parent, best.variable, best.knot, best.lof});
    fit.rss_trace.push_back(state.cell.rss());
  }
  fit.coefficients = least_squares(state.design, response);
  return fit;
}

}  // namespace scbm
