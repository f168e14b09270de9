#pragma once

// Incremental evaluation of hinge-pair candidates against an orthonormalized
// design. Rows are partitioned into cells (one cell for plain MARS, one per
// arm or per stratum-arm for causal MARS); each cell carries its own
// orthonormal basis and least-squares residual, so the design is block
// diagonal across cells.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "scbm/core.hpp"
#include "scbm/util.hpp"

namespace scbm::detail {

class Cell {
 public:
  Cell(IndexList rows, const Vector& response);

  const IndexList& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  Eigen::Index rank() const noexcept { return rank_; }
  const Vector& residual() const noexcept { return residual_; }
  double rss() const noexcept { return residual_.squaredNorm(); }
  double q(std::size_t local, Eigen::Index k) const { return q_(static_cast<Eigen::Index>(local), k); }

  /// Appends a design column (indexed by global row) to the cell's span.
  /// Returns false when the column is numerically dependent on the span.
  bool add_column(const Vector& column);

 private:
  IndexList rows_;
  Matrix q_;
  Eigen::Index rank_ = 0;
  Vector residual_;
};

/// Sufficient statistics of one hinge pair (a, b) inside one cell, with
/// a = parent * (x - c)_+ and b = parent * (c - x)_+.
struct PairStats {
  Vector qa, qb;  // projections onto the cell's orthonormal columns
  double aa = 0, bb = 0;
  double ar = 0, br = 0;  // inner products with the cell residual
};

/// Residual-sum-of-squares reduction from adding the columns whose combined
/// statistics are given. `qa_sq` etc. are the squared norms of projections.
double pair_reduction(double aa, double bb, double qa_sq, double qb_sq, double qa_qb, double ar,
                      double br);

/// Reduction for one cell's stats.
double pair_reduction(const PairStats& s);

/// Which of `n_knots` candidate knots to evaluate: all of them, or a uniform
/// subset of size `cap` drawn from `rng`.
std::vector<char> knot_mask(std::size_t n_knots, std::optional<std::size_t> cap, Rng* rng);

class HingeScanner {
 public:
  /// `cells` must outlive the scanner. Rows not covered by any cell are ignored.
  HingeScanner(std::size_t n, std::span<const Cell> cells);

  using Visitor = std::function<void(double knot, std::span<const PairStats> per_cell)>;

  /// Visits every admissible knot for (parent, x) in ascending knot order.
  /// Knots are the distinct x values over rows where parent > 0; nothing is
  /// visited when fewer than `min_active` such rows exist. A knot also needs
  /// `min_child` of those rows strictly on each side. With a knot cap, a
  /// uniform subset of that many admissible knots is visited.
  void scan(const Vector& parent, const Eigen::Ref<const Vector>& x, std::size_t min_active,
            std::size_t min_child, std::optional<std::size_t> knot_cap, Rng* rng,
            const Visitor& visit);

 private:
  std::span<const Cell> cells_;
  std::vector<std::int32_t> cell_of_;
  std::vector<std::uint32_t> local_of_;
  std::vector<std::size_t> active_;
  std::vector<PairStats> a_side_;  // per knot x cell, flattened
  std::vector<PairStats> current_;
};

}  // namespace scbm::detail
