#include "hinge_scan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scbm::detail {
namespace {

constexpr double kDependentRatio = 1e-11;  // on squared norms
constexpr double kOrthoRatio = 1e-9;       // on norms, for span updates

}  // namespace

Cell::Cell(IndexList rows, const Vector& response) : rows_(std::move(rows)) {
  const auto m = static_cast<Eigen::Index>(rows_.size());
  q_.resize(m, 0);
  residual_.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    residual_(r) = response(static_cast<Eigen::Index>(rows_[static_cast<std::size_t>(r)]));
  }
}

bool Cell::add_column(const Vector& column) {
  const auto m = static_cast<Eigen::Index>(rows_.size());
  Vector v(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    v(r) = column(static_cast<Eigen::Index>(rows_[static_cast<std::size_t>(r)]));
  }
  const double original = v.norm();
  if (original == 0.0 || rank_ >= m) return false;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index k = 0; k < rank_; ++k) v -= q_.col(k).dot(v) * q_.col(k);
  }
  const double remaining = v.norm();
  if (remaining <= kOrthoRatio * original) return false;
  v /= remaining;
  q_.conservativeResize(Eigen::NoChange, rank_ + 1);
  q_.col(rank_) = v;
  ++rank_;
  residual_ -= v.dot(residual_) * v;
  return true;
}

double pair_reduction(double aa, double bb, double qa_sq, double qb_sq, double qa_qb, double ar,
                      double br) {
  const double a = aa - qa_sq;
  const double b = bb - qb_sq;
  const double c = -qa_qb;
  const bool use_a = aa > 0.0 && a > kDependentRatio * aa;
  const bool use_b = bb > 0.0 && b > kDependentRatio * bb;
  if (!use_a && !use_b) return 0.0;
  if (!use_b) return ar * ar / a;
  if (!use_a) return br * br / b;
  const double det = a * b - c * c;
  if (det <= kDependentRatio * a * b) return std::max(ar * ar / a, br * br / b);
  return (b * ar * ar - 2.0 * c * ar * br + a * br * br) / det;
}

double pair_reduction(const PairStats& s) {
  return pair_reduction(s.aa, s.bb, s.qa.squaredNorm(), s.qb.squaredNorm(), s.qa.dot(s.qb), s.ar,
                        s.br);
}

std::vector<char> knot_mask(std::size_t n_knots, std::optional<std::size_t> cap, Rng* rng) {
  std::vector<char> selected(n_knots, 1);
  if (cap && *cap < n_knots && rng != nullptr) {
    std::vector<std::size_t> idx(n_knots);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < *cap; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n_knots - 1);
      std::swap(idx[k], idx[pick(*rng)]);
    }
    std::fill(selected.begin(), selected.end(), 0);
    for (std::size_t k = 0; k < *cap; ++k) selected[idx[k]] = 1;
  }
  return selected;
}

HingeScanner::HingeScanner(std::size_t n, std::span<const Cell> cells)
    : cells_(cells), cell_of_(n, -1), local_of_(n, 0), current_(cells.size()) {
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& rows = cells[c].rows();
    for (std::size_t l = 0; l < rows.size(); ++l) {
      cell_of_[rows[l]] = static_cast<std::int32_t>(c);
      local_of_[rows[l]] = static_cast<std::uint32_t>(l);
    }
    current_[c].qa.resize(cells[c].rank());
    current_[c].qb.resize(cells[c].rank());
  }
}

void HingeScanner::scan(const Vector& parent, const Eigen::Ref<const Vector>& x,
                        std::size_t min_active, std::size_t min_child,
                        std::optional<std::size_t> knot_cap, Rng* rng, const Visitor& visit) {
  active_.clear();
  for (std::size_t i = 0; i < cell_of_.size(); ++i) {
    if (cell_of_[i] >= 0 && parent(static_cast<Eigen::Index>(i)) > 0.0) active_.push_back(i);
  }
  if (active_.size() < std::max<std::size_t>(min_active, 1)) return;
  std::sort(active_.begin(), active_.end(), [&](std::size_t a, std::size_t b) {
    const double xa = x(static_cast<Eigen::Index>(a)), xb = x(static_cast<Eigen::Index>(b));
    return xa < xb || (xa == xb && a < b);
  });

  // Group boundaries of equal x: group g spans active_[starts[g], starts[g+1]).
  std::vector<std::size_t> starts;
  std::vector<double> knots;
  for (std::size_t r = 0; r < active_.size(); ++r) {
    const double v = x(static_cast<Eigen::Index>(active_[r]));
    if (knots.empty() || v != knots.back()) {
      starts.push_back(r);
      knots.push_back(v);
    }
  }
  starts.push_back(active_.size());
  const std::size_t n_knots = knots.size();

  std::vector<std::size_t> admissible;
  for (std::size_t k = 0; k < n_knots; ++k) {
    if (starts[k] >= min_child && active_.size() - starts[k + 1] >= min_child) admissible.push_back(k);
  }
  if (admissible.empty()) return;
  std::vector<char> selected(n_knots, 0);
  const std::vector<char> mask = knot_mask(admissible.size(), knot_cap, rng);
  for (std::size_t a = 0; a < admissible.size(); ++a) selected[admissible[a]] = mask[a];

  // Per cell layout inside a flat accumulator: [proj(rank) | mass(rank) | w2 w1 w0 r1 r0].
  const std::size_t n_cells = cells_.size();
  std::vector<std::size_t> offset(n_cells + 1, 0);
  for (std::size_t c = 0; c < n_cells; ++c) {
    offset[c + 1] = offset[c] + 2 * static_cast<std::size_t>(cells_[c].rank()) + 5;
  }
  const std::size_t width = offset[n_cells];
  std::vector<double> acc(width, 0.0);

  auto shift = [&](double delta) {
    for (std::size_t c = 0; c < n_cells; ++c) {
      const auto rank = static_cast<std::size_t>(cells_[c].rank());
      double* base = acc.data() + offset[c];
      for (std::size_t k = 0; k < rank; ++k) base[k] += delta * base[rank + k];
      double* s = base + 2 * rank;
      s[0] += 2.0 * delta * s[1] + delta * delta * s[2];
      s[1] += delta * s[2];
      s[3] += delta * s[4];
    }
  };
  auto add_group = [&](std::size_t g, double knot, bool right_side) {
    for (std::size_t r = starts[g]; r < starts[g + 1]; ++r) {
      const std::size_t i = active_[r];
      const auto c = static_cast<std::size_t>(cell_of_[i]);
      const std::size_t l = local_of_[i];
      const auto& cell = cells_[c];
      const auto rank = static_cast<std::size_t>(cell.rank());
      const double p = parent(static_cast<Eigen::Index>(i));
      const double xi = x(static_cast<Eigen::Index>(i));
      const double d = right_side ? xi - knot : knot - xi;
      double* base = acc.data() + offset[c];
      for (std::size_t k = 0; k < rank; ++k) {
        const double qp = cell.q(l, static_cast<Eigen::Index>(k)) * p;
        base[k] += qp * d;
        base[rank + k] += qp;
      }
      double* s = base + 2 * rank;
      const double p2 = p * p;
      const double rp = cell.residual()(static_cast<Eigen::Index>(l)) * p;
      s[0] += p2 * d * d;
      s[1] += p2 * d;
      s[2] += p2;
      s[3] += rp * d;
      s[4] += rp;
    }
  };

  // Descending pass: statistics of a = parent * (x - c)_+ over rows with x > c.
  std::vector<double> a_store(n_knots * width, 0.0);
  for (std::size_t k = n_knots - 1; k-- > 0;) {
    shift(knots[k + 1] - knots[k]);
    add_group(k + 1, knots[k], true);
    std::copy(acc.begin(), acc.end(), a_store.begin() + static_cast<std::ptrdiff_t>(k * width));
  }

  // Ascending pass: statistics of b = parent * (c - x)_+ over rows with x < c.
  std::fill(acc.begin(), acc.end(), 0.0);
  for (std::size_t k = 0; k < n_knots; ++k) {
    if (k > 0) {
      shift(knots[k] - knots[k - 1]);
      add_group(k - 1, knots[k], false);
    }
    if (!selected[k]) continue;
    const double* a_row = a_store.data() + k * width;
    for (std::size_t c = 0; c < n_cells; ++c) {
      const auto rank = static_cast<Eigen::Index>(cells_[c].rank());
      const double* a = a_row + offset[c];
      const double* b = acc.data() + offset[c];
      auto& st = current_[c];
      st.qa = Eigen::Map<const Vector>(a, rank);
      st.qb = Eigen::Map<const Vector>(b, rank);
      st.aa = a[2 * rank];
      st.ar = a[2 * rank + 3];
      st.bb = b[2 * rank];
      st.br = b[2 * rank + 3];
    }
    visit(knots[k], current_);
  }
}

}  // namespace scbm::detail
