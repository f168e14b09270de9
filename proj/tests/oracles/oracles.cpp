#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "scbm/simbench.hpp"

namespace oracles {
namespace {

double basis_value(const Basis& b, const Matrix& x, Eigen::Index i) {
  double v = 1.0;
  for (const auto& t : b) {
    const double d = t.sign > 0 ? x(i, static_cast<Eigen::Index>(t.variable)) - t.knot
                                : t.knot - x(i, static_cast<Eigen::Index>(t.variable));
    v *= std::max(0.0, d);
  }
  return v;
}

}  // namespace

double qr_rss(const Matrix& design, const Vector& response) {
  // minimum-norm solution; exact rank deficiency is common with coincident knots
  Eigen::JacobiSVD<Matrix> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-12);
  const Vector beta = svd.solve(response);
  return (response - design * beta).squaredNorm();
}

StepResult exhaustive_forward_step(const Matrix& x, const Vector& response,
                                   const std::vector<Basis>& current_basis, std::size_t k_max,
                                   std::size_t min_active, std::size_t min_child) {
  const auto n = x.rows();
  if (n > 50) throw std::invalid_argument("exhaustive_forward_step: n > 50");
  const auto m_count = static_cast<Eigen::Index>(current_basis.size());
  Matrix design(n, m_count + 2);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    for (Eigen::Index i = 0; i < n; ++i) design(i, m) = basis_value(current_basis[static_cast<std::size_t>(m)], x, i);
  }

  StepResult best;
  best.lof = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const auto& parent = current_basis[static_cast<std::size_t>(m)];
    if (parent.size() >= k_max) continue;
    std::size_t positive = 0;
    for (Eigen::Index i = 0; i < n; ++i) positive += design(i, m) > 0.0;
    if (positive < min_active) continue;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const bool used = std::any_of(parent.begin(), parent.end(), [&](const Term& t) {
        return t.variable == static_cast<std::size_t>(j);
      });
      if (used) continue;
      std::vector<double> knots;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (design(i, m) > 0.0) knots.push_back(x(i, j));
      }
      std::sort(knots.begin(), knots.end());
      knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
      for (double c : knots) {
        std::size_t below = 0, above = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (design(i, m) <= 0.0) continue;
          below += x(i, j) < c;
          above += x(i, j) > c;
        }
        if (below < min_child || above < min_child) continue;
        for (Eigen::Index i = 0; i < n; ++i) {
          design(i, m_count) = design(i, m) * std::max(0.0, x(i, j) - c);
          design(i, m_count + 1) = design(i, m) * std::max(0.0, c - x(i, j));
        }
        const double lof = qr_rss(design, response);
        if (lof < best.lof) {
          best = {static_cast<std::size_t>(m), static_cast<std::size_t>(j), c, lof, true};
        }
      }
    }
  }
  return best;
}

double group_lasso_objective(const Matrix& x, const std::vector<std::vector<Eigen::Index>>& groups,
                             const std::vector<bool>& penalized, const Vector& y,
                             const Vector& beta, double lambda) {
  double obj = (y - x * beta).squaredNorm();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!penalized[g]) continue;
    double sq = 0;
    for (auto k : groups[g]) sq += beta(k) * beta(k);
    obj += lambda * std::sqrt(sq);
  }
  return obj;
}

Vector proximal_gradient_group_lasso(const Matrix& x,
                                     const std::vector<std::vector<Eigen::Index>>& groups,
                                     const std::vector<bool>& penalized, const Vector& y,
                                     double lambda, std::size_t iters, std::optional<double> step) {
  double t = 0;
  if (step) {
    t = *step;
  } else {
    Eigen::JacobiSVD<Matrix> svd(x);
    const double smax = svd.singularValues()(0);
    t = 1.0 / (2.0 * smax * smax);
  }
  Vector beta = Vector::Zero(x.cols());
  for (std::size_t it = 0; it < iters; ++it) {
    const Vector grad = 2.0 * x.transpose() * (x * beta - y);
    Vector v = beta - t * grad;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (!penalized[g]) continue;
      double sq = 0;
      for (auto k : groups[g]) sq += v(k) * v(k);
      const double norm = std::sqrt(sq);
      const double scale = norm > lambda * t ? 1.0 - lambda * t / norm : 0.0;
      for (auto k : groups[g]) v(k) *= scale;
    }
    beta = v;
  }
  return beta;
}

MonteCarloEstimate monte_carlo_tau(int scenario, const Vector& x, std::size_t draws,
                                   std::uint64_t seed) {
  const auto& sc = scbm::scenario(scenario);
  std::mt19937_64 rng(seed);
  double sum = 0, sumsq = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const double diff =
        scbm::sample_outcome(sc, x, scbm::Arm::treated, rng) - scbm::sample_outcome(sc, x, scbm::Arm::control, rng);
    sum += diff;
    sumsq += diff * diff;
  }
  const double m = sum / static_cast<double>(draws);
  const double var = (sumsq - static_cast<double>(draws) * m * m) / static_cast<double>(draws - 1);
  return {m, std::sqrt(var / static_cast<double>(draws))};
}

bool GeneratorCheck::passes(bool observational) const {
  bool ok = max_odd_mean < 0.02 && max_odd_var_dev <= 0.03 && max_even_mean_dev <= 0.01 &&
            residual_var_dev <= 0.03;
  if (observational) return ok && max_decile_gap <= 0.02;
  return ok && std::abs(treated_fraction - 0.5) <= 0.005;
}

GeneratorCheck check_generator(int scenario, std::size_t n, std::size_t p, std::uint64_t seed) {
  const auto& sc = scbm::scenario(scenario);
  const auto draw = scbm::draw_scenario(sc, n, p, 1, seed);
  const Matrix& x = draw.train.covariates();
  const auto rows = static_cast<double>(n);
  GeneratorCheck out;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).mean();
    const double var = (x.col(j).array() - m).square().sum() / (rows - 1.0);
    if (j % 2 == 0) {
      out.max_odd_mean = std::max(out.max_odd_mean, std::abs(m));
      out.max_odd_var_dev = std::max(out.max_odd_var_dev, std::abs(var - 1.0));
    } else {
      out.max_even_mean_dev = std::max(out.max_even_mean_dev, std::abs(m - 0.5));
    }
  }
  Vector resid(x.rows());
  std::vector<double> row(p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < p; ++j) row[j] = x(i, static_cast<Eigen::Index>(j));
    const double t = draw.train.treatment()(i);
    resid(i) = draw.train.outcome()(i) - sc.mu(row) - (t - 0.5) * sc.tau(row);
  }
  const double rm = resid.mean();
  out.residual_var_dev = std::abs((resid.array() - rm).square().sum() / (rows - 1.0) - 1.0);
  out.treated_fraction = static_cast<double>(draw.train.treated_count()) / rows;

  std::vector<Eigen::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
  const Vector& e = draw.true_propensity_train;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return e(a) < e(b); });
  for (std::size_t d = 0; d < 10; ++d) {
    const std::size_t lo = d * n / 10, hi = (d + 1) * n / 10;
    double treated = 0, mass = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      treated += draw.train.treatment()(order[k]);
      mass += e(order[k]);
    }
    const double cnt = static_cast<double>(hi - lo);
    out.max_decile_gap = std::max(out.max_decile_gap, std::abs(treated / cnt - mass / cnt));
  }
  return out;
}

}  // namespace oracles
