#include "scbm/group_lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

struct GramProblem {
  Matrix gram;
  Vector xty;
  double yy = 0.0;
  const std::vector<std::vector<Eigen::Index>>* groups = nullptr;
  const std::vector<bool>* penalized = nullptr;
};

GramProblem make_problem(const Matrix& xs, const Vector& y, const GroupedDesign& design) {
  GramProblem p;
  p.gram.noalias() = xs.transpose() * xs;
  p.xty.noalias() = xs.transpose() * y;
  p.yy = y.squaredNorm();
  p.groups = &design.groups();
  p.penalized = &design.penalized();
  return p;
}

// Minimizes sum_k (d_k b_k^2 - 2 s_k b_k) + lambda ||b|| for diagonal d.
void block_update(const Vector& s, const Vector& d, double lambda, bool penalized, Vector& out) {
  const auto k = s.size();
  out.setZero(k);
  double norm_sq = 0, d_min = std::numeric_limits<double>::infinity(), d_max = 0;
  int live = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (d(i) <= 0.0) continue;
    norm_sq += s(i) * s(i);
    d_min = std::min(d_min, d(i));
    d_max = std::max(d_max, d(i));
    ++live;
  }
  if (live == 0) return;
  const double half = 0.5 * lambda;
  if (!penalized || lambda == 0.0) {
    for (Eigen::Index i = 0; i < k; ++i)
      if (d(i) > 0.0) out(i) = s(i) / d(i);
    return;
  }
  const double norm_s = std::sqrt(norm_sq);
  if (norm_s <= half) return;

  // ||b|| = eta solves sum s^2 / (d eta + lambda/2)^2 = 1
  double lo = (norm_s - half) / d_max;
  double hi = (norm_s - half) / d_min;
  double eta = lo;
  if (hi > lo) {
    auto phi = [&](double e, double& slope) {
      double f = -1.0;
      slope = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        if (d(i) <= 0.0) continue;
        const double den = d(i) * e + half;
        const double term = s(i) * s(i) / (den * den);
        f += term;
        slope -= 2.0 * term * d(i) / den;
      }
      return f;
    };
    eta = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      double slope = 0.0;
      const double f = phi(eta, slope);
      if (f == 0.0) break;
      if (f > 0.0) lo = eta; else hi = eta;
      double next = slope < 0.0 ? eta - f / slope : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - eta) <= 1e-12 * std::max(eta, 1e-300) || hi - lo <= 1e-12 * hi) {
        eta = next;
        break;
      }
      eta = next;
    }
  }
  for (Eigen::Index i = 0; i < k; ++i)
    if (d(i) > 0.0) out(i) = s(i) * eta / (d(i) * eta + half);
}

double kkt_violation(const Vector& grad, const Vector& beta,
                     const std::vector<std::vector<Eigen::Index>>& groups,
                     const std::vector<bool>& penalized, double lambda) {
  double worst = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    const auto k = static_cast<Eigen::Index>(idx.size());
    Vector gg(k), bg(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      gg(i) = 2.0 * grad(idx[static_cast<std::size_t>(i)]);
      bg(i) = beta(idx[static_cast<std::size_t>(i)]);
    }
    double v;
    const double bn = bg.norm();
    if (!penalized[g]) {
      v = gg.norm();
    } else if (bn == 0.0) {
      v = std::max(0.0, gg.norm() - lambda);
    } else {
      v = (gg - lambda * bg / bn).norm();
    }
    worst = std::max(worst, v);
  }
  return worst / std::max(lambda, 1.0);
}

double penalty_sum(const GramProblem& p, const Vector& beta) {
  double total = 0.0;
  for (std::size_t g = 0; g < p.groups->size(); ++g) {
    if (!(*p.penalized)[g]) continue;
    double sq = 0.0;
    for (auto c : (*p.groups)[g]) sq += beta(c) * beta(c);
    total += std::sqrt(sq);
  }
  return total;
}

double gram_objective(const GramProblem& p, const Vector& beta, double lambda) {
  return p.yy - 2.0 * beta.dot(p.xty) + beta.dot(p.gram * beta) + lambda * penalty_sum(p, beta);
}

// Damped Newton on the groups in `active`, where the objective is smooth as
// long as no penalized group reaches zero. Coordinate sweeps handle groups
// that leave or enter the active set.
std::size_t newton_phase(const GramProblem& p, double lambda, const std::vector<std::size_t>& active,
                         Vector& beta) {
  const auto& groups = *p.groups;
  const auto& penalized = *p.penalized;
  std::size_t steps = 0;
  for (; steps < 50; ++steps) {
    std::vector<Eigen::Index> coords;
    std::vector<std::size_t> owner;
    for (std::size_t g : active) {
      double sq = 0.0;
      for (auto c : groups[g]) sq += beta(c) * beta(c);
      if (penalized[g] && sq == 0.0) continue;
      for (auto c : groups[g]) {
        if (p.gram(c, c) <= 0.0) continue;
        coords.push_back(c);
        owner.push_back(g);
      }
    }
    const auto k = static_cast<Eigen::Index>(coords.size());
    if (k == 0) break;
    const Vector grad_full = p.xty - p.gram * beta;
    Vector grad(k);
    Matrix hess(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      grad(a) = -2.0 * grad_full(coords[a]);
      for (Eigen::Index b = 0; b < k; ++b) hess(a, b) = 2.0 * p.gram(coords[a], coords[b]);
    }
    for (Eigen::Index a = 0; a < k;) {
      Eigen::Index e = a;
      while (e < k && owner[e] == owner[a]) ++e;
      if (penalized[owner[a]] && lambda > 0.0) {
        double sq = 0.0;
        for (Eigen::Index i = a; i < e; ++i) sq += beta(coords[i]) * beta(coords[i]);
        const double norm = std::sqrt(sq);
        for (Eigen::Index i = a; i < e; ++i) {
          const double ui = beta(coords[i]) / norm;
          grad(i) += lambda * ui;
          for (Eigen::Index j = a; j < e; ++j) {
            const double uj = beta(coords[j]) / norm;
            hess(i, j) += lambda / norm * ((i == j ? 1.0 : 0.0) - ui * uj);
          }
        }
      }
      a = e;
    }
    if (grad.cwiseAbs().maxCoeff() <= 1e-11 * std::max(lambda, 1.0)) break;
    hess.diagonal().array() += 1e-12 * std::max(1.0, hess.diagonal().maxCoeff());
    const Vector step = -hess.ldlt().solve(grad);
    const double decrease = -grad.dot(step);
    if (!(decrease > 0.0) || !step.allFinite()) break;

    const double f0 = gram_objective(p, beta, lambda);
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f0), p.yy);
    double t = 1.0;
    Vector trial = beta;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      trial = beta;
      for (Eigen::Index a = 0; a < k; ++a) trial(coords[a]) += t * step(a);
      // a group the step drives through or close to the origin sits at the
      // kink of the penalty; place it there exactly
      bool zeroed = false;
      for (Eigen::Index a = 0; a < k;) {
        Eigen::Index e = a;
        while (e < k && owner[e] == owner[a]) ++e;
        if (penalized[owner[a]]) {
          double before = 0.0, after = 0.0, cross = 0.0;
          for (Eigen::Index i = a; i < e; ++i) {
            before += beta(coords[i]) * beta(coords[i]);
            after += trial(coords[i]) * trial(coords[i]);
            cross += beta(coords[i]) * trial(coords[i]);
          }
          if (cross <= 0.0 || after <= 1e-2 * before) {
            for (Eigen::Index i = a; i < e; ++i) trial(coords[i]) = 0.0;
            zeroed = true;
          }
        }
        a = e;
      }
      const double f1 = gram_objective(p, trial, lambda);
      if (f1 <= f0 - 1e-4 * t * decrease + noise || (zeroed && f1 < f0 - noise)) {
        accepted = f1 < f0 || t == 1.0;
        break;
      }
    }
    if (!accepted) break;
    beta = trial;
    if (decrease <= noise) break;
  }
  return steps;
}

/// Runs block coordinate descent from `beta` (standardized scale), with a
/// Newton phase on the active set whenever plain sweeps stall. Returns the
/// number of sweeps; `converged` reports the coefficient-change test.
std::size_t coordinate_descent(const GramProblem& p, double lambda, const SolverOptions& opt,
                               Vector& beta, bool& converged,
                               std::vector<double>* trace = nullptr) {
  const auto& groups = *p.groups;
  const auto& penalized = *p.penalized;
  const Vector diag = p.gram.diagonal();
  Vector grad = p.xty - p.gram * beta;  // X^T r
  Vector s, d, fresh, old;

  auto record = [&] {
    if (trace) trace->push_back(p.yy - beta.dot(p.xty) - beta.dot(grad) + lambda * penalty_sum(p, beta));
  };
  auto sweep = [&](const std::vector<std::size_t>& which) {
    double change = 0.0;
    for (std::size_t g : which) {
      const auto& idx = groups[g];
      const auto k = static_cast<Eigen::Index>(idx.size());
      s.resize(k);
      d.resize(k);
      old.resize(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        const auto c = idx[static_cast<std::size_t>(i)];
        old(i) = beta(c);
        d(i) = diag(c);
        s(i) = grad(c) + d(i) * old(i);
      }
      block_update(s, d, lambda, penalized[g], fresh);
      for (Eigen::Index i = 0; i < k; ++i) {
        const double delta = fresh(i) - old(i);
        if (delta == 0.0) continue;
        const auto c = idx[static_cast<std::size_t>(i)];
        grad.noalias() -= p.gram.col(c) * delta;
        beta(c) = fresh(i);
        change = std::max(change, std::abs(delta));
      }
    }
    record();
    return change;
  };

  std::vector<std::size_t> all(groups.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> active;
  std::size_t sweeps = 0;
  converged = false;
  while (sweeps < opt.max_iter) {
    const double change = sweep(all);
    ++sweeps;
    // flat directions can keep coefficients drifting after the KKT
    // conditions already hold, so either test ends the descent
    if (change < opt.tol || kkt_violation(grad, beta, groups, penalized, lambda) <= opt.tol) {
      converged = true;
      break;
    }
    active.clear();
    for (std::size_t g : all) {
      bool on = !penalized[g];
      for (auto c : groups[g]) on = on || beta(c) != 0.0;
      if (on) active.push_back(g);
    }
    bool settled = false;
    for (int inner = 0; inner < 20 && sweeps < opt.max_iter; ++inner) {
      ++sweeps;
      if (sweep(active) < opt.tol) {
        settled = true;
        break;
      }
    }
    if (!settled && sweeps < opt.max_iter) {
      sweeps += newton_phase(p, lambda, active, beta);
      grad = p.xty - p.gram * beta;
      record();
    }
    grad = p.xty - p.gram * beta;  // drop accumulated rounding
  }
  return sweeps;
}

GroupLassoSolution finish(const GroupedDesign& design, const Matrix& xs, const Vector& y,
                          double lambda, Vector beta_std, std::size_t sweeps, bool converged,
                          const SolverOptions& opt) {
  const Vector r = y - xs * beta_std;
  const Vector grad = xs.transpose() * r;
  GroupLassoSolution sol;
  sol.lambda = lambda;
  sol.iterations = sweeps;
  sol.kkt_residual = kkt_violation(grad, beta_std, design.groups(), design.penalized(), lambda);
  double penalty = 0.0;
  for (std::size_t g = 0; g < design.group_count(); ++g) {
    if (!design.penalized()[g]) continue;
    double sq = 0.0;
    for (auto c : design.groups()[g]) sq += beta_std(c) * beta_std(c);
    penalty += std::sqrt(sq);
  }
  sol.objective = r.squaredNorm() + lambda * penalty;
  if (!converged && sol.kkt_residual > opt.tol) {
    std::ostringstream msg;
    msg << "group lasso did not converge in " << opt.max_iter << " sweeps at lambda " << lambda
        << "; KKT residual " << sol.kkt_residual;
    throw ConvergenceError(msg.str(), sol.kkt_residual);
  }
  sol.beta = beta_std.cwiseQuotient(design.scale());
  return sol;
}

void check_response(const GroupedDesign& design, const Vector& y) {
  if (y.size() != design.n()) throw InvalidInput("response length does not match the design");
  if (!y.allFinite()) throw InvalidInput("response contains non-finite values");
}

std::vector<double> lambda_grid(double top, std::size_t count, double min_ratio) {
  std::vector<double> grid(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
    grid[k] = top * std::pow(min_ratio, frac);
  }
  grid.front() = top;
  return grid;
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Vector take(const Vector& v, std::span<const std::size_t> rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void split_folds(const std::vector<std::size_t>& fold, std::size_t f, IndexList& train,
                 IndexList& test) {
  train.clear();
  test.clear();
  for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test : train).push_back(i);
}

void summarize(CvCurve& curve, const std::vector<std::vector<double>>& errors) {
  const std::size_t folds = errors.size();
  const std::size_t count = curve.lambdas.size();
  curve.mean_error.assign(count, 0.0);
  curve.standard_error.assign(count, 0.0);
  for (std::size_t k = 0; k < count; ++k) {
    double m = 0.0;
    for (std::size_t f = 0; f < folds; ++f) m += errors[f][k];
    m /= static_cast<double>(folds);
    double v = 0.0;
    for (std::size_t f = 0; f < folds; ++f) v += (errors[f][k] - m) * (errors[f][k] - m);
    v /= static_cast<double>(std::max<std::size_t>(folds - 1, 1));
    curve.mean_error[k] = m;
    curve.standard_error[k] = std::sqrt(v / static_cast<double>(folds));
  }
  curve.best = static_cast<std::size_t>(
      std::min_element(curve.mean_error.begin(), curve.mean_error.end()) - curve.mean_error.begin());
  const double bound = curve.mean_error[curve.best] + curve.standard_error[curve.best];
  curve.one_se = curve.best;
  for (std::size_t k = 0; k < curve.best; ++k) {
    if (curve.mean_error[k] <= bound) {
      curve.one_se = k;
      break;
    }
  }
}

}  // namespace

GroupedDesign::GroupedDesign(Matrix columns, std::vector<std::vector<Eigen::Index>> groups,
                             std::vector<bool> penalized, bool standardize)
    : columns_(std::move(columns)), groups_(std::move(groups)), penalized_(std::move(penalized)) {
  if (groups_.size() != penalized_.size()) {
    throw InvalidInput("group and penalty-flag counts differ");
  }
  if (!columns_.allFinite()) throw InvalidInput("design contains non-finite values");
  std::vector<int> seen(static_cast<std::size_t>(columns_.cols()), 0);
  for (const auto& g : groups_) {
    if (g.empty()) throw InvalidInput("empty group");
    for (auto c : g) {
      if (c < 0 || c >= columns_.cols()) throw InvalidInput("group column index out of range");
      if (seen[static_cast<std::size_t>(c)]++) throw InvalidInput("groups overlap");
    }
    for (std::size_t a = 0; a < g.size(); ++a) {
      for (std::size_t b = a + 1; b < g.size(); ++b) {
        const double cross = columns_.col(g[a]).dot(columns_.col(g[b]));
        const double bound = 1e-10 * columns_.col(g[a]).norm() * columns_.col(g[b]).norm();
        if (std::abs(cross) > bound) throw InvalidInput("columns within a group must be orthogonal");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw InvalidInput("every column must belong to a group");
  }
  scale_ = Vector::Ones(columns_.cols());
  if (standardize && columns_.rows() > 0) {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (!penalized_[g]) continue;
      for (auto c : groups_[g]) {
        const double rms = std::sqrt(columns_.col(c).squaredNorm() / static_cast<double>(columns_.rows()));
        if (rms > 0.0) scale_(c) = rms;
      }
    }
  }
}

GroupedDesign GroupedDesign::arm_pairs(const Matrix& h, const Eigen::VectorXi& treatment,
                                       bool standardize) {
  if (treatment.size() != h.rows()) throw InvalidInput("treatment length does not match the design");
  if (h.cols() < 1) throw InvalidInput("arm_pairs needs at least the constant column");
  Matrix cols(h.rows(), 2 * h.cols());
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<bool> pen;
  for (Eigen::Index g = 0; g < h.cols(); ++g) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const bool t = treatment(i) == 1;
      cols(i, 2 * g) = t ? h(i, g) : 0.0;
      cols(i, 2 * g + 1) = t ? 0.0 : h(i, g);
    }
    groups.push_back({2 * g, 2 * g + 1});
    pen.push_back(g != 0);
  }
  GroupedDesign d(std::move(cols), std::move(groups), std::move(pen), standardize);
  d.set_strata(treatment);
  return d;
}

GroupedDesign GroupedDesign::singletons(const Matrix& h, bool standardize) {
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<bool> pen;
  for (Eigen::Index c = 0; c < h.cols(); ++c) {
    groups.push_back({c});
    pen.push_back(c != 0);
  }
  return GroupedDesign(h, std::move(groups), std::move(pen), standardize);
}

void GroupedDesign::set_strata(Eigen::VectorXi strata) {
  if (strata.size() != 0 && strata.size() != columns_.rows()) {
    throw InvalidInput("strata length does not match the design");
  }
  strata_ = std::move(strata);
}

Matrix GroupedDesign::standardized() const {
  return columns_ * scale_.cwiseInverse().asDiagonal();
}

GroupedDesign GroupedDesign::subset(std::span<const std::size_t> rows) const {
  GroupedDesign d;
  d.columns_ = take_rows(columns_, rows);
  d.scale_ = scale_;
  d.groups_ = groups_;
  d.penalized_ = penalized_;
  if (strata_.size() > 0) {
    d.strata_.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) d.strata_(static_cast<Eigen::Index>(i)) = strata_(static_cast<Eigen::Index>(rows[i]));
  }
  return d;
}

GroupLassoSolution solve(const GroupedDesign& design, const Vector& y, double lambda,
                         const SolverOptions& options, const Vector* warm_start) {
  check_response(design, y);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be finite and >= 0");
  if (!(options.tol > 0.0)) throw ConfigError("solver tol must be > 0");
  if (options.max_iter == 0) throw ConfigError("solver max_iter must be >= 1");
  const Matrix xs = design.standardized();
  const auto problem = make_problem(xs, y, design);
  Vector beta = Vector::Zero(xs.cols());
  if (warm_start) {
    if (warm_start->size() != xs.cols()) throw InvalidInput("warm start has the wrong length");
    beta = *warm_start;
  }
  bool converged = false;
  std::vector<double> trace;
  const auto sweeps = coordinate_descent(problem, lambda, options, beta, converged,
                                         options.record_objective ? &trace : nullptr);
  auto sol = finish(design, xs, y, lambda, std::move(beta), sweeps, converged, options);
  sol.objective_trace = std::move(trace);
  return sol;
}

double lambda_max(const GroupedDesign& design, const Vector& y) {
  check_response(design, y);
  const Matrix xs = design.standardized();
  std::vector<Eigen::Index> free_cols;
  for (std::size_t g = 0; g < design.group_count(); ++g)
    if (!design.penalized()[g])
      for (auto c : design.groups()[g]) free_cols.push_back(c);
  Vector r = y;
  if (!free_cols.empty()) {
    Matrix xf(xs.rows(), static_cast<Eigen::Index>(free_cols.size()));
    for (std::size_t k = 0; k < free_cols.size(); ++k) xf.col(static_cast<Eigen::Index>(k)) = xs.col(free_cols[k]);
    r -= xf * least_squares(xf, y);
  }
  double top = 0.0;
  for (std::size_t g = 0; g < design.group_count(); ++g) {
    if (!design.penalized()[g]) continue;
    double sq = 0.0;
    for (auto c : design.groups()[g]) {
      const double v = xs.col(c).dot(r);
      sq += v * v;
    }
    top = std::max(top, 2.0 * std::sqrt(sq));
  }
  return top;
}

void PathConfig::validate() const {
  if (n_lambda < 2) throw ConfigError("lasso.n_lambda must be >= 2");
  if (!(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0)) {
    throw ConfigError("lasso.lambda_min_ratio must lie in (0, 1)");
  }
  if (folds < 2) throw ConfigError("lasso.folds must be >= 2");
  if (!(solver.tol > 0.0)) throw ConfigError("lasso.tol must be > 0");
  if (solver.max_iter == 0) throw ConfigError("lasso.max_iter must be >= 1");
}

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds,
                                      const Eigen::VectorXi& strata, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (n < folds) throw InvalidInput("fewer rows than cross-validation folds");
  std::vector<std::vector<std::size_t>> buckets(1);
  if (strata.size() > 0) {
    const int hi = strata.maxCoeff();
    const int lo = strata.minCoeff();
    buckets.assign(static_cast<std::size_t>(hi - lo + 1), {});
    for (std::size_t i = 0; i < n; ++i) buckets[static_cast<std::size_t>(strata(static_cast<Eigen::Index>(i)) - lo)].push_back(i);
  } else {
    buckets[0].resize(n);
    std::iota(buckets[0].begin(), buckets[0].end(), 0);
  }
  Rng rng(seed);
  std::vector<std::size_t> fold(n, 0);
  std::size_t deal = 0;
  for (auto& b : buckets) {
    std::shuffle(b.begin(), b.end(), rng);
    for (auto i : b) fold[i] = deal++ % folds;
  }
  return fold;
}

PathFit fit_path_cv(const GroupedDesign& design, const Vector& y, const PathConfig& config,
                    std::uint64_t seed) {
  config.validate();
  check_response(design, y);
  const auto n = static_cast<std::size_t>(design.n());
  const double top = lambda_max(design, y);
  PathFit out;
  out.curve.lambdas = lambda_grid(top, config.n_lambda, config.lambda_min_ratio);
  const auto& grid = out.curve.lambdas;

  const Matrix xs = design.standardized();
  const auto fold = assign_folds(n, config.folds, design.strata(), seed);
  std::vector<std::vector<double>> errors(config.folds, std::vector<double>(grid.size(), 0.0));
  parallel_for(config.folds, config.threads, [&](std::size_t f) {
    IndexList train, test;
    split_folds(fold, f, train, test);
    const Matrix x_train = take_rows(xs, train);
    const Vector y_train = take(y, train);
    const Matrix x_test = take_rows(xs, test);
    const Vector y_test = take(y, test);
    const auto problem = make_problem(x_train, y_train, design);
    // the loss is a sum, so lambda scales with the training share
    const double shrink = static_cast<double>(train.size()) / static_cast<double>(n);
    Vector beta = Vector::Zero(xs.cols());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      bool converged = false;
      coordinate_descent(problem, grid[k] * shrink, config.solver, beta, converged);
      errors[f][k] = (y_test - x_test * beta).squaredNorm() / static_cast<double>(test.size());
    }
  });
  summarize(out.curve, errors);

  const auto problem = make_problem(xs, y, design);
  Vector beta = Vector::Zero(xs.cols());
  std::size_t sweeps = 0;
  bool converged = false;
  for (std::size_t k = 0; k <= out.curve.best; ++k) {
    sweeps = coordinate_descent(problem, grid[k], config.solver, beta, converged);
  }
  out.lambda = grid[out.curve.best];
  out.solution = finish(design, xs, y, out.lambda, std::move(beta), sweeps, converged, config.solver);
  return out;
}

namespace {

struct CenteredRidge {
  Vector col_mean;
  double y_mean = 0.0;
  Vector scale;
  Eigen::SelfAdjointEigenSolver<Matrix> eig;
  Vector proj;  // V^T Xc^T yc

  CenteredRidge(const Matrix& h, const Vector& y) {
    const Matrix x = h.rightCols(h.cols() - 1);
    col_mean = x.colwise().mean().transpose();
    y_mean = y.mean();
    Matrix xc = x.rowwise() - col_mean.transpose();
    scale = Vector::Ones(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double rms = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(x.rows()));
      if (rms > 0.0) scale(c) = rms;
      xc.col(c) /= scale(c);
    }
    eig.compute(xc.transpose() * xc);
    proj = eig.eigenvectors().transpose() * (xc.transpose() * (y.array() - y_mean).matrix());
  }

  Vector solve(double strength) const {
    const Vector ev = eig.eigenvalues().cwiseMax(0.0);
    Vector inv(ev.size());
    const double floor = 1e-12 * std::max(1.0, ev.size() > 0 ? ev.maxCoeff() : 1.0);
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
      const double den = ev(k) + strength;
      inv(k) = den > floor ? 1.0 / den : 0.0;
    }
    const Vector w_std = eig.eigenvectors() * inv.cwiseProduct(proj);
    const Vector w = w_std.cwiseQuotient(scale);
    Vector beta(w.size() + 1);
    beta(0) = y_mean - col_mean.dot(w);
    beta.tail(w.size()) = w;
    return beta;
  }
};

}  // namespace

Vector ridge(const Matrix& h, const Vector& y, double strength) {
  if (h.rows() != y.size()) throw InvalidInput("response length does not match the design");
  if (!(strength >= 0.0)) throw InvalidInput("ridge strength must be >= 0");
  if (h.cols() < 1) throw InvalidInput("ridge needs at least the constant column");
  if (h.cols() == 1) return Vector::Constant(1, y.mean());
  return CenteredRidge(h, y).solve(strength);
}

RidgeFit fit_ridge_cv(const Matrix& h, const Vector& y, std::size_t folds, std::uint64_t seed,
                      std::size_t n_strength) {
  if (h.rows() != y.size()) throw InvalidInput("response length does not match the design");
  if (n_strength < 2) throw ConfigError("ridge strength grid needs >= 2 points");
  RidgeFit out;
  const auto n = static_cast<std::size_t>(h.rows());
  if (h.cols() == 1) {
    out.beta = Vector::Constant(1, y.mean());
    return out;
  }
  // strengths relative to n since columns are standardized to unit RMS
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n_strength; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(n_strength - 1);
    out.curve.lambdas.push_back(nn * std::pow(10.0, 3.0 - 9.0 * frac));
  }
  const auto fold = assign_folds(n, folds, Eigen::VectorXi(), seed);
  std::vector<std::vector<double>> errors(folds, std::vector<double>(n_strength, 0.0));
  for (std::size_t f = 0; f < folds; ++f) {
    IndexList train, test;
    split_folds(fold, f, train, test);
    const CenteredRidge model(take_rows(h, train), take(y, train));
    const Matrix h_test = take_rows(h, test);
    const Vector y_test = take(y, test);
    const double shrink = static_cast<double>(train.size()) / nn;
    for (std::size_t k = 0; k < n_strength; ++k) {
      const Vector beta = model.solve(out.curve.lambdas[k] * shrink);
      errors[f][k] = (y_test - h_test * beta).squaredNorm() / static_cast<double>(test.size());
    }
  }
  summarize(out.curve, errors);
  out.strength = out.curve.lambdas[out.curve.best];
  out.beta = ridge(h, y, out.strength);
  return out;
}

}  // namespace scbm
