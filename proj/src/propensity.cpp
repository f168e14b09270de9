#include "scbm/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

class TreeGrower {
 public:
  TreeGrower(const Matrix& x, const Eigen::VectorXi& t, const ForestConfig& config,
             std::size_t features_per_split, Rng& rng)
      : x_(x), t_(t), config_(config), mtry_(features_per_split), rng_(rng) {
    features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(features_.begin(), features_.end(), 0);
  }

  ProbabilityTree grow(IndexList rows) {
    ProbabilityTree tree;
    tree_ = &tree;
    build(std::move(rows), 0);
    return tree;
  }

 private:
  std::int32_t build(IndexList rows, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree_->nodes.size());
    tree_->nodes.emplace_back();
    std::size_t treated = 0;
    for (auto r : rows) treated += static_cast<std::size_t>(t_(static_cast<Eigen::Index>(r)));
    const double m = static_cast<double>(rows.size());
    tree_->nodes[static_cast<std::size_t>(id)].value = static_cast<double>(treated) / m;

    if (depth >= config_.max_depth || rows.size() < 2 * config_.min_leaf || treated == 0 ||
        treated == rows.size()) {
      return id;
    }

    // Partial Fisher-Yates draw of the candidate features for this split.
    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
      std::swap(features_[k], features_[pick(rng_)]);
    }

    const double parent_score = 2.0 * static_cast<double>(treated) *
                                static_cast<double>(rows.size() - treated) / m;
    double best_gain = 0.0;
    std::int32_t best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> sorted(rows.size());
    for (std::size_t k = 0; k < mtry_; ++k) {
      const auto j = static_cast<Eigen::Index>(features_[k]);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(rows[r]);
        sorted[r] = {x_(i, j), t_(i)};
      }
      std::sort(sorted.begin(), sorted.end());
      double left_n = 0, left_t = 0;
      for (std::size_t r = 0; r + 1 < sorted.size(); ++r) {
        left_n += 1;
        left_t += sorted[r].second;
        if (sorted[r].first == sorted[r + 1].first) continue;
        const double right_n = m - left_n;
        if (left_n < static_cast<double>(config_.min_leaf) ||
            right_n < static_cast<double>(config_.min_leaf)) {
          continue;
        }
        const double right_t = static_cast<double>(treated) - left_t;
        const double score = 2.0 * left_t * (left_n - left_t) / left_n +
                             2.0 * right_t * (right_n - right_t) / right_n;
        const double gain = parent_score - score;
        if (gain > best_gain + 1e-12 * parent_score) {
          best_gain = gain;
          best_feature = static_cast<std::int32_t>(j);
          best_threshold = 0.5 * (sorted[r].first + sorted[r + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    IndexList left, right;
    for (auto r : rows) {
      (x_(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const auto l = build(std::move(left), depth + 1);
    const auto rgt = build(std::move(right), depth + 1);
    auto& node = tree_->nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = rgt;
    return id;
  }

  const Matrix& x_;
  const Eigen::VectorXi& t_;
  const ForestConfig& config_;
  std::size_t mtry_;
  Rng& rng_;
  std::vector<std::size_t> features_;
  ProbabilityTree* tree_ = nullptr;
};

ForestPropensity fit_forest(const Dataset& data, const PropensityConfig& config) {
  const std::size_t p = data.p();
  std::size_t mtry = config.forest.features_per_split;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(p))));
  mtry = std::clamp<std::size_t>(mtry, 1, p);

  ForestPropensity forest;
  forest.config = config.forest;
  forest.seed = config.seed;
  forest.trees.resize(config.forest.trees);
  parallel_for(config.forest.trees, config.threads, [&](std::size_t b) {
    Rng rng(derive_seed(config.seed, {b}));
    IndexList rows;
    if (config.forest.bootstrap) {
      rows = bootstrap_indices(data.n(), rng);
    } else {
      rows.resize(data.n());
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeGrower grower(data.covariates(), data.treatment(), config.forest, mtry, rng);
    forest.trees[b] = grower.grow(std::move(rows));
  });
  return forest;
}

LogisticPropensity fit_logistic(const Dataset& data, const PropensityConfig& config) {
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto p = static_cast<Eigen::Index>(data.p());
  Matrix design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = data.covariates();
  const Vector t = data.treatment().cast<double>();
  const double ridge = config.logistic_ridge;

  auto objective = [&](const Vector& w) {
    const Vector eta = design * w;
    double nll = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + exp(eta)) - t * eta, evaluated stably
      const double e = eta(i);
      nll += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - t(i) * e;
    }
    return nll + 0.5 * ridge * w.tail(p).squaredNorm();
  };

  Vector w = Vector::Zero(p + 1);
  double f = objective(w);
  double grad_norm = 0;
  for (std::size_t iter = 0; iter < config.logistic_max_iter; ++iter) {
    const Vector eta = design * w;
    Vector prob(n), weight(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = logistic(eta(i));
      weight(i) = prob(i) * (1.0 - prob(i));
    }
    Vector grad = design.transpose() * (prob - t);
    grad.tail(p) += ridge * w.tail(p);
    grad_norm = grad.norm();
    if (grad_norm <= config.logistic_tolerance) {
      return {w(0), w.tail(p), iter, grad_norm};
    }
    Matrix hessian = design.transpose() * weight.asDiagonal() * design;
    hessian.diagonal().tail(p).array() += ridge;
    hessian(0, 0) += 1e-12 * std::max(1.0, hessian.trace());
    const Vector step = hessian.ldlt().solve(grad);

    double alpha = 1.0;
    Vector candidate = w - step;
    double fc = objective(candidate);
    const double slope = grad.dot(step);
    // near the optimum the decrease drops below the rounding of f itself
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
    while (fc > f - 1e-4 * alpha * slope + noise && alpha > 1e-10) {
      alpha *= 0.5;
      candidate = w - alpha * step;
      fc = objective(candidate);
    }
    w = candidate;
    f = fc;
  }
  std::ostringstream msg;
  msg << "logistic propensity did not converge in " << config.logistic_max_iter
      << " iterations; gradient norm reached " << grad_norm;
  throw ConvergenceError(msg.str(), grad_norm);
}

}  // namespace

void PropensityConfig::validate() const {
  if (!(constant > 0.0 && constant < 1.0)) {
    throw ConfigError("propensity.constant must lie in (0, 1)");
  }
  if (!(logistic_ridge >= 0.0)) throw ConfigError("propensity.logistic_ridge must be >= 0");
  if (!(logistic_tolerance > 0.0)) throw ConfigError("propensity.logistic_tolerance must be > 0");
  if (logistic_max_iter == 0) throw ConfigError("propensity.logistic_max_iter must be >= 1");
  if (forest.trees == 0) throw ConfigError("propensity.forest.trees must be >= 1");
  if (forest.min_leaf == 0) throw ConfigError("propensity.forest.min_leaf must be >= 1");
}

double ProbabilityTree::predict(const Matrix& x, Eigen::Index row) const {
  std::size_t k = 0;
  while (nodes[k].feature >= 0) {
    const auto& node = nodes[k];
    k = static_cast<std::size_t>(x(row, node.feature) <= node.threshold ? node.left : node.right);
  }
  return nodes[k].value;
}

PropensityKind PropensityModel::kind() const noexcept {
  switch (params_.index()) {
    case 0: return PropensityKind::known_constant;
    case 1: return PropensityKind::logistic;
    default: return PropensityKind::random_forest;
  }
}

double PropensityModel::predict(const Matrix& x, Eigen::Index row) const {
  if (const auto* c = std::get_if<ConstantPropensity>(&params_)) return c->value;
  if (const auto* l = std::get_if<LogisticPropensity>(&params_)) {
    if (x.cols() != l->coefficients.size()) {
      throw InvalidInput("propensity model expects " + std::to_string(l->coefficients.size()) +
                         " covariates, got " + std::to_string(x.cols()));
    }
    return logistic(l->intercept + x.row(row).dot(l->coefficients));
  }
  const auto& forest = std::get<ForestPropensity>(params_);
  double sum = 0;
  for (const auto& tree : forest.trees) sum += tree.predict(x, row);
  return sum / static_cast<double>(forest.trees.size());
}

Vector PropensityModel::predict(const Matrix& x) const {
  Vector e(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) e(i) = predict(x, i);
  return e;
}

PropensityModel fit_propensity(const Dataset& data, const PropensityConfig& config) {
  config.validate();
  if (config.kind == PropensityKind::known_constant) {
    return PropensityModel(ConstantPropensity{config.constant});
  }
  data.require_both_arms();
  if (config.kind == PropensityKind::logistic) {
    return PropensityModel(fit_logistic(data, config));
  }
  return PropensityModel(fit_forest(data, config));
}

TransformedOutcome transform_outcome(const Dataset& data, const Vector& e_hat,
                                     double clip_epsilon) {
  if (!(clip_epsilon >= 0.0 && clip_epsilon < 0.5)) {
    throw InvalidInput("clip_epsilon must lie in [0, 0.5)");
  }
  if (static_cast<std::size_t>(e_hat.size()) != data.n()) {
    throw InvalidInput("propensity vector length does not match the dataset");
  }
  TransformedOutcome out;
  out.clip_epsilon = clip_epsilon;
  out.z.resize(e_hat.size());
  out.propensity_used.resize(e_hat.size());
  const auto& y = data.outcome();
  for (Eigen::Index i = 0; i < e_hat.size(); ++i) {
    if (!std::isfinite(e_hat(i))) throw InvalidInput("non-finite propensity score");
    const double e = std::clamp(e_hat(i), clip_epsilon, 1.0 - clip_epsilon);
    if (!(e > 0.0 && e < 1.0)) {
      throw InvalidInput("propensity score at the boundary with clipping disabled (row " +
                         std::to_string(i + 1) + ")");
    }
    out.propensity_used(i) = e;
    out.z(i) = data.treated(static_cast<std::size_t>(i)) ? y(i) / e : -y(i) / (1.0 - e);
  }
  return out;
}

}  // namespace scbm
