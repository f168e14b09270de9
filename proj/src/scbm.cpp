#include "scbm/scbm.hpp"

#include <algorithm>
#include <numeric>

#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

Matrix take_rows(const Matrix& m, const IndexList& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

TransformedOutcome transformed(const Dataset& data, const ScbmConfig& config,
                               PropensityModel& model) {
  PropensityConfig pc = config.propensity;
  pc.seed = derive_seed(config.seed, {0});
  pc.threads = config.threads;
  model = fit_propensity(data, pc);
  return transform_outcome(data, model.predict(data.covariates()), config.clip_epsilon);
}

BasisCollection pool(const std::vector<std::vector<BasisFunction>>& bases, FitDiagnostics& diag) {
  BasisCollection u;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    if (bases[b].size() <= 1) ++diag.empty_replicates;
    for (const auto& f : bases[b]) u.add(f, b + 1);
  }
  if (u.size() == 1) {
    diag.warnings.push_back(
        "no replicate accepted a hinge pair; the model reduces to per-arm intercepts");
  }
  return u;
}

PathFit penalized_fit(const GroupedDesign& design, const Vector& y, const ScbmConfig& config,
                      std::uint64_t seed) {
  if (config.fixed_lambda) {
    PathFit fit;
    fit.lambda = *config.fixed_lambda;
    fit.solution = solve(design, y, fit.lambda, config.lasso.solver);
    return fit;
  }
  PathConfig pc = config.lasso;
  pc.threads = config.threads;
  return fit_path_cv(design, y, pc, seed);
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::scbm: return "scbm";
    case Variant::prop0: return "prop0";
    case Variant::prop1: return "prop1";
  }
  return "scbm";
}

Variant parse_variant(const std::string& name) {
  if (name == "scbm") return Variant::scbm;
  if (name == "prop0") return Variant::prop0;
  if (name == "prop1") return Variant::prop1;
  throw ConfigError("unknown variant '" + name + "' (expected scbm, prop0 or prop1)");
}

void ScbmConfig::validate() const {
  if (b < 1) throw ConfigError("b must be >= 1");
  if (!(clip_epsilon >= 0.0 && clip_epsilon < 0.5)) throw ConfigError("clip_epsilon must lie in [0, 0.5)");
  if (fixed_lambda && !(*fixed_lambda >= 0.0)) throw ConfigError("fixed lambda must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  forward.validate();
  propensity.validate();
  lasso.validate();
}

void FittedScbm::check_dimension(std::size_t got) const {
  if (got != p) {
    throw InvalidInput("expected " + std::to_string(p) + " covariates, got " + std::to_string(got));
  }
}

Vector FittedScbm::effect_coefficients() const {
  return variant == Variant::scbm ? Vector(coef_treat - coef_control) : weights;
}

void FittedScbm::check_consistent() const {
  const auto m = static_cast<Eigen::Index>(basis.size());
  if (variant == Variant::scbm) {
    if (coef_treat.size() != m || coef_control.size() != m) {
      throw SchemaError("coefficient count does not match the basis");
    }
  } else if (weights.size() != m) {
    throw SchemaError("weight count does not match the basis");
  }
  for (const auto& f : basis) {
    if (f.min_dimension() > p) throw SchemaError("basis references a covariate beyond p");
  }
}

double FittedScbm::predict_hte(std::span<const double> x) const {
  check_dimension(x.size());
  double s = 0.0;
  if (variant == Variant::scbm) {
    for (std::size_t g = 0; g < basis.size(); ++g) {
      const auto k = static_cast<Eigen::Index>(g);
      s += (coef_treat(k) - coef_control(k)) * basis[g].eval(x);
    }
  } else {
    for (std::size_t g = 0; g < basis.size(); ++g) s += weights(static_cast<Eigen::Index>(g)) * basis[g].eval(x);
  }
  return s;
}

Vector FittedScbm::predict_hte(const Matrix& x) const {
  check_dimension(static_cast<std::size_t>(x.cols()));
  return design_matrix(basis, x) * effect_coefficients();
}

double FittedScbm::predict_outcome(std::span<const double> x, Arm arm) const {
  if (variant != Variant::scbm) {
    throw UnsupportedOperation(to_string(variant) + " models have no arm-specific outcome model");
  }
  check_dimension(x.size());
  const Vector& c = arm == Arm::treated ? coef_treat : coef_control;
  double s = 0.0;
  for (std::size_t g = 0; g < basis.size(); ++g) s += c(static_cast<Eigen::Index>(g)) * basis[g].eval(x);
  return s;
}

Vector FittedScbm::predict_outcome(const Matrix& x, Arm arm) const {
  if (variant != Variant::scbm) {
    throw UnsupportedOperation(to_string(variant) + " models have no arm-specific outcome model");
  }
  check_dimension(static_cast<std::size_t>(x.cols()));
  return design_matrix(basis, x) * (arm == Arm::treated ? coef_treat : coef_control);
}

std::vector<std::vector<BasisFunction>> grow_replicate_bases(const Matrix& x, const Vector& z,
                                                             const ScbmConfig& config) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::vector<BasisFunction>> out(config.b);
  parallel_for(config.b, config.threads, [&](std::size_t b) {
    IndexList rows(n);
    if (config.identity_resample) {
      std::iota(rows.begin(), rows.end(), 0);
    } else {
      Rng rng(derive_seed(config.seed, {1, b}));
      rows = bootstrap_indices(n, rng);
    }
    Vector zb(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) zb(static_cast<Eigen::Index>(i)) = z(static_cast<Eigen::Index>(rows[i]));
    out[b] = forward_pass(take_rows(x, rows), zb, config.forward, derive_seed(config.seed, {2, b})).basis;
  });
  return out;
}

FittedScbm fit_scbm(const Dataset& data, const ScbmConfig& config) {
  config.validate();
  if (config.variant != Variant::scbm) return fit_to_bagging_mars(data, config);
  data.require_both_arms();

  FittedScbm model;
  model.variant = Variant::scbm;
  model.p = data.p();
  model.feature_names = data.feature_names();
  model.config = config;
  const auto tr = transformed(data, config, model.propensity);
  const auto bases = grow_replicate_bases(data.covariates(), tr.z, config);
  const BasisCollection u = pool(bases, model.diagnostics);

  // a basis function that vanishes on one arm cannot carry a coefficient pair
  const Matrix full = design_matrix(u.functions(), data.covariates());
  std::vector<Eigen::Index> keep{0};
  for (Eigen::Index g = 1; g < full.cols(); ++g) {
    bool treated = false, control = false;
    for (Eigen::Index i = 0; i < full.rows(); ++i) {
      if (full(i, g) == 0.0) continue;
      (data.treated(static_cast<std::size_t>(i)) ? treated : control) = true;
    }
    if (treated && control) keep.push_back(g);
  }
  model.diagnostics.dropped_basis = static_cast<std::size_t>(full.cols()) - keep.size();
  Matrix h(full.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    h.col(static_cast<Eigen::Index>(k)) = full.col(keep[k]);
    model.basis.push_back(u[static_cast<std::size_t>(keep[k])]);
    model.provenance.push_back(u.provenance()[static_cast<std::size_t>(keep[k])]);
  }

  const auto design = GroupedDesign::arm_pairs(h, data.treatment());
  auto fit = penalized_fit(design, data.outcome(), config, derive_seed(config.seed, {3}));
  const auto m = h.cols();
  model.coef_treat.resize(m);
  model.coef_control.resize(m);
  for (Eigen::Index g = 0; g < m; ++g) {
    model.coef_treat(g) = fit.solution.beta(2 * g);
    model.coef_control(g) = fit.solution.beta(2 * g + 1);
    if (g > 0 && (model.coef_treat(g) != 0.0 || model.coef_control(g) != 0.0)) {
      ++model.diagnostics.active_groups;
    }
  }
  model.diagnostics.lambda = fit.lambda;
  model.diagnostics.curve = std::move(fit.curve);
  model.diagnostics.column_scale = design.scale();
  return model;
}

FittedScbm fit_to_bagging_mars(const Dataset& data, const ScbmConfig& config) {
  config.validate();
  if (config.variant == Variant::scbm) {
    throw ConfigError("fit_to_bagging_mars needs variant prop0 or prop1");
  }
  data.require_both_arms();

  FittedScbm model;
  model.variant = config.variant;
  model.p = data.p();
  model.feature_names = data.feature_names();
  model.config = config;
  const auto tr = transformed(data, config, model.propensity);
  const auto bases = grow_replicate_bases(data.covariates(), tr.z, config);
  const BasisCollection u = pool(bases, model.diagnostics);
  model.basis = u.functions();
  model.provenance = u.provenance();
  const auto m = static_cast<Eigen::Index>(u.size());

  if (config.variant == Variant::prop0) {
    model.weights = Vector::Zero(m);
    std::vector<Vector> per(config.b);
    std::vector<double> lambdas(config.b, 0.0);
    // replicates are independent; the averaging order below is fixed
    parallel_for(config.b, config.threads, [&](std::size_t b) {
      const Matrix h = design_matrix(bases[b], data.covariates());
      ScbmConfig inner = config;
      inner.threads = 1;
      const auto fit = penalized_fit(GroupedDesign::singletons(h), tr.z, inner,
                                     derive_seed(config.seed, {4, b}));
      per[b] = fit.solution.beta;
      lambdas[b] = fit.lambda;
    });
    for (std::size_t b = 0; b < config.b; ++b) {
      for (std::size_t k = 0; k < bases[b].size(); ++k) {
        const auto at = static_cast<Eigen::Index>(*u.find(bases[b][k]));
        model.weights(at) += per[b](static_cast<Eigen::Index>(k)) / static_cast<double>(config.b);
      }
    }
    model.diagnostics.lambda = median(lambdas);
  } else {
    const Matrix h = design_matrix(u.functions(), data.covariates());
    auto fit = fit_ridge_cv(h, tr.z, config.lasso.folds, derive_seed(config.seed, {5}));
    model.weights = fit.beta;
    model.diagnostics.lambda = fit.strength;
    model.diagnostics.curve = std::move(fit.curve);
  }
  for (Eigen::Index g = 1; g < m; ++g) model.diagnostics.active_groups += model.weights(g) != 0.0;
  return model;
}

FittedScbm fit_model(const Dataset& data, const ScbmConfig& config) {
  return config.variant == Variant::scbm ? fit_scbm(data, config) : fit_to_bagging_mars(data, config);
}

}  // namespace scbm
