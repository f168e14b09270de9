#include "scbm/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

void require_arm_model(const FittedScbm& model, const char* what) {
  if (model.variant != Variant::scbm) {
    throw UnsupportedOperation(std::string(what) + " needs per-arm coefficients; " +
                               to_string(model.variant) + " models have none");
  }
}

// Squared error of own-arm predictions using only the groups in `keep`.
double own_arm_loss(const Matrix& h, const Dataset& data, const Vector& treat, const Vector& control,
                    const std::vector<char>& keep) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const Vector& c = data.treated(static_cast<std::size_t>(i)) ? treat : control;
    double f = 0.0;
    for (Eigen::Index g = 0; g < h.cols(); ++g) {
      if (keep[static_cast<std::size_t>(g)]) f += c(g) * h(i, g);
    }
    const double r = data.outcome()(i) - f;
    loss += r * r;
  }
  return loss;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

std::string to_string(ImportanceMode mode) {
  return mode == ImportanceMode::refit ? "refit" : "zero-groups";
}

ImportanceMode parse_importance_mode(const std::string& name) {
  if (name == "zero-groups" || name == "zero_groups") return ImportanceMode::zero_groups;
  if (name == "refit") return ImportanceMode::refit;
  throw ConfigError("unknown importance mode '" + name + "' (expected zero-groups or refit)");
}

Vector normalize_importance(const Vector& raw) {
  Vector out = Vector::Zero(raw.size());
  if (raw.size() == 0) return out;
  const double top = raw.maxCoeff();
  if (!(top > 0.0)) return out;
  for (Eigen::Index j = 0; j < raw.size(); ++j) out(j) = raw(j) > 0.0 ? 100.0 * raw(j) / top : 0.0;
  return out;
}

ImportanceReport variable_importance(const FittedScbm& model, const Dataset& data,
                                     ImportanceMode mode) {
  require_arm_model(model, "variable importance");
  if (data.p() != model.p) throw InvalidInput("dataset covariate count does not match the model");
  const Matrix h = design_matrix(model.basis, data.covariates());
  const std::vector<char> all(model.basis.size(), 1);

  ImportanceReport rep;
  rep.mode = mode;
  rep.baseline_loss = own_arm_loss(h, data, model.coef_treat, model.coef_control, all);
  rep.raw = Vector::Zero(static_cast<Eigen::Index>(data.p()));
  for (std::size_t j = 0; j < data.p(); ++j) {
    std::vector<char> keep(model.basis.size(), 1);
    bool touched = false;
    for (std::size_t g = 0; g < model.basis.size(); ++g) {
      if (model.basis[g].uses_variable(j)) {
        keep[g] = 0;
        touched = true;
      }
    }
    if (!touched) continue;
    double loss = 0.0;
    if (mode == ImportanceMode::zero_groups) {
      loss = own_arm_loss(h, data, model.coef_treat, model.coef_control, keep);
    } else {
      std::vector<Eigen::Index> cols;
      for (std::size_t g = 0; g < keep.size(); ++g) {
        if (keep[g]) cols.push_back(static_cast<Eigen::Index>(g));
      }
      Matrix sub(h.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = h.col(cols[c]);
      const auto fit = solve(GroupedDesign::arm_pairs(sub, data.treatment()), data.outcome(),
                             model.diagnostics.lambda, model.config.lasso.solver);
      Vector t = Vector::Zero(h.cols()), c = Vector::Zero(h.cols());
      for (std::size_t k = 0; k < cols.size(); ++k) {
        t(cols[k]) = fit.beta(2 * static_cast<Eigen::Index>(k));
        c(cols[k]) = fit.beta(2 * static_cast<Eigen::Index>(k) + 1);
      }
      loss = own_arm_loss(h, data, t, c, all);
    }
    rep.raw(static_cast<Eigen::Index>(j)) = loss - rep.baseline_loss;
  }
  rep.normalized = normalize_importance(rep.raw);
  rep.names = data.feature_names();
  return rep;
}

std::vector<double> default_grid(const Matrix& x, std::size_t j, std::size_t points) {
  if (j >= static_cast<std::size_t>(x.cols())) throw InvalidInput("variable index out of range");
  if (x.rows() == 0) throw InvalidInput("partial dependence needs at least one row");
  const auto col = x.col(static_cast<Eigen::Index>(j));
  std::vector<double> v(col.data(), col.data() + col.size());
  if (std::all_of(v.begin(), v.end(), [](double a) { return a == 0.0 || a == 1.0; })) return {0.0, 1.0};
  std::vector<double> grid;
  const std::size_t m = std::max<std::size_t>(points, 2);
  for (std::size_t k = 0; k < m; ++k) {
    grid.push_back(quantile(v, static_cast<double>(k) / static_cast<double>(m - 1)));
  }
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

PartialDependence partial_dependence(const FittedScbm& model, const Matrix& x, std::size_t j,
                                     std::optional<std::vector<double>> grid, std::optional<Arm> arm) {
  if (static_cast<std::size_t>(x.cols()) != model.p) throw InvalidInput("covariate count does not match the model");
  if (j >= model.p) throw InvalidInput("variable index out of range");
  if (arm) require_arm_model(model, "outcome partial dependence");
  PartialDependence pd;
  pd.variable = j;
  pd.arm = arm;
  pd.grid = grid ? std::move(*grid) : default_grid(x, j);
  if (pd.grid.empty()) throw InvalidInput("partial dependence grid is empty");
  if (!std::all_of(pd.grid.begin(), pd.grid.end(), [](double c) { return std::isfinite(c); })) {
    throw InvalidInput("partial dependence grid values must be finite");
  }
  std::sort(pd.grid.begin(), pd.grid.end());
  pd.grid.erase(std::unique(pd.grid.begin(), pd.grid.end()), pd.grid.end());
  Matrix xc = x;
  for (double c : pd.grid) {
    xc.col(static_cast<Eigen::Index>(j)).setConstant(c);
    const Vector f = arm ? model.predict_outcome(xc, *arm) : model.predict_hte(xc);
    pd.values.push_back(f.mean());
  }
  return pd;
}

void CalibrationConfig::validate() const {
  if (k < 2) throw ConfigError("calibration.k must be >= 2");
  if (replications < 1) throw ConfigError("calibration.replications must be >= 1");
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("calibration.holdout must lie in (0, 1)");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

CalibrationReplicate calibrate_once(const Vector& tau_hat, const Dataset& data, std::size_t k,
                                    const Vector* e) {
  const std::size_t m = data.n();
  if (static_cast<std::size_t>(tau_hat.size()) != m) throw InvalidInput("one estimate per row is required");
  if (k < 2 || k > m) throw InvalidInput("subgroup count must lie in [2, rows]");
  if (e && static_cast<std::size_t>(e->size()) != m) throw InvalidInput("one propensity per row is required");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tau_hat(static_cast<Eigen::Index>(a)) < tau_hat(static_cast<Eigen::Index>(b));
  });
  CalibrationReplicate rep;
  std::vector<double> est, ate;
  for (std::size_t g = 0; g < k; ++g) {
    const std::size_t lo = g * m / k, hi = (g + 1) * m / k;
    Subgroup s;
    double sum = 0.0, wt = 0.0, yt = 0.0, wc = 0.0, yc = 0.0;
    for (std::size_t r = lo; r < hi; ++r) {
      const auto i = static_cast<Eigen::Index>(order[r]);
      sum += tau_hat(i);
      const double y = data.outcome()(i);
      if (data.treated(order[r])) {
        const double w = e ? 1.0 / (*e)(i) : 1.0;
        ++s.treated;
        wt += w;
        yt += w * y;
      } else {
        const double w = e ? 1.0 / (1.0 - (*e)(i)) : 1.0;
        ++s.control;
        wc += w;
        yc += w * y;
      }
    }
    s.mean_tau_hat = sum / static_cast<double>(hi - lo);
    if (s.treated > 0 && s.control > 0) {
      s.ate = yt / wt - yc / wc;
      est.push_back(s.mean_tau_hat);
      ate.push_back(*s.ate);
    }
    rep.groups.push_back(s);
  }
  for (std::size_t g = 1; g < k; ++g) {
    if (rep.groups[g].mean_tau_hat < rep.groups[g - 1].mean_tau_hat) {
      throw Error("subgroup means are not sorted");
    }
  }
  rep.spearman = est.size() >= 2 ? spearman(est, ate) : nan();
  return rep;
}

namespace {

CalibrationReport summarize(std::vector<CalibrationReplicate> reps, std::size_t k) {
  CalibrationReport out;
  out.k = k;
  out.mean_tau_hat.assign(k, 0.0);
  out.mean_ate.assign(k, 0.0);
  out.ate_available.assign(k, 0);
  for (const auto& r : reps) {
    if (r.spearman > 0.0) ++out.positive_replicates;
    for (std::size_t g = 0; g < k; ++g) {
      out.mean_tau_hat[g] += r.groups[g].mean_tau_hat / static_cast<double>(reps.size());
      if (r.groups[g].ate) {
        out.mean_ate[g] += *r.groups[g].ate;
        ++out.ate_available[g];
      }
    }
  }
  std::vector<double> est, ate;
  for (std::size_t g = 0; g < k; ++g) {
    if (out.ate_available[g] == 0) {
      out.mean_ate[g] = nan();
      continue;
    }
    out.mean_ate[g] /= static_cast<double>(out.ate_available[g]);
    est.push_back(out.mean_tau_hat[g]);
    ate.push_back(out.mean_ate[g]);
  }
  out.spearman = est.size() >= 2 ? spearman(est, ate) : nan();
  out.replicates = std::move(reps);
  return out;
}

}  // namespace

CalibrationReport subgroup_calibration(const Dataset& data, const RefitProtocol& fit,
                                       const CalibrationConfig& config) {
  config.validate();
  const std::size_t n = data.n();
  const auto held = static_cast<std::size_t>(std::llround(config.holdout * static_cast<double>(n)));
  if (held < config.k || held >= n) throw ConfigError("calibration.holdout leaves too few rows on one side");
  std::vector<CalibrationReplicate> reps(config.replications);
  parallel_for(config.replications, config.threads, [&](std::size_t r) {
    Rng rng(derive_seed(config.seed, {r}));
    IndexList rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    const IndexList test(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(held));
    const IndexList train(rows.begin() + static_cast<std::ptrdiff_t>(held), rows.end());
    const Dataset tr = data.subset(train);
    const Dataset te = data.subset(test);
    const Predictors pred = fit(tr, derive_seed(config.seed, {r, 1}));
    const Vector tau = pred.tau(te.covariates());
    if (config.iptw) {
      const Vector e = pred.propensity(te.covariates());
      reps[r] = calibrate_once(tau, te, config.k, &e);
    } else {
      reps[r] = calibrate_once(tau, te, config.k);
    }
  });
  return summarize(std::move(reps), config.k);
}

CalibrationReport subgroup_calibration(const Dataset& data, const ScbmConfig& model_config,
                                       const CalibrationConfig& config) {
  const RefitProtocol protocol = [&](const Dataset& train, std::uint64_t seed) {
    ScbmConfig c = model_config;
    c.seed = seed;
    c.threads = 1;
    auto model = std::make_shared<FittedScbm>(fit_model(train, c));
    const double eps = std::max(c.clip_epsilon, 1e-6);
    return Predictors{
        [model](const Matrix& x) { return model->predict_hte(x); },
        [model, eps](const Matrix& x) {
          return Vector(model->propensity.predict(x).cwiseMax(eps).cwiseMin(1.0 - eps));
        }};
  };
  return subgroup_calibration(data, protocol, config);
}

CalibrationReport subgroup_calibration(const FittedScbm& model, const Dataset& data, std::size_t k,
                                       bool iptw) {
  const Vector tau = model.predict_hte(data.covariates());
  std::vector<CalibrationReplicate> reps;
  if (iptw) {
    const double eps = std::max(model.config.clip_epsilon, 1e-6);
    const Vector e = model.propensity.predict(data.covariates()).cwiseMax(eps).cwiseMin(1.0 - eps);
    reps.push_back(calibrate_once(tau, data, k, &e));
  } else {
    reps.push_back(calibrate_once(tau, data, k));
  }
  return summarize(std::move(reps), k);
}

void write_importance_csv(const ImportanceReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "variable,name,raw,normalized\n";
  for (Eigen::Index j = 0; j < report.raw.size(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    const std::string name = k < report.names.size() ? report.names[k] : "x" + std::to_string(k + 1);
    out << j << ',' << name << ',' << format_double(report.raw(j)) << ','
        << format_double(report.normalized(j)) << '\n';
  }
}

void write_importance_json(const ImportanceReport& report, const std::string& path) {
  nlohmann::json vars = nlohmann::json::array();
  for (Eigen::Index j = 0; j < report.raw.size(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    vars.push_back({{"variable", j},
                    {"name", k < report.names.size() ? report.names[k] : "x" + std::to_string(k + 1)},
                    {"raw", report.raw(j)},
                    {"normalized", report.normalized(j)}});
  }
  auto out = open_out(path);
  out << nlohmann::json{{"mode", to_string(report.mode)},
                        {"baseline_loss", report.baseline_loss},
                        {"variables", vars}}
             .dump(2)
      << '\n';
}

void write_pdp_csv(const std::vector<PartialDependence>& curves, const std::string& path) {
  auto out = open_out(path);
  out << "variable,target,grid,value\n";
  for (const auto& c : curves) {
    const std::string target = !c.arm ? "hte" : (*c.arm == Arm::treated ? "treated" : "control");
    for (std::size_t k = 0; k < c.grid.size(); ++k) {
      out << c.variable << ',' << target << ',' << format_double(c.grid[k]) << ','
          << format_double(c.values[k]) << '\n';
    }
  }
}

void write_calibration_csv(const CalibrationReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "subgroup,mean_tau_hat,mean_ate,ate_replicates\n";
  for (std::size_t g = 0; g < report.k; ++g) {
    out << g + 1 << ',' << format_double(report.mean_tau_hat[g]) << ','
        << (std::isfinite(report.mean_ate[g]) ? format_double(report.mean_ate[g]) : "") << ','
        << report.ate_available[g] << '\n';
  }
}

void write_calibration_json(const CalibrationReport& report, const std::string& path) {
  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t g = 0; g < report.k; ++g) {
    groups.push_back({{"subgroup", g + 1},
                      {"mean_tau_hat", report.mean_tau_hat[g]},
                      {"mean_ate", number_or_null(report.mean_ate[g])},
                      {"ate_replicates", report.ate_available[g]}});
  }
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : report.replicates) {
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& s : r.groups) {
      gs.push_back({{"mean_tau_hat", s.mean_tau_hat},
                    {"ate", s.ate ? nlohmann::json(*s.ate) : nlohmann::json(nullptr)},
                    {"treated", s.treated},
                    {"control", s.control}});
    }
    reps.push_back({{"spearman", number_or_null(r.spearman)}, {"subgroups", gs}});
  }
  auto out = open_out(path);
  out << nlohmann::json{{"k", report.k},
                        {"replications", report.replicates.size()},
                        {"spearman", number_or_null(report.spearman)},
                        {"positive_replicates", report.positive_replicates},
                        {"subgroups", groups},
                        {"per_replication", reps}}
             .dump(2)
      << '\n';
}

}  // namespace scbm
