#include "scbm/baselines.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>

#include "hinge_scan.hpp"
#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {
namespace {

struct CausalGrowth {
  std::vector<BasisFunction> basis;
  std::vector<AcceptedSplit> splits;
  std::vector<double> rss_trace;
  Matrix design;
  /// Cell rows for (group g, arm a) at index 2 g + a.
  std::vector<IndexList> cell_rows;
};

double total_rss(const std::vector<detail::Cell>& cells) {
  double s = 0.0;
  for (const auto& c : cells) s += c.rss();
  return s;
}

// Forward growth scored by the summed gain of arm-specific over shared
// coefficients within each group of rows.
CausalGrowth causal_forward(const Matrix& x, const Vector& y, const std::vector<std::size_t>& group,
                            std::size_t groups, const Eigen::VectorXi& t,
                            const ForwardConfig& config, std::uint64_t seed) {
  config.validate();
  if (!y.allFinite()) throw InvalidInput("outcome contains non-finite values");
  const auto n = static_cast<std::size_t>(x.rows());
  CausalGrowth out;
  out.cell_rows.assign(2 * groups, {});
  for (std::size_t i = 0; i < n; ++i) {
    out.cell_rows[2 * group[i] + (t(static_cast<Eigen::Index>(i)) == 1 ? 1 : 0)].push_back(i);
  }
  std::vector<detail::Cell> cells;
  cells.reserve(out.cell_rows.size());
  for (const auto& rows : out.cell_rows) cells.emplace_back(rows, y);

  out.basis.push_back(BasisFunction::constant());
  out.design = Matrix::Ones(x.rows(), 1);
  for (auto& c : cells) c.add_column(out.design.col(0));
  out.rss_trace.push_back(total_rss(cells));
  // gains below this are rounding noise even when the fit is already exact
  const double floor = 1e-12 * y.squaredNorm();

  Rng rng(seed);
  const auto p = static_cast<std::size_t>(x.cols());
  while (out.basis.size() - 1 < config.m_max) {
    detail::HingeScanner scanner(n, cells);
    double best_gain = -std::numeric_limits<double>::infinity();
    AcceptedSplit best;
    bool found = false;
    for (std::size_t m = 0; m < out.basis.size(); ++m) {
      if (out.basis[m].degree() >= config.k_max) continue;
      const Vector parent = out.design.col(static_cast<Eigen::Index>(m));
      for (std::size_t j = 0; j < p; ++j) {
        if (out.basis[m].uses_variable(j)) continue;
        scanner.scan(parent, x.col(static_cast<Eigen::Index>(j)), config.min_active,
                     config.child_guard(p), config.knot_subsample, &rng,
                     [&](double knot, std::span<const detail::PairStats> stats) {
                       double gain = 0.0;
                       for (std::size_t g = 0; g < groups; ++g) {
                         const auto& c = stats[2 * g];
                         const auto& d = stats[2 * g + 1];
                         const double separate = detail::pair_reduction(c) + detail::pair_reduction(d);
                         const double shared = detail::pair_reduction(
                             c.aa + d.aa, c.bb + d.bb, c.qa.squaredNorm() + d.qa.squaredNorm(),
                             c.qb.squaredNorm() + d.qb.squaredNorm(), c.qa.dot(c.qb) + d.qa.dot(d.qb),
                             c.ar + d.ar, c.br + d.br);
                         gain += separate - shared;
                       }
                       if (gain > best_gain) {
                         best_gain = gain;
                         best = {m, j, knot, gain};
                         found = true;
                       }
                     });
      }
    }
    const double rss = total_rss(cells);
    if (!found || !(best_gain > 1e-12 * rss) || !(best_gain > floor)) break;

    const auto& parent = out.basis[best.parent];
    const BasisFunction plus = parent.times({best.variable, Sign::positive, best.knot});
    const BasisFunction minus = parent.times({best.variable, Sign::negative, best.knot});
    const auto cols = out.design.cols();
    out.design.conservativeResize(Eigen::NoChange, cols + 2);
    out.design.col(cols) = design_column(plus, x);
    out.design.col(cols + 1) = design_column(minus, x);
    for (auto& c : cells) {
      c.add_column(out.design.col(cols));
      c.add_column(out.design.col(cols + 1));
    }
    out.basis.push_back(plus);
    out.basis.push_back(minus);
    out.splits.push_back(best);
    out.rss_trace.push_back(total_rss(cells));
  }
  return out;
}

Vector cell_coefficients(const Matrix& design, const Vector& y, const IndexList& rows) {
  if (rows.empty()) return Vector::Zero(design.cols());
  Matrix d(static_cast<Eigen::Index>(rows.size()), design.cols());
  Vector r(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.row(static_cast<Eigen::Index>(i)) = design.row(static_cast<Eigen::Index>(rows[i]));
    r(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
  }
  return least_squares(d, r);
}

}  // namespace

Vector CausalMarsFit::predict_hte(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != p) throw InvalidInput("covariate count does not match the fit");
  return design_matrix(basis, x) * (coef_treat - coef_control);
}

Vector CausalMarsFit::predict_outcome(const Matrix& x, Arm arm) const {
  if (static_cast<std::size_t>(x.cols()) != p) throw InvalidInput("covariate count does not match the fit");
  return design_matrix(basis, x) * (arm == Arm::treated ? coef_treat : coef_control);
}

CausalMarsFit fit_causal_mars(const Dataset& data, const ForwardConfig& config, std::uint64_t seed) {
  data.require_both_arms();
  const std::vector<std::size_t> group(data.n(), 0);
  auto growth = causal_forward(data.covariates(), data.outcome(), group, 1, data.treatment(), config, seed);
  CausalMarsFit fit;
  fit.p = data.p();
  fit.feature_names = data.feature_names();
  fit.config = config;
  fit.coef_control = cell_coefficients(growth.design, data.outcome(), growth.cell_rows[0]);
  fit.coef_treat = cell_coefficients(growth.design, data.outcome(), growth.cell_rows[1]);
  fit.basis = std::move(growth.basis);
  fit.rss_trace = std::move(growth.rss_trace);
  fit.splits = std::move(growth.splits);
  return fit;
}

void BcmConfig::validate() const {
  if (b < 1) throw ConfigError("bcm.b must be >= 1");
  if (q < 1) throw ConfigError("bcm.q must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  forward.validate();
}

std::size_t StratifiedBcmFit::stratum_of(double e) const {
  return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), e) - edges.begin());
}

Vector StratifiedBcmFit::predict_replicate(std::size_t b, const Matrix& x, const Vector& e) const {
  if (static_cast<std::size_t>(x.cols()) != p) throw InvalidInput("covariate count does not match the fit");
  if (e.size() != x.rows()) throw InvalidInput("propensity length does not match the rows");
  const auto& rep = replicates.at(b);
  const Matrix h = design_matrix(rep.basis, x);
  const Matrix effect = rep.coef_treat - rep.coef_control;
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto g = static_cast<Eigen::Index>(rep.group_of_stratum[stratum_of(e(i))]);
    out(i) = h.row(i).dot(effect.col(g));
  }
  return out;
}

Vector StratifiedBcmFit::predict_hte(const Matrix& x, const Vector& e) const {
  Vector sum = Vector::Zero(x.rows());
  for (std::size_t b = 0; b < replicates.size(); ++b) sum += predict_replicate(b, x, e);
  return sum / static_cast<double>(replicates.size());
}

Vector StratifiedBcmFit::predict_hte(const Matrix& x) const {
  return predict_hte(x, propensity.predict(x));
}

StratifiedBcmFit fit_bcm(const Dataset& data, const BcmConfig& config,
                         const PropensityModel& propensity) {
  auto fit = fit_bcm(data, config, propensity.predict(data.covariates()));
  fit.propensity = propensity;
  return fit;
}

StratifiedBcmFit fit_bcm(const Dataset& data, const BcmConfig& config, const Vector& e) {
  config.validate();
  data.require_both_arms();
  const auto n = data.n();
  if (static_cast<std::size_t>(e.size()) != n) throw InvalidInput("propensity length does not match the rows");
  if (!e.allFinite()) throw InvalidInput("propensities must be finite");
  StratifiedBcmFit fit;
  fit.p = data.p();
  fit.feature_names = data.feature_names();
  fit.config = config;
  fit.q = config.q;
  std::vector<double> ev(e.data(), e.data() + e.size());
  for (std::size_t k = 1; k < config.q; ++k) {
    fit.edges.push_back(quantile(ev, static_cast<double>(k) / static_cast<double>(config.q)));
  }

  fit.replicates.resize(config.b);
  std::vector<std::size_t> merges(config.b, 0);
  parallel_for(config.b, config.threads, [&](std::size_t b) {
    IndexList rows(n);
    if (config.identity_resample) {
      std::iota(rows.begin(), rows.end(), 0);
    } else {
      Rng rng(derive_seed(config.seed, {1, b}));
      rows = bootstrap_indices(n, rng);
    }
    const Dataset boot = data.subset(rows);

    // merge strata that lack an arm in this resample into a neighbor
    std::vector<std::array<std::size_t, 2>> count(config.q, {0, 0});
    std::vector<std::size_t> stratum(n);
    for (std::size_t i = 0; i < n; ++i) {
      stratum[i] = fit.stratum_of(e(static_cast<Eigen::Index>(rows[i])));
      ++count[stratum[i]][boot.treated(i) ? 1 : 0];
    }
    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t s = 0; s < config.q; ++s) blocks.push_back({s});
    auto arms = [&](const std::vector<std::size_t>& blk) {
      std::array<std::size_t, 2> c{0, 0};
      for (auto s : blk) {
        c[0] += count[s][0];
        c[1] += count[s][1];
      }
      return c;
    };
    for (std::size_t k = 0; k < blocks.size() && blocks.size() > 1;) {
      const auto c = arms(blocks[k]);
      if (c[0] > 0 && c[1] > 0) {
        ++k;
        continue;
      }
      if (c[0] + c[1] > 0) ++merges[b];
      const std::size_t into = k + 1 < blocks.size() ? k + 1 : k - 1;
      blocks[into].insert(blocks[into].end(), blocks[k].begin(), blocks[k].end());
      blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(k));
      k = 0;
    }
    auto& rep = fit.replicates[b];
    rep.group_of_stratum.assign(config.q, 0);
    for (std::size_t g = 0; g < blocks.size(); ++g)
      for (auto s : blocks[g]) rep.group_of_stratum[s] = g;
    std::vector<std::size_t> group(n);
    for (std::size_t i = 0; i < n; ++i) group[i] = rep.group_of_stratum[stratum[i]];

    auto growth = causal_forward(boot.covariates(), boot.outcome(), group, blocks.size(),
                                 boot.treatment(), config.forward, derive_seed(config.seed, {2, b}));
    const auto m = growth.design.cols();
    const auto groups = static_cast<Eigen::Index>(blocks.size());
    rep.coef_treat.resize(m, groups);
    rep.coef_control.resize(m, groups);
    for (Eigen::Index g = 0; g < groups; ++g) {
      rep.coef_control.col(g) = cell_coefficients(growth.design, boot.outcome(), growth.cell_rows[2 * static_cast<std::size_t>(g)]);
      rep.coef_treat.col(g) = cell_coefficients(growth.design, boot.outcome(), growth.cell_rows[2 * static_cast<std::size_t>(g) + 1]);
    }
    rep.basis = std::move(growth.basis);
  });
  fit.merged_strata = std::accumulate(merges.begin(), merges.end(), std::size_t{0});
  if (fit.merged_strata > 0) {
    fit.warnings.push_back(std::to_string(fit.merged_strata) +
                           " propensity strata lacked an arm in a resample and were merged into a neighbor");
  }
  return fit;
}

}  // namespace scbm
