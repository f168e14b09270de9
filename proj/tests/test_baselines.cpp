#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "scbm/baselines.hpp"
#include "scbm/error.hpp"
#include "scbm/simbench.hpp"
#include "scbm/util.hpp"

using namespace scbm;

namespace {

Dataset arm_data(std::size_t n, std::size_t p, std::uint64_t seed,
                    double (*f)(const Matrix&, Eigen::Index, int)) {
  Rng rng(seed);
  Matrix x = draw_covariates(n, p, rng);
  Eigen::VectorXi t(static_cast<Eigen::Index>(n));
  Vector y(static_cast<Eigen::Index>(n));
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    t(i) = coin(rng) ? 1 : 0;
    y(i) = f(x, i, t(i));
  }
  t(0) = 0;
  t(1) = 1;
  for (Eigen::Index i = 0; i < 2; ++i) y(i) = f(x, i, t(i));
  return {x, t, y};
}

Matrix hinge(const Matrix& x, std::size_t j, double knot, int sign) {
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double d = sign > 0 ? x(i, static_cast<Eigen::Index>(j)) - knot : knot - x(i, static_cast<Eigen::Index>(j));
    out(i, 0) = std::max(0.0, d);
  }
  return out;
}

// Best first-step gain by explicit refits: arm-specific hinge coefficients
// against hinge coefficients shared by both arms, each with arm intercepts.
double brute_first_gain(const Dataset& d) {
  const Matrix& x = d.covariates();
  const auto n = x.rows();
  double best = -1.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double c = x(k, j);
      const Matrix plus = hinge(x, static_cast<std::size_t>(j), c, 1);
      const Matrix minus = hinge(x, static_cast<std::size_t>(j), c, -1);
      Matrix shared(n, 4);
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool tr = d.treatment()(i) == 1;
        shared.row(i) << (tr ? 1.0 : 0.0), (tr ? 0.0 : 1.0), plus(i, 0), minus(i, 0);
      }
      double separate = 0.0;
      for (int arm = 0; arm < 2; ++arm) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; ++i) if (d.treatment()(i) == arm) rows.push_back(i);
        Matrix m(static_cast<Eigen::Index>(rows.size()), 3);
        Vector r(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t a = 0; a < rows.size(); ++a) {
          const auto i = rows[a];
          m.row(static_cast<Eigen::Index>(a)) << 1.0, plus(i, 0), minus(i, 0);
          r(static_cast<Eigen::Index>(a)) = d.outcome()(i);
        }
        separate += oracles::qr_rss(m, r);
      }
      best = std::max(best, oracles::qr_rss(shared, d.outcome()) - separate);
    }
  }
  return best;
}

ForwardConfig one_pair() {
  ForwardConfig f;
  f.m_max = 2;
  f.min_active = 1;
  f.min_child = 0;
  return f;
}

}  // namespace

TEST_CASE("first causal split maximizes the brute-force arm-contrast gain") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto d = arm_data(30, 3, 100 + s, [](const Matrix& x, Eigen::Index i, int t) {
      return (t == 1 ? 2.0 : -0.5) * std::abs(x(i, 1)) + 0.3 * x(i, 0) + 0.1 * std::sin(7.0 * x(i, 2) + static_cast<double>(i));
    });
    const auto fit = fit_causal_mars(d, one_pair());
    REQUIRE(fit.splits.size() == 1);
    const double ref = brute_first_gain(d);
    CHECK(fit.splits[0].lof == doctest::Approx(ref).epsilon(1e-8));
    CHECK(fit.rss_trace[0] - fit.rss_trace[1] >= -1e-9);
  }
}

TEST_CASE("a constant outcome accepts no term") {
  const auto d = arm_data(80, 4, 1, [](const Matrix&, Eigen::Index, int) { return 3.0; });
  const auto fit = fit_causal_mars(d, ForwardConfig{});
  CHECK(fit.basis.size() == 1);
  CHECK(fit.predict_hte(d.covariates()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("opposite linear arms split on the driving variable with opposite slopes") {
  const auto d = arm_data(200, 4, 2, [](const Matrix& x, Eigen::Index i, int t) {
    return t == 1 ? x(i, 0) : -x(i, 0);
  });
  const auto fit = fit_causal_mars(d, one_pair());
  REQUIRE(fit.splits.size() == 1);
  CHECK(fit.splits[0].variable == 0);
  for (Eigen::Index k = 1; k < 3; ++k) {
    CHECK(fit.coef_treat(k) == doctest::Approx(-fit.coef_control(k)).epsilon(1e-8));
  }
  CHECK(fit.coef_treat.tail(2).cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-8));
  const Vector x0 = d.covariates().col(0);
  CHECK((fit.predict_outcome(d.covariates(), Arm::treated) - x0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((fit.predict_hte(d.covariates()) - 2.0 * x0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("causal MARS effect is the difference of arm models") {
  const auto draw = draw_scenario(scenario(4), 300, 10, 200, 3);
  const auto fit = fit_causal_mars(draw.train, ForwardConfig{});
  const Vector diff = fit.predict_outcome(draw.test_covariates, Arm::treated) -
                      fit.predict_outcome(draw.test_covariates, Arm::control);
  CHECK((fit.predict_hte(draw.test_covariates) - diff).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t k = 1; k < fit.rss_trace.size(); ++k) CHECK(fit.rss_trace[k] <= fit.rss_trace[k - 1] + 1e-9);
  CHECK_THROWS_AS(fit.predict_hte(Matrix::Zero(2, 3)), InvalidInput);
}

TEST_CASE("one stratum and one identity replicate reduce to causal MARS") {
  const auto draw = draw_scenario(scenario(3), 200, 10, 100, 4);
  BcmConfig cfg;
  cfg.b = 1;
  cfg.q = 1;
  cfg.seed = 7;
  cfg.identity_resample = true;
  const auto bcm = fit_bcm(draw.train, cfg, PropensityModel(ConstantPropensity{0.5}));
  const auto cm = fit_causal_mars(draw.train, cfg.forward, derive_seed(7, {2, 0}));
  CHECK(bcm.replicates[0].basis == cm.basis);
  CHECK((bcm.predict_hte(draw.test_covariates) - cm.predict_hte(draw.test_covariates)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stratified prediction averages replicate predictions over a shared basis") {
  const auto draw = draw_scenario(scenario(9), 300, 10, 150, 5);
  PropensityConfig pc;
  pc.kind = PropensityKind::logistic;
  const auto prop = fit_propensity(draw.train, pc);
  BcmConfig cfg;
  cfg.b = 3;
  cfg.q = 3;
  cfg.seed = 11;
  const auto fit = fit_bcm(draw.train, cfg, prop);
  REQUIRE(fit.edges.size() == 2);
  CHECK(fit.edges[0] <= fit.edges[1]);
  const Vector e = prop.predict(draw.test_covariates);
  Vector manual = Vector::Zero(draw.test_covariates.rows());
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& rep = fit.replicates[b];
    CHECK(rep.coef_treat.rows() == static_cast<Eigen::Index>(rep.basis.size()));
    CHECK(rep.coef_treat.cols() == rep.coef_control.cols());
    manual += fit.predict_replicate(b, draw.test_covariates, e);
  }
  manual /= 3.0;
  CHECK((fit.predict_hte(draw.test_covariates) - manual).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(fit.stratum_of(fit.edges[0]) == 0);
  CHECK(fit.stratum_of(fit.edges[1] + 1e-9) == 2);
}

TEST_CASE("a constant propensity collapses every stratum into one") {
  const auto draw = draw_scenario(scenario(1), 150, 10, 10, 6);
  BcmConfig cfg;
  cfg.b = 2;
  const auto fit = fit_bcm(draw.train, cfg, PropensityModel(ConstantPropensity{0.5}));
  for (const auto& rep : fit.replicates) {
    CHECK(rep.coef_treat.cols() == 1);
    for (auto g : rep.group_of_stratum) CHECK(g == 0);
  }
}

TEST_CASE("strata without both arms are merged with a warning") {
  Rng rng(8);
  Matrix x = draw_covariates(200, 3, rng);
  Eigen::VectorXi t(200);
  Vector y(200);
  for (Eigen::Index i = 0; i < 200; ++i) {
    t(i) = x(i, 0) > 0.0 ? 1 : 0;
    y(i) = x(i, 1) + (t(i) == 1 ? 1.0 : 0.0);
  }
  LogisticPropensity lp;
  lp.coefficients = Vector::Zero(3);
  lp.coefficients(0) = 5.0;
  BcmConfig cfg;
  cfg.b = 2;
  cfg.q = 4;
  const auto fit = fit_bcm(Dataset(x, t, y), cfg, PropensityModel(lp));
  CHECK(fit.merged_strata > 0);
  CHECK_FALSE(fit.warnings.empty());
  for (const auto& rep : fit.replicates) {
    for (Eigen::Index g = 0; g < rep.coef_treat.cols(); ++g) CHECK(rep.coef_treat.col(g).allFinite());
  }
  CHECK(fit.predict_hte(x).allFinite());
}

TEST_CASE("stratified fits are reproducible across worker counts") {
  const auto draw = draw_scenario(scenario(2), 200, 10, 50, 9);
  BcmConfig cfg;
  cfg.b = 3;
  cfg.seed = 5;
  const PropensityModel prop(ConstantPropensity{0.5});
  const auto a = fit_bcm(draw.train, cfg, prop);
  cfg.threads = 3;
  const auto b = fit_bcm(draw.train, cfg, prop);
  CHECK(a.predict_hte(draw.test_covariates) == b.predict_hte(draw.test_covariates));
}

TEST_CASE("baseline validation") {
  const auto draw = draw_scenario(scenario(1), 50, 10, 1, 10);
  BcmConfig cfg;
  cfg.q = 0;
  CHECK_THROWS_AS(fit_bcm(draw.train, cfg, PropensityModel{}), ConfigError);
  cfg.q = 2;
  cfg.b = 0;
  CHECK_THROWS_AS(fit_bcm(draw.train, cfg, PropensityModel{}), ConfigError);
  const Dataset one_arm(draw.train.covariates(), Eigen::VectorXi::Zero(50), draw.train.outcome());
  CHECK_THROWS_AS(fit_causal_mars(one_arm, ForwardConfig{}), FitError);
}
