#include <cmath>
#include <random>

#include "doctest.h"
#include "scbm/error.hpp"
#include "scbm/propensity.hpp"
#include "scbm/simbench.hpp"

using namespace scbm;

namespace {

Dataset logistic_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(n), 2);
  Eigen::VectorXi t(static_cast<Eigen::Index>(n));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng);
    const double e = 1.0 / (1.0 + std::exp(-(0.5 + 1.5 * x(i, 0) - 1.0 * x(i, 1))));
    t(i) = unif(rng) < e ? 1 : 0;
    y(i) = normal(rng);
  }
  return Dataset(x, t, y);
}

}  // namespace

TEST_CASE("known-constant propensity returns the supplied value") {
  const auto data = logistic_data(50, 1);
  PropensityConfig cfg;
  cfg.kind = PropensityKind::known_constant;
  cfg.constant = 0.5;
  const auto model = fit_propensity(data, cfg);
  const Vector e = model.predict(data.covariates());
  CHECK((e.array() == 0.5).all());
}

TEST_CASE("logistic propensity recovers a logistic assignment law") {
  const auto data = logistic_data(5000, 2);
  PropensityConfig cfg;
  cfg.kind = PropensityKind::logistic;
  const auto model = fit_propensity(data, cfg);
  const auto& p = std::get<LogisticPropensity>(model.parameters());
  CHECK(p.intercept == doctest::Approx(0.5).epsilon(0.2));
  CHECK(p.coefficients(0) == doctest::Approx(1.5).epsilon(0.15));
  CHECK(p.coefficients(1) == doctest::Approx(-1.0).epsilon(0.15));
  CHECK(p.gradient_norm <= 1e-8);
}

TEST_CASE("logistic propensity on separable data stays finite") {
  Matrix x(20, 1);
  Eigen::VectorXi t(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    x(i, 0) = static_cast<double>(i) - 9.5;
    t(i) = i >= 10 ? 1 : 0;
  }
  const Dataset data(x, t, Vector::Zero(20));
  PropensityConfig cfg;
  cfg.kind = PropensityKind::logistic;
  const auto model = fit_propensity(data, cfg);
  const Vector e = model.predict(x);
  CHECK(e.allFinite());
  CHECK(e(0) < 0.01);
  CHECK(e(19) > 0.99);
  const auto& p = std::get<LogisticPropensity>(model.parameters());
  CHECK(std::isfinite(p.coefficients(0)));
}

TEST_CASE("logistic non-convergence reports the gradient norm") {
  const auto data = logistic_data(200, 3);
  PropensityConfig cfg;
  cfg.kind = PropensityKind::logistic;
  cfg.logistic_max_iter = 1;
  try {
    fit_propensity(data, cfg);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 1e-8);
    CHECK(std::string(e.what()).find("gradient norm") != std::string::npos);
  }
}

TEST_CASE("single-arm data cannot fit an estimated propensity") {
  Matrix x = Matrix::Random(10, 2);
  const Dataset data(x, Eigen::VectorXi::Zero(10), Vector::Zero(10));
  PropensityConfig cfg;
  cfg.kind = PropensityKind::random_forest;
  CHECK_THROWS_AS(fit_propensity(data, cfg), FitError);
  cfg.kind = PropensityKind::logistic;
  CHECK_THROWS_AS(fit_propensity(data, cfg), FitError);
}

TEST_CASE("a root-only single tree predicts the treated fraction") {
  const auto data = logistic_data(300, 4);
  PropensityConfig cfg;
  cfg.kind = PropensityKind::random_forest;
  cfg.forest.trees = 1;
  cfg.forest.max_depth = 0;
  cfg.forest.bootstrap = false;
  const auto model = fit_propensity(data, cfg);
  const double frac = static_cast<double>(data.treated_count()) / static_cast<double>(data.n());
  const Vector e = model.predict(data.covariates());
  CHECK((e.array() == frac).all());
}

TEST_CASE("forest propensity is deterministic and tracks the true law") {
  const auto data = logistic_data(2000, 5);
  PropensityConfig cfg;
  cfg.kind = PropensityKind::random_forest;
  cfg.forest.trees = 100;
  cfg.seed = 17;
  const auto m1 = fit_propensity(data, cfg);
  cfg.threads = 3;
  const auto m2 = fit_propensity(data, cfg);
  const Vector e1 = m1.predict(data.covariates());
  const Vector e2 = m2.predict(data.covariates());
  CHECK(e1 == e2);
  CHECK(((e1.array() >= 0.0) && (e1.array() <= 1.0)).all());
  Vector truth(e1.size());
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    truth(i) = 1.0 / (1.0 + std::exp(-(0.5 + 1.5 * data.covariates()(i, 0) - data.covariates()(i, 1))));
  }
  const double rmse = std::sqrt((e1 - truth).squaredNorm() / static_cast<double>(truth.size()));
  CHECK(rmse < 0.12);
}

TEST_CASE("transform_outcome examples") {
  Matrix x = Matrix::Zero(3, 1);
  Eigen::VectorXi t(3);
  t << 1, 0, 1;
  Vector y(3);
  y << 2, 2, 2;
  const Dataset data(x, t, y);
  Vector e(3);
  e << 0.5, 0.5, 0.001;
  const auto tr = transform_outcome(data, e, 0.01);
  CHECK(tr.z(0) == 4.0);
  CHECK(tr.z(1) == -4.0);
  CHECK(tr.propensity_used(2) == 0.01);
  CHECK(tr.z(2) == doctest::Approx(2.0 / 0.01));
  CHECK_THROWS_AS(transform_outcome(data, e, 0.5), InvalidInput);
  Vector boundary = e;
  boundary(0) = 1.0;
  CHECK_THROWS_AS(transform_outcome(data, boundary, 0.0), InvalidInput);
}

TEST_CASE("RCT transformed outcome is 2y(2t-1)") {
  const auto draw = draw_scenario(scenario(3), 500, 10, 1, 9);
  const Vector e = Vector::Constant(500, 0.5);
  const auto tr = transform_outcome(draw.train, e, 0.01);
  for (Eigen::Index i = 0; i < 500; ++i) {
    const double sign = 2.0 * draw.train.treatment()(i) - 1.0;
    CHECK(tr.z(i) == 2.0 * draw.train.outcome()(i) * sign);
  }
}

TEST_CASE("decreasing the clip epsilon never decreases max |z|") {
  const auto draw = draw_scenario(scenario(10), 2000, 10, 1, 21);
  double previous = 0.0;
  for (double eps : {0.2, 0.1, 0.05, 0.01, 0.001, 1e-5}) {
    const auto tr = transform_outcome(draw.train, draw.true_propensity_train, eps);
    const double m = tr.z.cwiseAbs().maxCoeff();
    CHECK(m >= previous);
    previous = m;
  }
}

TEST_CASE("transformed outcome is unbiased for the mean effect with true propensities") {
  const auto draw = draw_scenario(scenario(10), 100000, 10, 1, 2024);
  const auto tr = transform_outcome(draw.train, draw.true_propensity_train, 0.0);
  const Vector diff = tr.z - draw.true_tau_train;
  const double m = diff.mean();
  const double sd = std::sqrt((diff.array() - m).square().sum() / static_cast<double>(diff.size() - 1));
  CHECK(std::abs(m) < 3.0 * sd / std::sqrt(static_cast<double>(diff.size())));
}
