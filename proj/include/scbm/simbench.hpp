#pragma once

#include <cstdint>
#include <span>

#include "scbm/core.hpp"
#include "scbm/util.hpp"

namespace scbm {

enum class Regime { rct, observational };

/// One of the twelve benchmark generative models. Scenarios 1-6 are
/// randomized (e = 1/2); 7-12 reuse the same mean and effect functions with
/// confounded assignment e(x) = logistic(mu(x) - tau(x) / 2).
///
/// The functions read covariates by 1-based name: x1 is column 0. Odd-named
/// covariates are standard normal, even-named ones Bernoulli(1/2).
struct Scenario {
  int id = 1;
  Regime regime = Regime::rct;
  double (*mu)(std::span<const double> x) = nullptr;
  double (*tau)(std::span<const double> x) = nullptr;

  double propensity(std::span<const double> x) const;
};

/// Minimum covariate count every scenario needs (x1 .. x9).
inline constexpr std::size_t kScenarioMinP = 9;

/// Scenario by id in [1, 12]; throws ConfigError otherwise.
const Scenario& scenario(int id);

/// The two auxiliary functions shared by several scenarios.
double scenario_f1(std::span<const double> x);
double scenario_f2(std::span<const double> x);

struct SimDraw {
  Dataset train;
  Matrix test_covariates;
  Vector true_tau_test;
  Vector true_tau_train;
  Vector true_propensity_train;
};

/// Draws covariates with the parity rule.
Matrix draw_covariates(std::size_t n, std::size_t p, Rng& rng);

/// Outcome mu(x) + (t - 1/2) tau(x) + N(0, 1) for one individual.
double sample_outcome(const Scenario& sc, std::span<const double> x, Arm arm, Rng& rng);
double sample_outcome(const Scenario& sc, const Vector& x, Arm arm, Rng& rng);

/// Training set of size n plus n_test fresh covariate rows with their true
/// effects. Deterministic in `seed`.
SimDraw draw_scenario(const Scenario& sc, std::size_t n, std::size_t p, std::size_t n_test,
                      std::uint64_t seed);

/// Evaluates a scenario function row by row.
Vector evaluate_rows(double (*f)(std::span<const double>), const Matrix& x);

double mse(std::span<const double> tau_hat, std::span<const double> tau_true);
double abs_bias(std::span<const double> tau_hat, std::span<const double> tau_true);
double mse(const Vector& tau_hat, const Vector& tau_true);
double abs_bias(const Vector& tau_hat, const Vector& tau_true);

}  // namespace scbm
