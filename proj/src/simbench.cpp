#include "scbm/simbench.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "scbm/error.hpp"

namespace scbm {
namespace {

// 1-based covariate access.
inline double v(std::span<const double> x, std::size_t k) { return x[k - 1]; }
inline double ind(bool b) { return b ? 1.0 : 0.0; }
inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double mu_linear(std::span<const double> x) { return 2.0 * v(x, 1) - 4.0; }
double tau_zero(std::span<const double>) { return 0.0; }

double mu_step(std::span<const double> x) { return 5.0 * ind(v(x, 1) > 1.0) - 5.0; }
double piecewise_interactive(std::span<const double> x) {
  return 4.0 * ind(v(x, 1) > 1.0) * ind(v(x, 3) > 1.0) +
         4.0 * ind(v(x, 5) > 1.0) * ind(v(x, 7) > 1.0) + 2.0 * v(x, 8) * v(x, 9);
}

double mu_additive(std::span<const double> x) {
  return 0.5 * (v(x, 1) * v(x, 1) + v(x, 2) + v(x, 3) * v(x, 3) + v(x, 4) + v(x, 5) * v(x, 5) +
                v(x, 6) + v(x, 7) * v(x, 7) + v(x, 8) + v(x, 9) * v(x, 9) - 11.0);
}
double tau_f1_f2(std::span<const double> x) {
  return (scenario_f1(x) + scenario_f2(x)) / std::numbers::sqrt2;
}

double tau_interactive(std::span<const double> x) {
  return std::sin(std::numbers::pi * v(x, 1) * v(x, 3)) + 2.0 * (v(x, 5) - 0.5) * (v(x, 5) - 0.5) +
         v(x, 7) + 0.5 * v(x, 9);
}

double mu_smooth(std::span<const double> x) {
  return 0.5 - 0.1 * sigmoid(v(x, 1)) + 0.1 * std::sin(v(x, 3)) - 0.1 * v(x, 5) * v(x, 5) -
         0.2 * v(x, 5) - 0.1 * v(x, 7) * v(x, 7);
}
double tau_smooth(std::span<const double> x) {
  return -0.2 + 0.5 * std::sin(std::numbers::pi * v(x, 1) * v(x, 3)) + 0.2 * sigmoid(v(x, 5)) +
         0.2 * v(x, 2) + 0.3 * v(x, 4);
}

const std::array<Scenario, 12>& all_scenarios() {
  static const std::array<Scenario, 12> table = [] {
    using Fn = double (*)(std::span<const double>);
    const std::array<std::pair<Fn, Fn>, 6> models{{
        {mu_linear, tau_zero},
        {mu_step, piecewise_interactive},
        {mu_additive, tau_f1_f2},
        {piecewise_interactive, scenario_f2},
        {scenario_f1, tau_interactive},
        {mu_smooth, tau_smooth},
    }};
    std::array<Scenario, 12> t{};
    for (int k = 0; k < 12; ++k) {
      const auto& m = models[static_cast<std::size_t>(k % 6)];
      t[static_cast<std::size_t>(k)] =
          Scenario{k + 1, k < 6 ? Regime::rct : Regime::observational, m.first, m.second};
    }
    return t;
  }();
  return table;
}

}  // namespace

double scenario_f1(std::span<const double> x) {
  const double a = v(x, 2), b = v(x, 4), c = v(x, 6);
  return a * b * c + 2.0 * a * b * (1 - c) + 3.0 * a * (1 - b) * c + 4.0 * a * (1 - b) * (1 - c) +
         5.0 * (1 - a) * b * c + 6.0 * (1 - a) * b * (1 - c) + 7.0 * (1 - a) * (1 - b) * c +
         8.0 * (1 - a) * (1 - b) * (1 - c);
}

double scenario_f2(std::span<const double> x) {
  return v(x, 1) + v(x, 3) + v(x, 5) + v(x, 7) + v(x, 8) + v(x, 9) - 2.0;
}

double Scenario::propensity(std::span<const double> x) const {
  if (regime == Regime::rct) return 0.5;
  return sigmoid(mu(x) - 0.5 * tau(x));
}

const Scenario& scenario(int id) {
  if (id < 1 || id > 12) throw ConfigError("scenario id must be in [1, 12], got " + std::to_string(id));
  return all_scenarios()[static_cast<std::size_t>(id - 1)];
}

Matrix draw_covariates(std::size_t n, std::size_t p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      // column j holds covariate x_{j+1}; odd names are normal
      x(i, j) = (j % 2 == 0) ? normal(rng) : (coin(rng) ? 1.0 : 0.0);
    }
  }
  return x;
}

double sample_outcome(const Scenario& sc, std::span<const double> x, Arm arm, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const double t = arm == Arm::treated ? 1.0 : 0.0;
  return sc.mu(x) + (t - 0.5) * sc.tau(x) + noise(rng);
}

double sample_outcome(const Scenario& sc, const Vector& x, Arm arm, Rng& rng) {
  return sample_outcome(sc, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                        arm, rng);
}

Vector evaluate_rows(double (*f)(std::span<const double>), const Matrix& x) {
  Vector out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out(i) = f(row);
  }
  return out;
}

SimDraw draw_scenario(const Scenario& sc, std::size_t n, std::size_t p, std::size_t n_test,
                      std::uint64_t seed) {
  if (p < kScenarioMinP) {
    throw ConfigError("scenario covariate count p must be >= 9, got " + std::to_string(p));
  }
  if (n < 1) throw ConfigError("scenario sample size n must be >= 1");
  Rng rng(seed);
  Matrix x = draw_covariates(n, p, rng);

  Eigen::VectorXi t(static_cast<Eigen::Index>(n));
  Vector y(static_cast<Eigen::Index>(n));
  Vector e(static_cast<Eigen::Index>(n));
  Vector tau_train(static_cast<Eigen::Index>(n));
  std::vector<double> row(p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < p; ++j) row[j] = x(i, static_cast<Eigen::Index>(j));
    const double mu = sc.mu(row);
    const double tau = sc.tau(row);
    e(i) = sc.regime == Regime::rct ? 0.5 : 1.0 / (1.0 + std::exp(-(mu - 0.5 * tau)));
    t(i) = unif(rng) < e(i) ? 1 : 0;
    y(i) = mu + (static_cast<double>(t(i)) - 0.5) * tau + noise(rng);
    tau_train(i) = tau;
  }
  Matrix x_test = draw_covariates(n_test, p, rng);
  Vector tau_test = evaluate_rows(sc.tau, x_test);
  return SimDraw{Dataset(std::move(x), std::move(t), std::move(y)), std::move(x_test),
                 std::move(tau_test), std::move(tau_train), std::move(e)};
}

double mse(std::span<const double> tau_hat, std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size() || tau_hat.empty()) {
    throw InvalidInput("mse needs two non-empty sequences of equal length");
  }
  double s = 0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double d = tau_hat[i] - tau_true[i];
    s += d * d;
  }
  return s / static_cast<double>(tau_hat.size());
}

double abs_bias(std::span<const double> tau_hat, std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size() || tau_hat.empty()) {
    throw InvalidInput("abs_bias needs two non-empty sequences of equal length");
  }
  double s = 0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) s += tau_hat[i] - tau_true[i];
  return std::abs(s / static_cast<double>(tau_hat.size()));
}

double mse(const Vector& tau_hat, const Vector& tau_true) {
  return mse(std::span<const double>(tau_hat.data(), static_cast<std::size_t>(tau_hat.size())),
             std::span<const double>(tau_true.data(), static_cast<std::size_t>(tau_true.size())));
}

double abs_bias(const Vector& tau_hat, const Vector& tau_true) {
  return abs_bias(std::span<const double>(tau_hat.data(), static_cast<std::size_t>(tau_hat.size())),
                  std::span<const double>(tau_true.data(), static_cast<std::size_t>(tau_true.size())));
}

}  // namespace scbm
