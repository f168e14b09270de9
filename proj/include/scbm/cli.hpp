#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "scbm/io.hpp"

namespace scbm {

/// Exit codes of cli_main.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Command-line entry point: fit, predict, simulate, bench, importance, pdp,
/// calibrate and config. Data goes to files or `out`, diagnostics to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// Same, with the arguments after the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Fits the named estimator (scbm, prop0, prop1, cm or bcm) with the module
/// settings of `config`.
ModelArchive fit_estimator(const Dataset& data, const std::string& estimator, const RunConfig& config);

/// Parses "rf", "logistic" or "known:<value>" into the propensity settings.
void apply_propensity_flag(const std::string& flag, PropensityConfig& config);

/// Scenario id with its regime replaced: 1-6 randomized, 7-12 confounded.
int scenario_with_regime(int id, Regime regime);

}  // namespace scbm
