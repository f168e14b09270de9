#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scbm/core.hpp"

namespace scbm {

using Rng = std::mt19937_64;

/// Mixes a master seed with a sequence of indices into an independent stream
/// seed (splitmix64 finalizer applied per component).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Stable 64-bit hash of a string, used to derive seeds from names.
std::uint64_t name_hash(std::string_view name);

/// Runs fn(0..count-1) on up to `threads` workers. The first exception thrown
/// by any task is rethrown after all workers have joined.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

/// Worker count from SCBM_THREADS, or 1 when unset or malformed.
std::size_t default_thread_count();

/// Uniform resample of size n with replacement.
IndexList bootstrap_indices(std::size_t n, Rng& rng);

/// Minimum-norm least-squares coefficients; singular values below 1e-12 of
/// the largest are treated as zero.
Vector least_squares(const Matrix& x, const Vector& y);

double residual_sum_of_squares(const Matrix& x, const Vector& y, const Vector& beta);

double mean(std::span<const double> v);
double median(std::vector<double> v);
/// Linear-interpolated quantile, q in [0,1].
double quantile(std::vector<double> v, double q);
/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace scbm
