// util.hpp
// Seeding, threading and text helpers shared across modules.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace gravity {

using Rng = std::mt19937_64;

/// Deterministic seed for a named substream of `master`, optionally indexed
/// (replication, year, permutation). Independent of thread schedule.
std::uint64_t substream_seed(std::uint64_t master, std::string_view stream,
                             std::uint64_t index = 0) noexcept;

inline Rng substream(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
  return Rng(substream_seed(master, stream, index));
}

/// Runs body(k) for k in [0, count) on up to `threads` workers. Work is split
/// in contiguous chunks; callers write results by index so output does not
/// depend on the number of workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

/// Shortest text that parses back to the same double.
std::string format_exact(double x);
/// Fixed-point text with `decimals` places.
std::string format_fixed(double x, int decimals);

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view s);

double normal_cdf(double z) noexcept;
/// Upper tail of chi-square with one degree of freedom.
double chi2_1_sf(double x) noexcept;
/// Two-sided p-value of a Student-t statistic.
double student_t_two_sided(double t, double dof);

/// Significance stars for a two-sided normal test: *** p<0.01, ** p<0.05, * p<0.1.
std::string significance_stars(double estimate, double se);

}  // namespace gravity
