// cli.hpp
// Command-line pipeline: generate, weights, estimate, compare, validate, mrt-solve.
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gravity {

/// Flat `key = value` run configuration with a version tag. Keys are the long
/// option names of one subcommand; values are stored as text.
struct RunConfig {
  static constexpr int kVersion = 1;
  std::string command;
  std::vector<std::pair<std::string, std::string>> values;

  /// Throws InvalidConfig (malformed line, unsupported version).
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  bool operator==(const RunConfig&) const = default;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitEstimation = 3, kExitValidation = 4 };

/// Runs one subcommand; returns the process exit code. Errors go to `stderr`.
int run_cli(int argc, const char* const* argv);

}  // namespace gravity
