// In-process CLI runs and output-directory comparison for tests.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gravity/cli.hpp"

namespace cli_support {

inline int run(std::vector<std::string> args) {
  args.insert(args.begin(), "gravity");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return gravity::run_cli(static_cast<int>(argv.size()), argv.data());
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Relative path -> contents of every regular file under `dir`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace cli_support
