#include <doctest.h>

#include <filesystem>

#include "cli_support.hpp"
#include "gravity/error.hpp"

using namespace gravity;
using cli_support::run;
using cli_support::slurp;
using cli_support::snapshot;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = GRAVITY_FIXTURES;

/// Small generated dataset shared by the command tests.
const std::string& dataset() {
  static const std::string dir = [] {
    fs::remove_all("cli_data");
    REQUIRE(run({"generate", "--n", "6", "--years", "3", "--seed", "3", "--out", "cli_data"}) == kExitOk);
    return std::string("cli_data");
  }();
  return dir;
}

}  // namespace

TEST_CASE("run configs round-trip and reject malformed text") {
  RunConfig c;
  c.command = "estimate";
  c.values = {{"data", "out"}, {"with-dist", "true"}, {"regressors", "gdp_o,gdp_d"}};
  CHECK(RunConfig::parse(c.to_text()) == c);
  CHECK(c.to_text() == "version = 1\ncommand = estimate\ndata = out\nwith-dist = true\nregressors = gdp_o,gdp_d\n");
  auto code_of = [](const std::string& text) {
    try {
      RunConfig::parse(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::MissingFile;
  };
  CHECK(code_of("data = x\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("version = 2\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("version = 1\njunk\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("version = 1\na = 1\na = 2\n") == ErrorCode::InvalidConfig);
  CHECK(RunConfig::parse("# comment\nversion = 1\n\nB = 199\n").values.size() == 1);
}

TEST_CASE("generate writes the dataset and truth") {
  const fs::path d = dataset();
  for (const char* f : {"panel.csv", "distances.csv", "schema.txt", "summary.txt", "mrt_truth.csv",
                        "tradecost_truth.csv", "coefficients_truth.csv", "pair_truth.csv"})
    CHECK(fs::exists(d / f));
  const std::string summary = slurp(d / "summary.txt");
  CHECK(summary.find("countries = 6") != std::string::npos);
  CHECK(summary.find("rows = 90") != std::string::npos);
}

TEST_CASE("exit codes follow the error class") {
  CHECK(run({}) == kExitConfig);
  CHECK(run({"generate", "--bogus"}) == kExitConfig);
  CHECK(run({"generate", "--n", "1", "--out", "cli_bad"}) == kExitConfig);
  CHECK(run({"generate", "--rho", "1.5", "--out", "cli_bad"}) == kExitConfig);
  CHECK(run({"estimate", "--data", "no_such_dir", "--out", "cli_bad"}) == kExitEstimation);
  CHECK(run({"estimate", "--data", dataset(), "--regressors", "nope", "--out", "cli_bad"}) == kExitEstimation);
  CHECK(run({"validate", "--data", dataset(), "--B", "0", "--out", "cli_bad"}) == kExitConfig);
  CHECK(run({"validate", "--data", dataset(), "--B", "20", "--out", "cli_bad"}) == kExitConfig);
  CHECK(run({"validate", "--data", dataset(), "--regressors", "gdp_o", "--B", "199", "--out", "cli_bad"}) ==
        kExitValidation);
  CHECK(run({"estimate", "--config", "no_such.cfg"}) == kExitConfig);
}

TEST_CASE("config files feed options and flags override them") {
  RunConfig c;
  c.command = "estimate";
  c.values = {{"data", dataset()}, {"with-dist", "true"}, {"out", "cli_cfg_a"}, {"regressors", ""}};
  c.save("estimate.cfg");
  fs::remove_all("cli_cfg_a");
  fs::remove_all("cli_cfg_b");
  REQUIRE(run({"estimate", "--config", "estimate.cfg", "--write-config", "effective.cfg"}) == kExitOk);
  CHECK(slurp("cli_cfg_a/coefficients.csv").find("\ndist,") != std::string::npos);
  const RunConfig eff = RunConfig::load("effective.cfg");
  CHECK(eff.command == "estimate");
  REQUIRE(run({"estimate", "--config", "effective.cfg", "--no-dist", "--out", "cli_cfg_b"}) == kExitOk);
  CHECK(slurp("cli_cfg_b/coefficients.csv").find("\ndist,") == std::string::npos);
  // Re-running the effective config reproduces the outputs.
  fs::remove_all("cli_cfg_c");
  REQUIRE(run({"estimate", "--config", "effective.cfg", "--out", "cli_cfg_c"}) == kExitOk);
  CHECK(snapshot("cli_cfg_a") == snapshot("cli_cfg_c"));
}

TEST_CASE("pipeline outputs are byte-identical across runs and thread counts") {
  const std::string data = dataset();
  const std::vector<std::vector<std::string>> commands = {
      {"generate", "--n", "5", "--years", "3", "--rho", "0.2", "--seed", "7"},
      {"weights", "--data", data, "--permutations", "99"},
      {"estimate", "--data", data, "--no-dist"},
      {"estimate", "--data", data, "--spatial", "--with-dist", "--permutations", "49"},
      {"validate", "--data", data, "--B", "199", "--keep-draws"},
      {"mrt-solve", "--data", data},
  };
  int k = 0;
  for (const auto& cmd : commands) {
    std::map<std::string, std::string> first;
    for (const char* threads : {"1", "8", "1"}) {
      const std::string out = "cli_det_" + std::to_string(k) + "_" + threads;
      fs::remove_all(out);
      std::vector<std::string> args = cmd;
      args.insert(args.end(), {"--threads", threads, "--out", out});
      REQUIRE(run(args) == kExitOk);
      const auto snap = snapshot(out);
      CHECK(!snap.empty());
      if (first.empty())
        first = snap;
      else
        CHECK(snap == first);
    }
    ++k;
  }
}

TEST_CASE("compare reproduces the expected table from the fixture") {
  fs::remove_all("cli_table1");
  REQUIRE(run({"compare", "--without", kFixtures + "/table1_without.csv", "--with", kFixtures + "/table1_with.csv",
               "--verbatim", "--title",
               "A preliminary comparison: IV/GMM estimated coefficients for SAR models with and without distance",
               "--out", "cli_table1"}) == kExitOk);
  CHECK(slurp("cli_table1/table1.md") == slurp(kFixtures + "/table1_expected.txt"));
}

TEST_CASE("compare joins estimate output directories") {
  const std::string data = dataset();
  fs::remove_all("cli_with");
  fs::remove_all("cli_without");
  fs::remove_all("cli_cmp");
  REQUIRE(run({"estimate", "--data", data, "--with-dist", "--out", "cli_with"}) == kExitOk);
  REQUIRE(run({"estimate", "--data", data, "--no-dist", "--pair-fe", "false", "--out", "cli_without"}) == kExitOk);
  REQUIRE(run({"compare", "--without", "cli_without", "--with", "cli_with", "--out", "cli_cmp"}) == kExitOk);
  const std::string t = slurp("cli_cmp/table1.md");
  CHECK(t.find("| dist | - | ") != std::string::npos);
  CHECK(t.find("* In brackets the standard error") != std::string::npos);
}
