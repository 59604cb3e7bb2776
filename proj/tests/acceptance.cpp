// Acceptance checks AC1-AC9: one PASS/FAIL line each; exit status 1 on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "cli_support.hpp"
#include "gravity/error.hpp"
#include "gravity/estimator.hpp"
#include "gravity/generator.hpp"
#include "gravity/inference.hpp"
#include "gravity/report.hpp"
#include "gravity/structural.hpp"
#include "gravity/weights.hpp"
#include "oracles/dummy_ls.hpp"
#include "oracles/moran_bruteforce.hpp"
#include "oracles/newton_mrt.hpp"

using namespace gravity;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

StructuralWorld random_world(int n, double sigma, std::mt19937_64& rng, double min_cost = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd T(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) T(i, j) = i == j ? min_cost : min_cost * (1.0 + 2.0 * u(rng));
  Eigen::VectorXd X(n), E(n);
  for (int i = 0; i < n; ++i) {
    X[i] = 0.5 + 5.0 * u(rng);
    E[i] = 0.5 + 5.0 * u(rng);
  }
  E *= X.sum() / E.sum();
  return StructuralWorld(sigma, T, E, X);
}

/// 20 worlds cycling through the nine (n, sigma) combinations.
std::vector<StructuralWorld> ac_worlds(double min_cost) {
  std::mt19937_64 rng(20);
  std::vector<StructuralWorld> out;
  const int ns[] = {3, 5, 8};
  const double sigmas[] = {2.0, 4.0, 8.0};
  for (int k = 0; k < 20; ++k) out.push_back(random_world(ns[k % 3], sigmas[(k / 3) % 3], rng, min_cost));
  return out;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome ac1() {
  const auto worlds = ac_worlds(1.0);
  double diff = 0.0, residual = 0.0;
  const auto t0 = Clock::now();
  std::vector<MrtSolution> sols;
  for (const auto& w : worlds) sols.push_back(solve_mrt(w));
  const double elapsed = seconds_since(t0);
  for (std::size_t k = 0; k < worlds.size(); ++k) {
    const auto& w = worlds[k];
    const oracle::Resistances o = oracle::newton_mrt(w.trade_cost, w.expenditure, w.output, w.sigma);
    diff = std::max({diff, (sols[k].Pi - o.Pi).cwiseAbs().maxCoeff(), (sols[k].P - o.P).cwiseAbs().maxCoeff()});
    residual = std::max({residual, sols[k].residual, sols[k].relative_residual});
  }
  return {diff <= 1e-8 && residual <= 1e-10 && elapsed < 1.0,
          fmt("max |fixed point - Newton| = %.2e, max residual = %.2e, solve time %.3f s", diff, residual, elapsed)};
}

Outcome ac2() {
  double clearance = 0.0, neutrality = 0.0;
  for (const auto& w : ac_worlds(4.0)) {
    const Eigen::MatrixXd Y = predict_flows(w, solve_mrt(w));
    clearance = std::max({clearance, ((Y.rowwise().sum() - w.output).array() / w.output.array()).abs().maxCoeff(),
                          ((Y.colwise().sum().transpose() - w.expenditure).array() / w.expenditure.array())
                              .abs()
                              .maxCoeff()});
    for (double lambda : {0.25, 4.0}) {
      const StructuralWorld s(w.sigma, w.trade_cost * lambda, w.expenditure, w.output);
      const Eigen::MatrixXd Ys = predict_flows(s, solve_mrt(s));
      neutrality = std::max(neutrality, ((Ys - Y).array() / Y.array()).abs().maxCoeff());
    }
  }
  return {clearance <= 1e-6 && neutrality <= 1e-8,
          fmt("max relative clearance error = %.2e, max scale effect = %.2e", clearance, neutrality)};
}

Outcome ac3() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> z(0.0, 1.0);
  double diff = 0.0;
  int instances = 0, skipped = 0;
  for (std::size_t n = 2; n <= 6; ++n)
    for (std::size_t T = 2; T <= 4; ++T) {
      const auto N = static_cast<Eigen::Index>(n * (n - 1) * T);
      // Two slopes, n(n-1) pair effects and T-1 year effects must leave residual dof.
      if (N <= static_cast<Eigen::Index>(2 + n * (n - 1) + T - 1)) {
        ++skipped;
        continue;
      }
      Eigen::MatrixXd X(N, 2);
      Eigen::VectorXd y(N);
      for (Eigen::Index r = 0; r < N; ++r) {
        X(r, 0) = z(rng);
        X(r, 1) = z(rng) + 0.5 * X(r, 0);
        y[r] = 0.7 * X(r, 0) - 0.3 * X(r, 1) + z(rng);
      }
      std::vector<std::string> codes;
      for (std::size_t i = 0; i < n; ++i) codes.push_back("K" + std::to_string(i));
      std::vector<int> years;
      for (std::size_t t = 0; t < T; ++t) years.push_back(2000 + static_cast<int>(t));
      Eigen::MatrixXd d = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), 5.0);
      d.diagonal().setZero();
      const PanelDataset ds(CountryIndex(codes), years,
                            Schema({{"x0", CovariateRole::DyadicTime}, {"x1", CovariateRole::DyadicTime}}), d, y, X);
      ModelSpec spec;
      spec.regressors = {"x0", "x1"};
      const GravityFit f = fit_fe(ds, spec);
      const oracle::DummyFit o =
          oracle::dummy_ls(y, X, static_cast<Eigen::Index>(n * (n - 1)), static_cast<Eigen::Index>(T));
      diff = std::max({diff, (f.beta - o.beta).cwiseAbs().maxCoeff(), (f.se - o.se).cwiseAbs().maxCoeff()});
      ++instances;
    }
  double recovery = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    GeneratorConfig c;
    c.countries = 8;
    c.periods = 4;
    c.noise_sd = 0.0;
    c.seed = seed;
    const SyntheticPanel p = generate_synthetic(c);
    ModelSpec spec;
    spec.regressors = p.truth.size_names;
    recovery = std::max(recovery, (fit_fe(p.data, spec).beta - p.truth.size_coefficients).cwiseAbs().maxCoeff());
  }
  return {diff <= 1e-9 && recovery <= 1e-8,
          fmt("%.0f instances, max |within - dummies| = %.2e; zero-noise recovery error = %.2e", instances, diff,
              recovery) +
              " (" + std::to_string(skipped) + " instances without residual dof skipped)"};
}

Outcome ac4() {
  const auto t0 = Clock::now();
  double sum = 0.0;
  int covered = 0;
  const int reps = 200;
  for (int s = 1; s <= reps; ++s)
    for (double rho : {0.3, 0.0}) {
      GeneratorConfig c;
      c.countries = 10;
      c.periods = 5;
      c.rho = rho;
      c.noise_sd = 0.05;
      c.seed = static_cast<std::uint64_t>(s);
      const SyntheticPanel p = generate_synthetic(c);
      ModelSpec spec;
      spec.regressors = p.truth.size_names;
      spec.spatial = true;
      spec.weights = WeightSpec{};
      const FlowWeight fw(inverse_distance_weights(p.data, Normalization::RowStochastic));
      const GravityFit f = fit_sar_ivgmm(p.data, spec, fw);
      if (rho != 0.0)
        sum += *f.rho;
      else if (std::abs(*f.rho) <= 1.959963984540054 * *f.rho_se)
        ++covered;
    }
  const double mean = sum / reps;
  const double elapsed = seconds_since(t0);
  return {std::abs(mean - 0.3) <= 0.05 && covered >= 180 && elapsed < 300.0,
          fmt("mean rho = %.4f (true 0.3); 95%% CI covers 0 in %.0f/200 null runs; %.1f s", mean, covered, elapsed)};
}

/// Null and power experiments share the calibrated design (n = 15, T = 8, noise 0.05, B = 399).
ValidationReport validate_run(std::uint64_t seed, double border) {
  GeneratorConfig c;
  c.countries = 15;
  c.periods = 8;
  c.noise_sd = 0.05;
  c.seed = seed;
  c.omitted_border_cost = border;
  if (border > 0.0) c.mrt_mode = PanelMrtMode::PerYear;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec spec;
  spec.regressors = p.truth.size_names;
  BootstrapOptions o;
  o.B = 399;
  o.seed = seed;
  return bootstrap_t_test(regression_bootstrap(p.data, spec, o), 0.05);
}

Outcome ac5() {
  const auto t0 = Clock::now();
  int accepted = 0;
  double min_r2 = 1.0;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    const ValidationReport r = validate_run(s, 0.0);
    min_r2 = std::min(min_r2, r.anova_r2);
    if (r.decision == Decision::DistanceRemovable) ++accepted;
  }
  const double elapsed = seconds_since(t0);
  return {min_r2 >= 0.99 && accepted >= 90 && elapsed < 900.0,
          fmt("min ANOVA R^2 = %.5f; null not rejected in %.0f/100 runs; %.1f s", min_r2, accepted, elapsed)};
}

// Frozen after the first calibration run (47/50); see README.
constexpr int kPowerThreshold = 40;

Outcome ac6() {
  int rejected = 0;
  for (std::uint64_t s = 1; s <= 50; ++s)
    if (validate_run(s, 0.5).decision == Decision::NotRemovable) ++rejected;
  return {rejected >= kPowerThreshold,
          fmt("omitted phased border cost rejected in %.0f/50 runs (threshold %.0f)", rejected, kPowerThreshold)};
}

Outcome ac7() {
  GeneratorConfig c;
  c.countries = 10;
  c.periods = 1;
  const SyntheticPanel p = generate_synthetic(c);
  const FlowWeight fw(inverse_distance_weights(p.data, Normalization::RowStochastic));
  const Eigen::SparseMatrix<double> W = flow_weight_matrix(fw, 1);
  const auto N = static_cast<double>(W.rows());
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0.0, 1.0);
  const int draws = 1000;
  Eigen::VectorXd I(draws);
  for (int b = 0; b < draws; ++b) {
    Eigen::VectorXd x(W.rows());
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = z(rng);
    I[b] = morans_i(W, x).statistic;
  }
  const double mean = I.mean();
  const double mc_se = std::sqrt((I.array() - mean).square().sum() / (draws - 1) / draws);
  const double expected = -1.0 / (N - 1.0);

  double brute = 0.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 3; n <= 5; ++n)
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd Wd(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Wd(i, j) = i == j ? 0.0 : u(rng);
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x[i] = z(rng);
      brute = std::max(brute, std::abs(morans_i(normalize_weights(Wd, Normalization::None), x).statistic -
                                       oracle::moran_double_sum(Wd, x)));
    }
  std::ostringstream d;
  d << fmt("null mean I = %.5f vs %.5f ", mean, expected) << fmt("(%.2f MC SE); ", std::abs(mean - expected) / mc_se)
    << fmt("brute-force gap = %.2e", brute);
  return {std::abs(mean - expected) <= 3.0 * mc_se && brute <= 1e-12, d.str()};
}

/// Silences the CLI's console report while a check runs.
struct QuietStdout {
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  ~QuietStdout() { std::cout.rdbuf(saved); }
};

Outcome ac8() {
  const QuietStdout quiet;
  fs::remove_all("acceptance_cli");
  fs::create_directories("acceptance_cli");
  const std::string base = "acceptance_cli/";
  if (cli_support::run({"generate", "--n", "8", "--years", "4", "--seed", "11", "--out", base + "data"}) != kExitOk)
    return {false, "generate failed"};
  const std::string data = base + "data";
  const std::vector<std::vector<std::string>> commands = {
      {"generate", "--n", "8", "--years", "4", "--rho", "0.2", "--seed", "5"},
      {"weights", "--data", data, "--permutations", "199", "--seed", "5"},
      {"estimate", "--data", data, "--no-dist"},
      {"estimate", "--data", data, "--with-dist"},
      {"estimate", "--data", data, "--spatial", "--with-dist", "--permutations", "99"},
      {"compare", "--without", GRAVITY_FIXTURES "/table1_without.csv", "--with", GRAVITY_FIXTURES "/table1_with.csv"},
      {"validate", "--data", data, "--B", "199", "--seed", "5", "--keep-draws"},
      {"mrt-solve", "--data", data},
  };
  int identical = 0;
  for (std::size_t k = 0; k < commands.size(); ++k) {
    std::map<std::string, std::string> first;
    bool same = true;
    for (const char* threads : {"1", "1", "8"}) {
      const std::string out = base + "run" + std::to_string(k) + "_" + threads + "_" + std::to_string(first.size());
      fs::remove_all(out);
      std::vector<std::string> args = commands[k];
      args.insert(args.end(), {"--threads", threads, "--out", out});
      if (cli_support::run(args) != kExitOk) return {false, commands[k][0] + " failed"};
      const auto snap = cli_support::snapshot(out);
      if (first.empty())
        first = snap;
      else
        same = same && snap == first && !snap.empty();
    }
    identical += same;
  }
  return {identical == static_cast<int>(commands.size()),
          fmt("%.0f/%.0f command runs byte-identical across repeats and threads 1, 8", identical,
              static_cast<double>(commands.size()))};
}

Outcome ac9() {
  const QuietStdout quiet;
  fs::remove_all("acceptance_table1");
  const int rc = cli_support::run({"compare", "--without", GRAVITY_FIXTURES "/table1_without.csv", "--with",
                                   GRAVITY_FIXTURES "/table1_with.csv", "--verbatim", "--title",
                                   "A preliminary comparison: IV/GMM estimated coefficients for SAR models with and "
                                   "without distance",
                                   "--out", "acceptance_table1"});
  const bool same = rc == kExitOk && cli_support::slurp("acceptance_table1/table1.md") ==
                                         cli_support::slurp(GRAVITY_FIXTURES "/table1_expected.txt");
  return {same, same ? "reference table reproduced verbatim" : "report differs from the reference table"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9},
  };
  bool all = true;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
