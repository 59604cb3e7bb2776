#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gravity/error.hpp"
#include "gravity/estimator.hpp"
#include "gravity/generator.hpp"
#include "oracles/dummy_ls.hpp"

using namespace gravity;

namespace {

std::vector<std::string> codes(std::size_t n) {
  std::vector<std::string> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back("K" + std::to_string(i));
  return c;
}

Eigen::MatrixXd line_distances(std::size_t n) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::log(100.0 * (1.0 + std::abs(double(i) - double(j))));
  return d;
}

/// Panel with `k` time-varying dyadic regressors named x0, x1, ...
PanelDataset make_panel(std::size_t n, std::size_t T, const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  std::vector<Covariate> cov;
  for (Eigen::Index c = 0; c < X.cols(); ++c) cov.push_back({"x" + std::to_string(c), CovariateRole::DyadicTime});
  std::vector<int> years;
  for (std::size_t t = 0; t < T; ++t) years.push_back(2000 + static_cast<int>(t));
  return PanelDataset(CountryIndex(codes(n)), years, Schema(cov), line_distances(n), y, X);
}

ModelSpec spec_for(const Eigen::MatrixXd& X) {
  ModelSpec s;
  for (Eigen::Index c = 0; c < X.cols(); ++c) s.regressors.push_back("x" + std::to_string(c));
  return s;
}

}  // namespace

TEST_CASE("three-country two-year regression matches frozen values") {
  // Frozen from an independent numpy dummy-variable regression.
  Eigen::VectorXd x(12), y(12);
  x << 0.3, -1.2, 0.5, 2.0, 1.1, -0.4, 0.9, 0.1, -0.7, 1.5, 0.2, 0.6;
  y << 1.0, 0.2, -0.5, 2.2, 1.7, 0.3, 1.9, 0.4, -1.1, 2.9, 1.0, 1.2;
  const Eigen::MatrixXd X = x;
  const GravityFit f = fit_fe(make_panel(3, 2, y, X), spec_for(X));
  CHECK(f.beta[0] == doctest::Approx(0.4751580849141825).epsilon(1e-12));
  CHECK(f.se[0] == doctest::Approx(0.25358028631649865).epsilon(1e-12));
  CHECK(f.sigma2 == doctest::Approx(0.17795844625112903).epsilon(1e-12));
  CHECK(f.dof == 4);
}

TEST_CASE("within estimator equals dummy-variable least squares") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t n = 3; n <= 6; ++n)
    for (std::size_t T = 2; T <= 4; ++T) {
      const auto N = static_cast<Eigen::Index>(n * (n - 1) * T);
      Eigen::MatrixXd X(N, 2);
      Eigen::VectorXd y(N);
      for (Eigen::Index r = 0; r < N; ++r) {
        X(r, 0) = z(rng);
        X(r, 1) = z(rng) + 0.5 * X(r, 0);
        y[r] = 0.7 * X(r, 0) - 0.3 * X(r, 1) + z(rng);
      }
      const PanelDataset ds = make_panel(n, T, y, X);
      const GravityFit f = fit_fe(ds, spec_for(X));
      const oracle::DummyFit o =
          oracle::dummy_ls(y, X, static_cast<Eigen::Index>(n * (n - 1)), static_cast<Eigen::Index>(T));
      CHECK((f.beta - o.beta).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((f.se - o.se).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((f.residuals - o.residuals).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(f.dof == static_cast<std::size_t>(o.dof));
      CHECK(std::abs(f.time_effects.sum()) < 1e-12);
    }
}

TEST_CASE("zero-noise synthetic data recovers the generating parameters") {
  GeneratorConfig c;
  c.countries = 8;
  c.periods = 5;
  c.noise_sd = 0.0;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec spec;
  spec.regressors = p.truth.size_names;
  const GravityFit f = fit_fe(p.data, spec);
  CHECK((f.beta - p.truth.size_coefficients).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 8; ++j)
      if (i != j) CHECK(std::abs(f.pair_effects(i, j) - p.truth.pair_component(i, j)) < 1e-8);
  CHECK((f.time_effects - p.truth.time_component).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("collinear regressors are rank deficient") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd X(24, 2);
  Eigen::VectorXd y(24);
  for (Eigen::Index r = 0; r < 24; ++r) {
    X(r, 0) = z(rng);
    X(r, 1) = 2.0 * X(r, 0);
    y[r] = z(rng);
  }
  try {
    fit_fe(make_panel(3, 4, y, X), spec_for(X));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
}

TEST_CASE("robust and conventional standard errors") {
  GeneratorConfig c;
  c.countries = 6;
  c.periods = 3;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec spec;
  spec.regressors = p.truth.size_names;
  const GravityFit a = fit_fe(p.data, spec, VarianceType::Conventional);
  const GravityFit b = fit_fe(p.data, spec, VarianceType::Robust);
  CHECK(a.beta == b.beta);
  CHECK(b.se.minCoeff() > 0.0);
  CHECK(a.se != b.se);
  CHECK(b.variance == VarianceType::Robust);
}

TEST_CASE("2SLS with the regressors as instruments is least squares") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd Z(50, 3);
  Eigen::VectorXd y(50);
  for (Eigen::Index r = 0; r < 50; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) Z(r, c) = z(rng);
    y[r] = Z.row(r).sum() + z(rng);
  }
  const TslsResult t = two_stage_least_squares(y, Z, Z);
  const Eigen::VectorXd ols = Z.colPivHouseholderQr().solve(y);
  CHECK((t.coefficients - ols).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(two_stage_least_squares(y, Z, Z.leftCols(2)), Error);
}

TEST_CASE("spatial 2SLS recovers rho on a spatial panel") {
  GeneratorConfig c;
  c.countries = 15;
  c.periods = 5;
  c.rho = 0.3;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec spec;
  spec.regressors = p.truth.size_names;
  spec.spatial = true;
  spec.weights = WeightSpec{};
  const FlowWeight fw(inverse_distance_weights(p.data, Normalization::RowStochastic));
  const GravityFit f = fit_sar_ivgmm(p.data, spec, fw);
  REQUIRE(f.rho.has_value());
  CHECK(std::abs(*f.rho - 0.3) < 0.05);
  CHECK(f.first_stage_f.has_value());
  CHECK((f.beta - p.truth.size_coefficients).cwiseAbs().maxCoeff() < 0.1);
  spec.spatial = false;
  CHECK_THROWS_AS(fit_sar_ivgmm(p.data, spec, fw), Error);
}

TEST_CASE("comparison of fits with and without distance") {
  GeneratorConfig c;
  c.countries = 6;
  c.periods = 3;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec with;
  with.regressors = {"gdp_o", "gdp_d", "contig", "dist"};
  with.include_distance = true;
  with.include_pair_fe = false;
  ModelSpec without;
  without.regressors = {"gdp_o", "gdp_d", "contig"};
  without.include_pair_fe = false;
  const GravityFit fw = fit_fe(p.data, with), fn = fit_fe(p.data, without);
  const ComparisonTable t = compare_specs(fw, fn);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[3].name == "dist");
  CHECK_FALSE(t.rows[3].without_estimate.has_value());
  REQUIRE(t.rows[0].delta.has_value());
  CHECK(*t.rows[0].delta == doctest::Approx(fn.beta[0] - fw.beta[0]));
  ModelSpec other = without;
  other.regressors = {"gdp_o", "gdp_d"};
  CHECK_THROWS_AS(compare_specs(fw, fit_fe(p.data, other)), Error);
}

TEST_CASE("fit writers emit headed CSV") {
  GeneratorConfig c;
  c.countries = 4;
  c.periods = 2;
  const SyntheticPanel p = generate_synthetic(c);
  ModelSpec spec;
  spec.regressors = p.truth.size_names;
  const GravityFit f = fit_fe(p.data, spec);
  write_coefficients(f, "fit_coefficients.csv");
  write_pair_effects(f, "fit_pairs.csv");
  write_residuals(f, "fit_residuals.csv");
  write_fit_summary(f, "fit_summary.csv");
  auto first_line = [](const char* path) {
    std::ifstream in(path);
    std::string s;
    std::getline(in, s);
    return s;
  };
  CHECK(first_line("fit_coefficients.csv") == "name,estimate,se,stars");
  CHECK(first_line("fit_pairs.csv") == "origin,dest,theta");
  CHECK(first_line("fit_residuals.csv") == "origin,dest,year,fitted,residual");
  CHECK(first_line("fit_summary.csv") == "key,value");
}
