#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "gravity/error.hpp"
#include "gravity/generator.hpp"
#include "gravity/inference.hpp"

using namespace gravity;

namespace {

SyntheticPanel panel(std::size_t n, std::size_t T, double noise, std::uint64_t seed = 1) {
  GeneratorConfig c;
  c.countries = n;
  c.periods = T;
  c.noise_sd = noise;
  c.seed = seed;
  return generate_synthetic(c);
}

ModelSpec size_spec(const SyntheticPanel& p) {
  ModelSpec s;
  s.regressors = p.truth.size_names;
  return s;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error");
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST_CASE("component extraction rejects unsuitable fits") {
  const SyntheticPanel p = panel(5, 3, 0.05);
  ModelSpec with = size_spec(p);
  with.regressors.push_back("dist");
  with.include_distance = true;
  with.include_pair_fe = false;
  CHECK(code_of([&] { extract_components(fit_fe(p.data, with), p.data); }) == ErrorCode::SpecMismatch);
  ModelSpec no_pairs = size_spec(p);
  no_pairs.include_pair_fe = false;
  CHECK(code_of([&] { extract_components(fit_fe(p.data, no_pairs), p.data); }) == ErrorCode::SpecMismatch);
  const SyntheticPanel other = panel(6, 3, 0.05);
  CHECK(code_of([&] { extract_components(fit_fe(p.data, size_spec(p)), other.data); }) == ErrorCode::IndexMismatch);
  ModelSpec partial;
  partial.regressors = {"gdp_o", "gdp_d"};
  CHECK(code_of([&] { extract_components(fit_fe(p.data, partial), p.data); }) == ErrorCode::MissingCovariate);
}

TEST_CASE("zero-noise components reproduce the pair effects") {
  const SyntheticPanel p = panel(8, 4, 0.0);
  const GravityFit f = fit_fe(p.data, size_spec(p));
  const StructuralComponents c = extract_components(f, p.data);
  CHECK((c.cost_coefficients - p.truth.cost_coefficients).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(c.unidentified.empty());
  CHECK(c.distance_coefficient == -1.0);
  const EmpiricalMrt mrt = solve_empirical_mrt(c);
  CHECK(mrt.residual <= 1e-10);
  const StructuralTerms terms = structural_terms(c, mrt);
  const ResidualMap r = structural_residuals(f.pair_effects, terms);
  CHECK(std::abs(r.mean()) < 1e-12);
  const AnovaResult a = anova_r2(f.pair_effects, terms.total());
  CHECK(a.r2 > 1.0 - 1e-9);
  CHECK(a.var_theta == doctest::Approx(a.var_structural + a.var_residual + a.covariance));
}

TEST_CASE("residual maps and the variance decomposition") {
  Eigen::MatrixXd theta(3, 3), dyadic = Eigen::MatrixXd::Zero(3, 3);
  theta << 0, 1, 2, 3, 0, 5, 6, 7, 0;
  const Eigen::VectorXd out = Eigen::Vector3d(0.5, 1.0, 1.5), in = Eigen::Vector3d(0.0, 1.0, 2.0);
  const ResidualMap raw = structural_residuals(theta, out, in, dyadic, ConstantPolicy::Raw);
  CHECK(raw.r(0, 1) == 1.0 - 0.5 - 1.0);
  CHECK(raw.r(2, 1) == 7.0 - 1.5 - 1.0);
  CHECK(raw.r(1, 1) == 0.0);
  const ResidualMap centred = structural_residuals(theta, out, in, dyadic);
  CHECK(centred.constant == doctest::Approx(raw.mean()));
  CHECK(std::abs(centred.mean()) < 1e-15);
  CHECK(code_of([&] { structural_residuals(theta, Eigen::Vector2d(0, 0), in, dyadic); }) == ErrorCode::IndexMismatch);
  CHECK(anova_r2(theta, theta).r2 == 1.0);
  CHECK(code_of([&] { anova_r2(Eigen::MatrixXd::Ones(3, 3), theta); }) == ErrorCode::DegenerateVariance);
  CHECK(code_of([&] { anova_r2(theta, Eigen::MatrixXd::Ones(2, 2)); }) == ErrorCode::IndexMismatch);
}

TEST_CASE("bootstrap replications equal hand-stepped refits") {
  const SyntheticPanel p = panel(6, 3, 0.05, 4);
  const ModelSpec spec = size_spec(p);
  BootstrapOptions o;
  o.B = 5;
  o.seed = 99;
  o.record_indices = true;
  o.keep_draws = true;
  const BootstrapDraws d = regression_bootstrap(p.data, spec, o);
  REQUIRE(d.means.size() == 5);
  REQUIRE(d.indices.size() == 5);
  const std::size_t N = p.data.rows();
  const double scale = std::sqrt(double(N) / double(N - spec.regressors.size() - (30 + 3 - 1)));
  CHECK(d.dof_scale == doctest::Approx(scale).epsilon(1e-15));
  for (int b = 0; b < 5; ++b) {
    Eigen::VectorXd yb(static_cast<Eigen::Index>(N));
    for (std::size_t r = 0; r < N; ++r)
      yb[static_cast<Eigen::Index>(r)] = d.base_fit.fitted[static_cast<Eigen::Index>(r)] +
                                         scale * d.base_fit.residuals[static_cast<Eigen::Index>(d.indices[b][r])];
    const PanelDataset db = p.data.with_flow(yb);
    const GravityFit f = fit_fe(db, spec);
    const StructuralComponents c = extract_components(f, db);
    const EmpiricalMrt mrt = solve_empirical_mrt(c);
    const ResidualMap r = structural_residuals(f.pair_effects, structural_terms(c, mrt), ConstantPolicy::Raw);
    CHECK(r.mean() == doctest::Approx(d.means[b]).epsilon(1e-9));
    CHECK((f.pair_effects - d.theta[static_cast<std::size_t>(b)]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((mrt.log_Pi - d.log_Pi[static_cast<std::size_t>(b)]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("bootstrap is deterministic across thread counts") {
  const SyntheticPanel p = panel(6, 3, 0.05, 2);
  BootstrapOptions o;
  o.B = 20;
  o.seed = 5;
  const BootstrapDraws a = regression_bootstrap(p.data, size_spec(p), o);
  o.threads = 4;
  const BootstrapDraws b = regression_bootstrap(p.data, size_spec(p), o);
  CHECK(a.means == b.means);
  o.seed = 6;
  CHECK(regression_bootstrap(p.data, size_spec(p), o).means != a.means);
}

TEST_CASE("replication counts are validated") {
  const SyntheticPanel p = panel(5, 2, 0.05);
  BootstrapOptions o;
  o.B = 0;
  CHECK(code_of([&] { regression_bootstrap(p.data, size_spec(p), o); }) == ErrorCode::InvalidB);
  o.B = 50;
  const BootstrapDraws d = regression_bootstrap(p.data, size_spec(p), o);
  CHECK(code_of([&] { bootstrap_t_test(d); }) == ErrorCode::InvalidB);
}

TEST_CASE("t-test statistic, percentile p-value and degenerate draws") {
  const SyntheticPanel p = panel(5, 2, 0.05);
  BootstrapOptions o;
  o.B = 199;
  BootstrapDraws d = regression_bootstrap(p.data, size_spec(p), o);
  const ValidationReport rep = bootstrap_t_test(d);
  const double mbar = d.means.mean();
  const double se = std::sqrt((d.means.array() - mbar).square().sum() / 198.0);
  CHECK(rep.t_stat == doctest::Approx(mbar / se));
  int exceed = 0;
  for (Eigen::Index b = 0; b < 199; ++b) exceed += std::abs(d.means[b] - mbar) >= std::abs(mbar);
  CHECK(rep.p_value == doctest::Approx((1.0 + exceed) / 200.0));
  CHECK((rep.decision == Decision::NotRemovable) == (rep.p_value <= 0.05));

  d.means = Eigen::VectorXd::Zero(199);
  const ValidationReport zero = bootstrap_t_test(d);
  CHECK(zero.t_stat == 0.0);
  CHECK(zero.p_value == 1.0);
  CHECK(zero.decision == Decision::DistanceRemovable);
  d.means = Eigen::VectorXd::Constant(199, 0.3);
  const ValidationReport shifted = bootstrap_t_test(d);
  CHECK(shifted.p_value == 0.0);
  CHECK(shifted.decision == Decision::NotRemovable);
}

TEST_CASE("report lines") {
  CHECK(format_test_line(1.1234, 0.1304, false) == "t = 1.12, Pr(|T|>|t|) = 0.130, null not rejected");
  CHECK(format_test_line(-3.0, 0.001, true) == "t = -3.00, Pr(|T|>|t|) = 0.001, null rejected");
  CHECK(format_r2_line(0.99981) == "ANOVA R^2 = 0.9998");
  ValidationReport r;
  r.anova_r2 = 0.5;
  std::ostringstream out;
  write_validation_text(r, out);
  CHECK(out.str().find("ANOVA R^2 = 0.5000\n") != std::string::npos);
  CHECK(out.str().find("decision = distance-removable\n") != std::string::npos);
}
