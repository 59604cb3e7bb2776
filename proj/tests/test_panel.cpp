#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gravity/error.hpp"
#include "gravity/panel.hpp"

using namespace gravity;

namespace {

const char* kSchema = R"(# test schema
gdp_o = origin size
gdp_d = dest size
contig = dyadic cost
tariff = dyadic_time
)";

/// Balanced 3-country, 2-year panel in text form; flows in logs, dist in logs.
std::string panel_text(bool drop_last = false, bool duplicate = false) {
  std::ostringstream s;
  s << "origin,dest,year,flow,gdp_o,gdp_d,contig,tariff,dist\n";
  const char* c[] = {"AAA", "BBB", "CCC"};
  const double d[3][3] = {{0, 1.0, 2.0}, {1.0, 0, 1.5}, {2.0, 1.5, 0}};
  int k = 0;
  for (int y : {2000, 2001})
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        if (drop_last && y == 2001 && i == 2 && j == 1) continue;
        s << c[i] << ',' << c[j] << ',' << y << ',' << 0.5 * k << ',' << i + 0.1 * (y - 2000) << ','
          << j + 0.2 * (y - 2000) << ',' << (std::abs(i - j) == 1 ? 1 : 0) << ',' << 0.01 * k << ',' << d[i][j]
          << '\n';
        ++k;
      }
  if (duplicate) s << "AAA,BBB,2000,9,0,1,1,0,1\n";
  return s.str();
}

PanelDataset read(const std::string& text) {
  std::istringstream in(text);
  return read_panel(in, parse_schema(kSchema));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST_CASE("pair layout enumerates off-diagonal pairs origin-major") {
  const PairLayout l{4};
  CHECK(l.count() == 12);
  std::size_t p = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      if (i == j) continue;
      CHECK(l.pair(i, j) == p);
      CHECK(l.origin(p) == i);
      CHECK(l.dest(p) == j);
      ++p;
    }
}

TEST_CASE("country index rejects duplicates and resolves codes") {
  const CountryIndex idx({"DEU", "FRA", "ITA"});
  CHECK(idx.position("FRA") == 1);
  CHECK_FALSE(idx.find("USA").has_value());
  CHECK(code_of([&] { (void)idx.position("USA"); }) == ErrorCode::UnknownCountry);
  CHECK(code_of([] { CountryIndex({"DEU", "DEU"}); }) == ErrorCode::InvalidSchema);
  CHECK(code_of([] { CountryIndex({"DEU"}); }) == ErrorCode::InvalidSchema);
}

TEST_CASE("schema parsing checks roles and tags") {
  const Schema s = parse_schema(kSchema);
  REQUIRE(s.size() == 4);
  CHECK(s.at(0).role == CovariateRole::Origin);
  CHECK(s.at(0).tag == ComponentTag::Size);
  CHECK(s.at(2).tag == ComponentTag::Cost);
  CHECK(s.at(3).role == CovariateRole::DyadicTime);
  CHECK(code_of([] { parse_schema("x = sideways"); }) == ErrorCode::InvalidSchema);
  CHECK(code_of([] { parse_schema("x = origin cost"); }) == ErrorCode::InvalidSchema);
  CHECK(code_of([] { parse_schema("flow = origin"); }) == ErrorCode::InvalidSchema);
}

TEST_CASE("panel rows follow year-major pair layout") {
  const PanelDataset ds = read(panel_text());
  CHECK(ds.countries() == 3);
  CHECK(ds.periods() == 2);
  CHECK(ds.rows() == 12);
  // Rows were written in the same order, flow = 0.5 * k.
  for (std::size_t r = 0; r < 12; ++r) CHECK(ds.flow()[static_cast<Eigen::Index>(r)] == doctest::Approx(0.5 * r));
  CHECK(ds.row(1, 2, 0) == 6 + PairLayout{3}.pair(2, 0));
  CHECK(ds.log_distance()(0, 2) == 2.0);
  CHECK(ds.log_distance()(2, 0) == 2.0);
  const Eigen::VectorXd dist = ds.distance_column();
  CHECK(dist[static_cast<Eigen::Index>(ds.row(1, 1, 2))] == 1.5);
}

TEST_CASE("panel input errors are named") {
  CHECK(code_of([] { read(panel_text(true)); }) == ErrorCode::UnbalancedPanel);
  CHECK(code_of([] { read(panel_text(false, true)); }) == ErrorCode::DuplicateObservation);
  CHECK(code_of([] { read("origin,dest,year,flow,gdp_o,gdp_d,contig,dist\n"); }) == ErrorCode::MissingColumn);
  CHECK(code_of([] { read("origin,dest,year,flow,gdp_o,gdp_d,contig,tariff,dist,junk\n"); }) ==
        ErrorCode::UnexpectedColumn);
  std::string bad = panel_text();
  bad.replace(bad.find("AAA,BBB,2000,0"), 14, "AAA,BBB,2000,x");
  CHECK(code_of([&] { read(bad); }) == ErrorCode::MalformedRow);
  CHECK(code_of([] { load_panel("/nonexistent/panel.csv", parse_schema(kSchema)); }) == ErrorCode::MissingFile);
}

TEST_CASE("panel round-trips through CSV exactly") {
  const PanelDataset ds = read(panel_text());
  std::ostringstream out;
  write_panel(ds, out);
  const PanelDataset back = read(out.str());
  CHECK(back.flow() == ds.flow());
  CHECK(back.covariates() == ds.covariates());
  CHECK(back.log_distance() == ds.log_distance());
  CHECK(back.fingerprint() == ds.fingerprint());
}

TEST_CASE("design absorbs time-invariant dyadic regressors under pair effects") {
  const PanelDataset ds = read(panel_text());
  ModelSpec spec;
  spec.regressors = {"gdp_o", "contig", "tariff"};
  CHECK(code_of([&] { build_design(ds, spec); }) == ErrorCode::CollinearDummySpec);
  spec.collinearity = CollinearityPolicy::Absorb;
  const DesignBundle d = build_design(ds, spec);
  CHECK(d.names == std::vector<std::string>{"gdp_o", "tariff"});
  CHECK(d.absorbed == std::vector<std::string>{"contig"});
  CHECK(d.absorbed_dof() == 6 + 2 - 1);
  spec.regressors = {"gdp_o", "nope"};
  CHECK(code_of([&] { build_design(ds, spec); }) == ErrorCode::UnknownRegressor);
  spec.regressors = {"dist"};
  CHECK(code_of([&] { build_design(ds, spec); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("within transform removes pair and year means") {
  const PanelDataset ds = read(panel_text());
  ModelSpec spec;
  spec.regressors = {"gdp_o", "tariff"};
  const DesignBundle d = build_design(ds, spec);
  const Eigen::MatrixXd w = d.within(d.X);
  for (std::size_t p = 0; p < 6; ++p)
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      CHECK(std::abs(w(static_cast<Eigen::Index>(p), c) + w(static_cast<Eigen::Index>(p + 6), c)) < 1e-12);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    CHECK(std::abs(w.col(c).head(6).sum()) < 1e-12);
    CHECK(std::abs(w.col(c).tail(6).sum()) < 1e-12);
  }
  // Idempotent.
  CHECK((d.within(w) - w).cwiseAbs().maxCoeff() < 1e-12);
}
