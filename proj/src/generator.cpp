#include "gravity/generator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/SparseLU>

#include "gravity/error.hpp"
#include "gravity/util.hpp"
#include "gravity/weights.hpp"

namespace gravity {

namespace {

constexpr double kMinSeparationKm = 100.0;
constexpr double kPi = 3.14159265358979323846;

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + p.string());
  return out;
}

std::vector<std::string> country_codes(std::size_t n) {
  std::size_t width = 2;
  for (std::size_t k = 100; k <= n - 1; k *= 10) ++width;
  std::vector<std::string> codes(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string digits = std::to_string(i);
    codes[i] = "C" + std::string(width - digits.size(), '0') + digits;
  }
  return codes;
}

double variance(const std::vector<double>& x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size());
}

double covariance(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - mx) * (y[k] - my);
  return s / static_cast<double>(x.size());
}

}  // namespace

Eigen::VectorXd internal_log_distance(const Eigen::MatrixXd& log_distance) {
  const Eigen::Index n = log_distance.rows();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) m = std::min(m, log_distance(i, j));
    out[i] = m - std::log(2.0);
  }
  return out;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (countries < 2) fail("need at least two countries");
  if (periods < 1) fail("need at least one period");
  if (!(sigma > 1.0)) fail("sigma must exceed 1");
  if (!(noise_sd >= 0.0)) fail("noise sd must be nonnegative");
  if (!(omitted_border_cost >= 0.0)) fail("omitted border cost must be nonnegative");
  if (!(border_phase_down >= 0.0 && border_phase_down <= 1.0)) fail("border phase-down must lie in [0, 1]");
  if (beta_origin.size() != 3 || beta_dest.size() != 3) fail("size coefficients need 3 entries (pop, gdp, ppp)");
  if (cost_effects.size() != 4) fail("cost effects need 4 entries (contig, comlang, comcur, barrier)");
  if (!(distance_elasticity > 0.0)) fail("distance elasticity must be positive");
  if (distance_share >= 1.0) fail("distance share must be below 1");
  if (!std::isfinite(rho) || std::abs(rho) >= 1.0) fail("rho = " + format_exact(rho) + " violates the stationarity bound |rho| < 1");
  if (rho != 0.0 && countries < 3) fail("spatial lag needs at least three countries");
  if (omitted_border_cost > 0.0 && border_phase_down > 0.0 && periods > 1 && mrt_mode == PanelMrtMode::Pooled)
    fail("time-varying omitted costs need per-year resistances (the pooled system has no solution)");
}

Schema synthetic_schema() {
  std::vector<Covariate> c;
  for (const char* s : {"pop", "gdp", "ppp"})
    c.push_back({std::string(s) + "_o", CovariateRole::Origin, ComponentTag::Size});
  for (const char* s : {"pop", "gdp", "ppp"})
    c.push_back({std::string(s) + "_d", CovariateRole::Destination, ComponentTag::Size});
  for (const char* s : {"contig", "comlang", "comcur", "barrier"})
    c.push_back({s, CovariateRole::Dyadic, ComponentTag::Cost});
  return Schema(std::move(c));
}

SyntheticPanel generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.countries;
  const std::size_t T = cfg.periods;
  const auto ni = static_cast<Eigen::Index>(n);
  const double one_minus_sigma = 1.0 - cfg.sigma;

  // Centroids uniform on the sphere with a minimum separation.
  Eigen::VectorXd lat(ni), lon(ni);
  {
    Rng rng = substream(cfg.seed, "geography");
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 100000) throw Error(ErrorCode::InvalidConfig, "cannot place countries 100 km apart");
        const double la = std::asin(2.0 * U(rng) - 1.0) * 180.0 / kPi;
        const double lo = 360.0 * U(rng) - 180.0;
        bool ok = true;
        for (std::size_t h = 0; h < i && ok; ++h)
          ok = haversine_km(la, lo, lat[static_cast<Eigen::Index>(h)], lon[static_cast<Eigen::Index>(h)]) >=
               kMinSeparationKm;
        if (ok) {
          lat[static_cast<Eigen::Index>(i)] = la;
          lon[static_cast<Eigen::Index>(i)] = lo;
          break;
        }
      }
    }
  }
  const Eigen::MatrixXd km = haversine_distances(lat, lon);
  Eigen::MatrixXd ld = Eigen::MatrixXd::Zero(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j)
      if (i != j) ld(i, j) = std::log(km(i, j));

  // Country-year series: level + trend * t + shock.
  const double means[3] = {2.5, 6.0, 0.0}, sds[3] = {1.2, 1.2, 0.3}, growth[3] = {0.01, 0.03, 0.0};
  std::vector<Eigen::MatrixXd> series(3, Eigen::MatrixXd(ni, static_cast<Eigen::Index>(T)));
  {
    Rng rng = substream(cfg.seed, "covariates");
    std::normal_distribution<double> N01(0.0, 1.0);
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index i = 0; i < ni; ++i) {
        const double level = means[c] + sds[c] * N01(rng);
        const double trend = growth[c] + 0.01 * N01(rng);
        for (std::size_t t = 0; t < T; ++t)
          series[c](i, static_cast<Eigen::Index>(t)) = level + trend * static_cast<double>(t) + 0.1 * N01(rng);
      }
  }

  // Dyadic cost covariates (symmetric).
  std::vector<Eigen::MatrixXd> dyadic(4, Eigen::MatrixXd::Zero(ni, ni));
  {
    Rng rng = substream(cfg.seed, "costs");
    std::normal_distribution<double> N01(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const std::size_t neighbours = n <= 5 ? 1 : 2;
    for (Eigen::Index i = 0; i < ni; ++i) {
      std::vector<Eigen::Index> order;
      for (Eigen::Index j = 0; j < ni; ++j)
        if (j != i) order.push_back(j);
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return km(i, a) < km(i, b); });
      for (std::size_t k = 0; k < neighbours; ++k) {
        dyadic[0](i, order[k]) = 1.0;
        dyadic[0](order[k], i) = 1.0;
      }
    }
    std::vector<int> language(n), union_member(n);
    std::vector<double> draw(n);
    for (std::size_t i = 0; i < n; ++i) language[i] = static_cast<int>(U(rng) * 4.0);
    for (std::size_t i = 0; i < n; ++i) draw[i] = U(rng);
    // Both dummies must vary across pairs.
    bool shared = false, distinct = false;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) (language[i] == language[j] ? shared : distinct) = true;
    if (!shared) language[1] = language[0];
    if (!distinct) language[0] = (language[0] + 1) % 4;
    std::vector<std::size_t> by_draw(n);
    std::iota(by_draw.begin(), by_draw.end(), std::size_t{0});
    std::sort(by_draw.begin(), by_draw.end(), [&](std::size_t a, std::size_t b) { return draw[a] < draw[b]; });
    for (std::size_t i = 0; i < n; ++i) union_member[i] = draw[i] < 0.3 ? 1 : 0;
    union_member[by_draw[0]] = union_member[by_draw[1]] = 1;
    if (n >= 3) union_member[by_draw[n - 1]] = 0;
    for (Eigen::Index i = 0; i < ni; ++i)
      for (Eigen::Index j = i + 1; j < ni; ++j) {
        const double lang = language[static_cast<std::size_t>(i)] == language[static_cast<std::size_t>(j)];
        const double cur = union_member[static_cast<std::size_t>(i)] && union_member[static_cast<std::size_t>(j)];
        const double bar = N01(rng);
        dyadic[1](i, j) = dyadic[1](j, i) = lang;
        dyadic[2](i, j) = dyadic[2](j, i) = cur;
        dyadic[3](i, j) = dyadic[3](j, i) = bar;
      }
  }

  // Log trade costs: distance part plus non-distance part, rescaled to the target share.
  const double dist_loading = cfg.distance_elasticity / (cfg.sigma - 1.0);
  Eigen::MatrixXd cost_part = Eigen::MatrixXd::Zero(ni, ni);
  for (int k = 0; k < 4; ++k) cost_part -= cfg.cost_effects[static_cast<std::size_t>(k)] * dyadic[k] / (cfg.sigma - 1.0);
  std::vector<double> dvals, cvals;
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j)
      if (i != j) {
        dvals.push_back(dist_loading * ld(i, j));
        cvals.push_back(cost_part(i, j));
      }
  double scale = 1.0;
  const double var_d = variance(dvals), var_c = variance(cvals), cov_dc = covariance(dvals, cvals);
  if (cfg.distance_share > 0.0 && var_c > 0.0 && var_d > 0.0) {
    const double s = cfg.distance_share;
    const double disc = cov_dc * cov_dc - var_c * var_d * (1.0 - 1.0 / s);
    scale = (-cov_dc + std::sqrt(disc)) / var_c;
  }
  std::vector<double> tvals(dvals.size());
  for (std::size_t k = 0; k < dvals.size(); ++k) tvals[k] = dvals[k] + scale * cvals[k];
  const double realized_share = variance(tvals) > 0.0 ? var_d / variance(tvals) : 1.0;

  const Eigen::VectorXd ld_internal = internal_log_distance(ld);
  Eigen::MatrixXd lnT(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j)
      lnT(i, j) = i == j ? dist_loading * ld_internal[i] : dist_loading * ld(i, j) + scale * cost_part(i, j);

  std::vector<Eigen::MatrixXd> lnT_year(T, lnT);
  if (cfg.omitted_border_cost > 0.0)
    // International border cost, phased down linearly over the sample.
    for (std::size_t t = 0; t < T; ++t) {
      const double phase = T > 1 ? 1.0 - cfg.border_phase_down * static_cast<double>(t) / static_cast<double>(T - 1) : 1.0;
      for (Eigen::Index i = 0; i < ni; ++i)
        for (Eigen::Index j = 0; j < ni; ++j)
          if (i != j) lnT_year[t](i, j) += phase * cfg.omitted_border_cost;
    }
  // Costs are homogeneous of degree zero in flows; shift so that T >= 1.
  double min_ln = 0.0;
  for (const auto& m : lnT_year) min_ln = std::min(min_ln, m.minCoeff());
  if (min_ln < 0.0) {
    lnT.array() -= min_ln;
    for (auto& m : lnT_year) m.array() -= min_ln;
  }

  // Sizes and worlds.
  Eigen::MatrixXd lnX(ni, static_cast<Eigen::Index>(T)), lnE(ni, static_cast<Eigen::Index>(T));
  Eigen::VectorXd ln_etilde_total(static_cast<Eigen::Index>(T));
  std::vector<StructuralWorld> worlds;
  worlds.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto tt = static_cast<Eigen::Index>(t);
    Eigen::VectorXd lx(ni), le(ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
      lx[i] = 0.0;
      le[i] = 0.0;
      for (int c = 0; c < 3; ++c) {
        lx[i] += cfg.beta_origin[static_cast<std::size_t>(c)] * series[c](i, tt);
        le[i] += cfg.beta_dest[static_cast<std::size_t>(c)] * series[c](i, tt);
      }
    }
    const double lx_max = lx.maxCoeff(), le_max = le.maxCoeff();
    const double ln_x_total = lx_max + std::log((lx.array() - lx_max).exp().sum());
    const double ln_e_total = le_max + std::log((le.array() - le_max).exp().sum());
    ln_etilde_total[tt] = ln_e_total;
    lnX.col(tt) = lx;
    lnE.col(tt) = le.array() - ln_e_total + ln_x_total;
    Eigen::VectorXd X = lx.array().exp(), E = lnE.col(tt).array().exp();
    const double total = X.sum();
    E *= total / E.sum();
    lnE.col(tt) = E.array().log();
    worlds.emplace_back(cfg.sigma, Eigen::MatrixXd(lnT_year[t].array().exp()), E, X, total);
  }
  MrtOptions opt;
  const auto mrt = solve_mrt_panel(worlds, opt, cfg.mrt_mode, cfg.threads);

  // Structural log flows over estimation rows.
  const PairLayout layout{n};
  const std::size_t m = layout.count();
  const std::size_t N = m * T;
  Eigen::VectorXd s(static_cast<Eigen::Index>(N));
  Eigen::MatrixXd Pi(ni, static_cast<Eigen::Index>(T)), P(ni, static_cast<Eigen::Index>(T));
  for (std::size_t t = 0; t < T; ++t) {
    const auto tt = static_cast<Eigen::Index>(t);
    Pi.col(tt) = mrt[t].Pi;
    P.col(tt) = mrt[t].P;
    const double ln_total = std::log(worlds[t].world_output);
    for (std::size_t p = 0; p < m; ++p) {
      const auto i = static_cast<Eigen::Index>(layout.origin(p));
      const auto j = static_cast<Eigen::Index>(layout.dest(p));
      s[static_cast<Eigen::Index>(t * m + p)] =
          lnE(j, tt) + lnX(i, tt) - ln_total +
          one_minus_sigma * (lnT_year[t](i, j) - std::log(mrt[t].Pi[i]) - std::log(mrt[t].P[j]));
    }
  }

  // Covariate matrix in schema order.
  const Schema schema = synthetic_schema();
  Eigen::MatrixXd cov(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < m; ++p) {
      const auto r = static_cast<Eigen::Index>(t * m + p);
      const auto i = static_cast<Eigen::Index>(layout.origin(p));
      const auto j = static_cast<Eigen::Index>(layout.dest(p));
      const auto tt = static_cast<Eigen::Index>(t);
      for (int c = 0; c < 3; ++c) {
        cov(r, c) = series[c](i, tt);
        cov(r, 3 + c) = series[c](j, tt);
      }
      for (int k = 0; k < 4; ++k) cov(r, 6 + k) = dyadic[k](i, j);
    }

  // Noise and spatial reduced form.
  Eigen::VectorXd eps = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  if (cfg.noise_sd > 0.0)
    for (std::size_t t = 0; t < T; ++t) {
      Rng rng = substream(cfg.seed, "noise", t);
      std::normal_distribution<double> Nz(0.0, cfg.noise_sd);
      for (std::size_t p = 0; p < m; ++p) eps[static_cast<Eigen::Index>(t * m + p)] = Nz(rng);
    }
  Eigen::VectorXd y = s + eps;
  Eigen::VectorXd lag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  if (n >= 3) {
    const FlowWeight fw(inverse_distance_weights(km, cfg.weights.normalization), cfg.weights.mode);
    if (cfg.rho != 0.0) {
      const auto mi = static_cast<Eigen::Index>(m);
      if (cfg.weights.normalization == Normalization::None) {
        double norm = 0.0;
        for (Eigen::Index r = 0; r < mi; ++r) norm = std::max(norm, fw.period_operator().row(r).cwiseAbs().sum());
        if (std::abs(cfg.rho) * norm >= 1.0)
          throw Error(ErrorCode::InvalidConfig, "|rho| times the weight norm must be below 1");
      }
      Eigen::SparseMatrix<double> I(mi, mi);
      I.setIdentity();
      Eigen::SparseMatrix<double> A = I - cfg.rho * Eigen::SparseMatrix<double>(fw.period_operator());
      A.makeCompressed();
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(A);
      if (lu.info() != Eigen::Success) throw Error(ErrorCode::InvalidConfig, "I - rho W is singular");
      for (std::size_t t = 0; t < T; ++t) {
        const Eigen::VectorXd rhs = y.segment(static_cast<Eigen::Index>(t * m), mi);
        y.segment(static_cast<Eigen::Index>(t * m), mi) = lu.solve(rhs);
      }
    }
    lag = flow_lag(fw, y);
  }

  GroundTruth truth;
  truth.sigma = cfg.sigma;
  truth.rho = cfg.rho;
  truth.size_names = {"pop_o", "gdp_o", "ppp_o", "pop_d", "gdp_d", "ppp_d"};
  truth.size_coefficients.resize(6);
  for (int c = 0; c < 3; ++c) {
    truth.size_coefficients[c] = cfg.beta_origin[static_cast<std::size_t>(c)];
    truth.size_coefficients[3 + c] = cfg.beta_dest[static_cast<std::size_t>(c)];
  }
  truth.cost_names = {"contig", "comlang", "comcur", "barrier"};
  truth.cost_coefficients.resize(4);
  for (int k = 0; k < 4; ++k) truth.cost_coefficients[k] = scale * cfg.cost_effects[static_cast<std::size_t>(k)];
  truth.distance_elasticity = cfg.distance_elasticity;
  truth.distance_share = realized_share;
  truth.latitude = lat;
  truth.longitude = lon;
  truth.log_trade_cost = lnT;
  truth.Pi = Pi;
  truth.P = P;
  truth.log_output = lnX;
  truth.log_expenditure = lnE;
  truth.structural = s;
  truth.noise = eps;
  truth.spatial_lag = lag;

  // Two-way split of the non-size part of the structural flows.
  const Eigen::VectorXd r = s - cov.leftCols(6) * truth.size_coefficients;
  truth.pair_component = Eigen::MatrixXd::Zero(ni, ni);
  truth.time_component = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));
  const double grand = r.mean();
  for (std::size_t t = 0; t < T; ++t)
    truth.time_component[static_cast<Eigen::Index>(t)] =
        r.segment(static_cast<Eigen::Index>(t * m), static_cast<Eigen::Index>(m)).mean() - grand;
  for (std::size_t p = 0; p < m; ++p) {
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) acc += r[static_cast<Eigen::Index>(t * m + p)];
    truth.pair_component(static_cast<Eigen::Index>(layout.origin(p)), static_cast<Eigen::Index>(layout.dest(p))) =
        acc / static_cast<double>(T);
  }

  std::vector<int> years(T);
  for (std::size_t t = 0; t < T; ++t) years[t] = cfg.first_year + static_cast<int>(t);
  PanelDataset ds(CountryIndex(country_codes(n)), std::move(years), schema, ld, y, cov);
  return SyntheticPanel{std::move(ds), std::move(truth)};
}

void write_truth(const SyntheticPanel& panel, const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  const auto& ds = panel.data;
  const auto& g = panel.truth;
  const auto n = static_cast<Eigen::Index>(ds.countries());
  {
    auto out = open_out(dir / "mrt_truth.csv");
    out << "country,year,Pi,P\n";
    for (std::size_t t = 0; t < ds.periods(); ++t)
      for (Eigen::Index i = 0; i < n; ++i)
        out << ds.index().code(static_cast<std::size_t>(i)) << ',' << ds.years()[t] << ','
            << format_exact(g.Pi(i, static_cast<Eigen::Index>(t))) << ','
            << format_exact(g.P(i, static_cast<Eigen::Index>(t))) << '\n';
  }
  {
    auto out = open_out(dir / "tradecost_truth.csv");
    out << "origin,dest,T\n";
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        out << ds.index().code(static_cast<std::size_t>(i)) << ',' << ds.index().code(static_cast<std::size_t>(j))
            << ',' << format_exact(std::exp(g.log_trade_cost(i, j))) << '\n';
  }
  {
    auto out = open_out(dir / "coefficients_truth.csv");
    out << "name,value\n";
    for (std::size_t k = 0; k < g.size_names.size(); ++k)
      out << g.size_names[k] << ',' << format_exact(g.size_coefficients[static_cast<Eigen::Index>(k)]) << '\n';
    for (std::size_t k = 0; k < g.cost_names.size(); ++k)
      out << g.cost_names[k] << ',' << format_exact(g.cost_coefficients[static_cast<Eigen::Index>(k)]) << '\n';
    out << "distance_elasticity," << format_exact(g.distance_elasticity) << '\n';
    out << "distance_share," << format_exact(g.distance_share) << '\n';
    out << "sigma," << format_exact(g.sigma) << '\n';
    out << "rho," << format_exact(g.rho) << '\n';
  }
  {
    auto out = open_out(dir / "pair_truth.csv");
    out << "origin,dest,theta\n";
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j)
          out << ds.index().code(static_cast<std::size_t>(i)) << ',' << ds.index().code(static_cast<std::size_t>(j))
              << ',' << format_exact(g.pair_component(i, j)) << '\n';
  }
}

}  // namespace gravity
