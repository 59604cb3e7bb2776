#include "gravity/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>

#include "gravity/error.hpp"
#include "gravity/generator.hpp"
#include "gravity/util.hpp"

namespace gravity {

namespace {

constexpr double kDegenerateSe = 1e-10;
constexpr double kZeroMean = 1e-8;
constexpr int kMinReplications = 199;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
  return out;
}

double offdiag_mean(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) s += m(i, j);
  return s / static_cast<double>(n * (n - 1));
}

std::vector<double> offdiag_values(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  const Eigen::Index n = m.rows();
  v.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) v.push_back(m(i, j));
  return v;
}

double pop_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteComponent, std::string(what) + " has non-finite entries");
}

}  // namespace

// --------------------------------------------------------------- components

ComponentExtractor::ComponentExtractor(const PanelDataset& ds, const ModelSpec& spec,
                                       const std::vector<std::string>& names, const ComponentOptions& options)
    : index_(ds.index()), years_(ds.years()), sigma_(options.sigma) {
  if (spec.include_distance) throw Error(ErrorCode::SpecMismatch, "components need the fit without distance");
  if (!spec.include_pair_fe || spec.symmetric_pair_fe)
    throw Error(ErrorCode::SpecMismatch, "components need directional pair effects");
  if (!(sigma_ > 1.0)) throw Error(ErrorCode::InvalidConfig, "sigma must exceed 1");
  const std::size_t n = ds.countries();
  if (n < 3) throw Error(ErrorCode::SpecMismatch, "second-stage cost recovery needs at least three countries");
  const auto ni = static_cast<Eigen::Index>(n);
  const auto T = static_cast<Eigen::Index>(ds.periods());

  bool any_tag = false;
  for (const auto& c : ds.schema().covariates()) any_tag = any_tag || c.tag != ComponentTag::None;
  auto position = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorCode::MissingCovariate, name + " has no fitted coefficient");
    return static_cast<std::size_t>(it - names.begin());
  };
  auto country_values = [&](const std::string& name, bool origin) {
    const Eigen::VectorXd col = ds.covariate(name);
    Eigen::MatrixXd v(ni, T);
    for (std::size_t t = 0; t < ds.periods(); ++t)
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t other = k == 0 ? 1 : 0;
        const std::size_t r = origin ? ds.row(t, k, other) : ds.row(t, other, k);
        v(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = col[static_cast<Eigen::Index>(r)];
      }
    return v;
  };
  for (const auto& c : ds.schema().covariates()) {
    const bool size = any_tag ? c.tag == ComponentTag::Size : true;
    const bool cost = any_tag ? c.tag == ComponentTag::Cost : true;
    if (c.role == CovariateRole::Origin && size) {
      origin_names_.push_back(c.name);
      origin_pos_.push_back(position(c.name));
      origin_values_.push_back(country_values(c.name, true));
    } else if (c.role == CovariateRole::Destination && size) {
      dest_names_.push_back(c.name);
      dest_pos_.push_back(position(c.name));
      dest_values_.push_back(country_values(c.name, false));
    } else if (c.role == CovariateRole::Dyadic && cost) {
      cost_names_.push_back(c.name);
      const Eigen::VectorXd col = ds.covariate(c.name);
      Eigen::MatrixXd v = Eigen::MatrixXd::Zero(ni, ni);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[static_cast<Eigen::Index>(ds.row(0, i, j))];
      cost_values_.push_back(std::move(v));
    }
  }
  log_distance_ = ds.log_distance();
  internal_ = internal_log_distance(log_distance_);

  if (options.loading == DistanceLoading::Fitted) {
    if (options.with_distance) {
      if (!options.with_distance->find("dist"))
        throw Error(ErrorCode::MissingCovariate, "with-distance fit has no dist coefficient");
      distance_coefficient_ = options.with_distance->coefficient("dist");
    } else {
      fitted_in_second_stage_ = true;
    }
  }

  // Second stage over pairs: cost covariates (and distance) against origin and
  // destination dummies, partialled out once.
  const PairLayout layout{n};
  const auto m = static_cast<Eigen::Index>(layout.count());
  const auto c = static_cast<Eigen::Index>(cost_values_.size() + (fitted_in_second_stage_ ? 1 : 0));
  Eigen::MatrixXd Z(m, c), D = Eigen::MatrixXd::Zero(m, 2 * ni - 1);
  for (Eigen::Index p = 0; p < m; ++p) {
    const auto i = static_cast<Eigen::Index>(layout.origin(static_cast<std::size_t>(p)));
    const auto j = static_cast<Eigen::Index>(layout.dest(static_cast<std::size_t>(p)));
    for (std::size_t k = 0; k < cost_values_.size(); ++k) Z(p, static_cast<Eigen::Index>(k)) = cost_values_[k](i, j);
    if (fitted_in_second_stage_) Z(p, c - 1) = log_distance_(i, j);
    D(p, i) = 1.0;
    if (j > 0) D(p, ni + j - 1) = 1.0;
  }
  if (c > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qd(D);
    const Eigen::MatrixXd Q = Eigen::MatrixXd(qd.householderQ()).leftCols(qd.rank());
    const Eigen::MatrixXd MZ = Z - Q * (Q.transpose() * Z);
    // Columns not identified after the dummies are dropped in order; their
    // effect is zero and the fitted cost index stays unique.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < c; ++k) {
      Eigen::MatrixXd trial(m, static_cast<Eigen::Index>(keep.size()) + 1);
      for (std::size_t q = 0; q < keep.size(); ++q) trial.col(static_cast<Eigen::Index>(q)) = MZ.col(keep[q]);
      trial.col(trial.cols() - 1) = MZ.col(k);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
      qr.setThreshold(1e-9);
      if (qr.rank() == trial.cols()) {
        keep.push_back(k);
      } else if (fitted_in_second_stage_ && k == c - 1) {
        throw Error(ErrorCode::RankDeficient, "distance is not identified from the pair effects");
      } else {
        unidentified_.push_back(cost_names_[static_cast<std::size_t>(k)]);
      }
    }
    Eigen::MatrixXd MK(m, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t q = 0; q < keep.size(); ++q) MK.col(static_cast<Eigen::Index>(q)) = MZ.col(keep[q]);
    const Eigen::MatrixXd RK = (MK.transpose() * MK).ldlt().solve(MK.transpose());
    R_ = Eigen::MatrixXd::Zero(c, m);
    for (std::size_t q = 0; q < keep.size(); ++q) R_.row(keep[q]) = RK.row(static_cast<Eigen::Index>(q));
  } else {
    R_.resize(0, m);
  }
}

StructuralComponents ComponentExtractor::extract(const Eigen::VectorXd& beta, const Eigen::MatrixXd& theta) const {
  const std::size_t n = index_.size();
  const auto ni = static_cast<Eigen::Index>(n);
  const auto T = static_cast<Eigen::Index>(years_.size());
  if (theta.rows() != ni || theta.cols() != ni) throw Error(ErrorCode::IndexMismatch, "pair effects dimension");
  StructuralComponents s;
  s.index = index_;
  s.years = years_;
  s.sigma = sigma_;
  s.origin_names = origin_names_;
  s.dest_names = dest_names_;
  s.cost_names = cost_names_;
  s.unidentified = unidentified_;
  s.X_hat = Eigen::MatrixXd::Zero(ni, T);
  s.E_hat = Eigen::MatrixXd::Zero(ni, T);
  s.origin_coefficients.resize(static_cast<Eigen::Index>(origin_pos_.size()));
  s.dest_coefficients.resize(static_cast<Eigen::Index>(dest_pos_.size()));
  for (std::size_t k = 0; k < origin_pos_.size(); ++k) {
    const double b = beta[static_cast<Eigen::Index>(origin_pos_[k])];
    s.origin_coefficients[static_cast<Eigen::Index>(k)] = b;
    s.X_hat += b * origin_values_[k];
  }
  for (std::size_t k = 0; k < dest_pos_.size(); ++k) {
    const double b = beta[static_cast<Eigen::Index>(dest_pos_[k])];
    s.dest_coefficients[static_cast<Eigen::Index>(k)] = b;
    s.E_hat += b * dest_values_[k];
  }

  const PairLayout layout{n};
  const auto m = static_cast<Eigen::Index>(layout.count());
  Eigen::VectorXd y(m);
  for (Eigen::Index p = 0; p < m; ++p) {
    const auto i = static_cast<Eigen::Index>(layout.origin(static_cast<std::size_t>(p)));
    const auto j = static_cast<Eigen::Index>(layout.dest(static_cast<std::size_t>(p)));
    y[p] = theta(i, j) - (fitted_in_second_stage_ ? 0.0 : distance_coefficient_ * log_distance_(i, j));
  }
  const Eigen::VectorXd psi = R_ * y;
  const auto nc = static_cast<Eigen::Index>(cost_values_.size());
  s.cost_coefficients = psi.head(nc);
  s.distance_coefficient = fitted_in_second_stage_ ? psi[nc] : distance_coefficient_;

  const double scale = 1.0 / (1.0 - sigma_);
  s.distance.resize(ni, ni);
  s.T2_hat = Eigen::MatrixXd::Zero(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j)
      s.distance(i, j) = s.distance_coefficient * scale * (i == j ? internal_[i] : log_distance_(i, j));
  for (Eigen::Index k = 0; k < nc; ++k) s.T2_hat += s.cost_coefficients[k] * scale * cost_values_[static_cast<std::size_t>(k)];
  s.T_hat = s.distance + s.T2_hat;
  require_finite(s.X_hat, "X_hat");
  require_finite(s.E_hat, "E_hat");
  require_finite(s.T_hat, "T_hat");
  return s;
}

StructuralComponents extract_components(const GravityFit& fit, const PanelDataset& ds, const ComponentOptions& options) {
  if (!(fit.index == ds.index()) || fit.years != ds.years())
    throw Error(ErrorCode::IndexMismatch, "fit and dataset differ in countries or years");
  const ComponentExtractor ex(ds, fit.spec, fit.names, options);
  return ex.extract(fit.beta, fit.pair_effects);
}

// ---------------------------------------------------------------------- MRT

EmpiricalMrt solve_empirical_mrt(const StructuralComponents& c, PanelMrtMode mode, const MrtOptions& options,
                                 unsigned threads) {
  require_finite(c.X_hat, "X_hat");
  require_finite(c.E_hat, "E_hat");
  require_finite(c.T_hat, "T_hat");
  const Eigen::Index n = c.X_hat.rows();
  const Eigen::Index T = c.X_hat.cols();
  if (c.T_hat.rows() != n || c.E_hat.rows() != n || c.E_hat.cols() != T)
    throw Error(ErrorCode::IndexMismatch, "component dimensions differ");
  // Sizes only enter relative to their totals, so a common shift is harmless.
  const double shift = c.X_hat.maxCoeff();
  const Eigen::MatrixXd trade_cost = c.T_hat.array().exp();
  std::vector<StructuralWorld> worlds(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    StructuralWorld& w = worlds[static_cast<std::size_t>(t)];
    w.sigma = c.sigma;
    w.trade_cost = trade_cost;
    w.output = (c.X_hat.col(t).array() - shift).exp();
    w.world_output = w.output.sum();
    const Eigen::VectorXd e = (c.E_hat.col(t).array() - c.E_hat.col(t).maxCoeff()).exp();
    w.expenditure = e * (w.world_output / e.sum());
  }
  EmpiricalMrt out;
  out.mode = mode;
  out.log_Pi.resize(n, T);
  out.log_P.resize(n, T);
  if (mode == PanelMrtMode::Pooled) {
    const auto [A, B] = pooled_kernels(worlds);
    const MrtSolution sol = solve_resistance_system<double>(A, B, c.sigma, options);
    for (Eigen::Index t = 0; t < T; ++t) {
      out.log_Pi.col(t) = sol.Pi.array().log();
      out.log_P.col(t) = sol.P.array().log();
    }
    out.iterations = sol.iterations;
    out.residual = std::max(sol.residual, sol.relative_residual);
  } else {
    std::vector<MrtSolution> sols(worlds.size());
    parallel_for(worlds.size(), threads, [&](std::size_t t) {
      const auto [A, B] = resistance_kernels(worlds[t]);
      try {
        sols[t] = solve_resistance_system<double>(A, B, c.sigma, options);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonConvergence)
          throw Error(ErrorCode::NonConvergence, "year " + std::to_string(c.years.at(t)) + ": " + e.what());
        throw;
      }
    });
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto& sol = sols[static_cast<std::size_t>(t)];
      out.log_Pi.col(t) = sol.Pi.array().log();
      out.log_P.col(t) = sol.P.array().log();
      out.iterations = std::max(out.iterations, sol.iterations);
      out.residual = std::max({out.residual, sol.residual, sol.relative_residual});
    }
  }
  return out;
}

// -------------------------------------------------------------------- terms

Eigen::MatrixXd StructuralTerms::total() const {
  const Eigen::Index n = outward.size();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) S(i, j) = outward[i] + inward[j] + distance(i, j) + cost(i, j);
  return S;
}

StructuralTerms structural_terms(const StructuralComponents& c, const EmpiricalMrt& mrt) {
  const Eigen::Index n = c.X_hat.rows();
  const Eigen::Index T = c.X_hat.cols();
  if (mrt.log_Pi.rows() != n || mrt.log_Pi.cols() != T)
    throw Error(ErrorCode::IndexMismatch, "resistance dimensions differ from components");
  StructuralTerms s;
  double K = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) K -= log_sum_exp(c.E_hat.col(t));
  s.constant = K / static_cast<double>(T);
  const double a = c.sigma - 1.0;
  s.outward = (a * mrt.log_Pi.rowwise().mean()).array() + s.constant;
  s.inward = a * mrt.log_P.rowwise().mean();
  s.distance = -a * c.distance;
  s.cost = -a * c.T2_hat;
  s.distance.diagonal().setZero();
  s.cost.diagonal().setZero();
  return s;
}

double ResidualMap::mean() const { return offdiag_mean(r); }

ResidualMap structural_residuals(const Eigen::MatrixXd& theta, const Eigen::VectorXd& outward,
                                 const Eigen::VectorXd& inward, const Eigen::MatrixXd& dyadic, ConstantPolicy policy) {
  const Eigen::Index n = theta.rows();
  if (theta.cols() != n || outward.size() != n || inward.size() != n || dyadic.rows() != n || dyadic.cols() != n)
    throw Error(ErrorCode::IndexMismatch, "pair effects and structural terms differ in country index");
  ResidualMap out;
  out.policy = policy;
  out.r = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) out.r(i, j) = theta(i, j) - (outward[i] + inward[j] + dyadic(i, j));
  if (policy == ConstantPolicy::MeanCentered) {
    out.constant = offdiag_mean(out.r);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) out.r(i, j) -= out.constant;
  }
  return out;
}

ResidualMap structural_residuals(const Eigen::MatrixXd& theta, const StructuralTerms& terms, ConstantPolicy policy) {
  return structural_residuals(theta, terms.outward, terms.inward, terms.distance + terms.cost, policy);
}

AnovaResult anova_r2(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& structural) {
  const Eigen::Index n = theta.rows();
  if (theta.cols() != n || structural.rows() != n || structural.cols() != n)
    throw Error(ErrorCode::IndexMismatch, "pair effects and structural map differ in country index");
  if (n * (n - 1) < 3) throw Error(ErrorCode::DegenerateVariance, "need at least three pairs");
  const std::vector<double> th = offdiag_values(theta), S = offdiag_values(structural);
  std::vector<double> r(th.size());
  for (std::size_t k = 0; k < th.size(); ++k) r[k] = th[k] - S[k];
  AnovaResult a;
  a.var_theta = pop_variance(th);
  a.var_structural = pop_variance(S);
  a.var_residual = pop_variance(r);
  if (!(a.var_theta > 0.0)) throw Error(ErrorCode::DegenerateVariance, "pair effects have zero variance");
  a.covariance = a.var_theta - a.var_structural - a.var_residual;
  a.r2 = 1.0 - a.var_residual / a.var_theta;
  return a;
}

// ---------------------------------------------------------------- bootstrap

BootstrapDraws regression_bootstrap(const PanelDataset& ds, const ModelSpec& spec, const BootstrapOptions& opt) {
  if (opt.B < 1) throw Error(ErrorCode::InvalidB, "B must be at least 1, got " + std::to_string(opt.B));
  if (spec.spatial) throw Error(ErrorCode::SpecMismatch, "the bootstrap refits the non-spatial pair-effects model");
  const FixedEffectsModel model(build_design(ds, spec), VarianceType::Conventional);
  const ComponentExtractor extractor(ds, spec, model.design().names, opt.components);

  BootstrapDraws d;
  d.B_requested = opt.B;
  d.base_fit = model.fit(ds.flow());
  d.base_fit.spec = spec;
  d.base_fit.index = ds.index();
  d.base_fit.years = ds.years();
  d.base_components = extractor.extract(d.base_fit.beta, d.base_fit.pair_effects);
  d.base_mrt = solve_empirical_mrt(d.base_components, opt.mrt_mode, opt.mrt, opt.threads);
  d.base_terms = structural_terms(d.base_components, d.base_mrt);
  d.base_residuals = structural_residuals(d.base_fit.pair_effects, d.base_terms, opt.test_policy);
  d.base_anova = anova_r2(d.base_fit.pair_effects, d.base_terms.total());

  const std::size_t N = d.base_fit.N;
  const std::size_t k = d.base_fit.names.size();
  d.dof_scale = std::sqrt(static_cast<double>(N) / static_cast<double>(N - k - model.design().absorbed_dof()));
  const Eigen::VectorXd& fitted = d.base_fit.fitted;
  const Eigen::VectorXd& resid = d.base_fit.residuals;

  const auto B = static_cast<std::size_t>(opt.B);
  struct Rep {
    bool ok = false;
    std::string failure;
    double mean = 0.0;
    Eigen::MatrixXd theta, log_Pi, log_P, r;
    std::vector<std::size_t> idx;
  };
  std::vector<Rep> reps(B);
  parallel_for(B, opt.threads, [&](std::size_t b) {
    Rep& rep = reps[b];
    Rng rng = substream(opt.seed, "bootstrap", b);
    std::uniform_int_distribution<std::size_t> pick(0, N - 1);
    std::vector<std::size_t> idx(N);
    for (auto& v : idx) v = pick(rng);
    Eigen::VectorXd yb(static_cast<Eigen::Index>(N));
    for (std::size_t r = 0; r < N; ++r)
      yb[static_cast<Eigen::Index>(r)] = fitted[static_cast<Eigen::Index>(r)] + d.dof_scale * resid[static_cast<Eigen::Index>(idx[r])];
    const Eigen::VectorXd beta = model.coefficients(yb);
    Eigen::MatrixXd theta = model.pair_effects(yb, beta);
    try {
      const StructuralComponents comp = extractor.extract(beta, theta);
      const EmpiricalMrt mrt = solve_empirical_mrt(comp, opt.mrt_mode, opt.mrt, 1);
      const StructuralTerms terms = structural_terms(comp, mrt);
      ResidualMap rm = structural_residuals(theta, terms, opt.test_policy);
      rep.mean = rm.mean();
      rep.ok = true;
      if (opt.keep_draws) {
        rep.theta = std::move(theta);
        rep.log_Pi = mrt.log_Pi;
        rep.log_P = mrt.log_P;
        rep.r = std::move(rm.r);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonConvergence && e.code() != ErrorCode::NonFiniteComponent) throw;
      rep.failure = "replication " + std::to_string(b) + ": " + e.what();
    }
    if (opt.record_indices) rep.idx = std::move(idx);
  });

  std::vector<double> means;
  for (std::size_t b = 0; b < B; ++b) {
    Rep& rep = reps[b];
    if (opt.record_indices) d.indices.push_back(std::move(rep.idx));
    if (!rep.ok) {
      d.skipped.push_back(rep.failure);
      continue;
    }
    d.replications.push_back(static_cast<int>(b));
    means.push_back(rep.mean);
    if (opt.keep_draws) {
      d.theta.push_back(std::move(rep.theta));
      d.log_Pi.push_back(std::move(rep.log_Pi));
      d.log_P.push_back(std::move(rep.log_P));
      d.r.push_back(std::move(rep.r));
    }
  }
  const auto budget = static_cast<std::size_t>(std::floor(opt.skip_fraction * static_cast<double>(B)));
  if (d.skipped.size() > budget)
    throw Error(ErrorCode::NonConvergence, std::to_string(d.skipped.size()) + " of " + std::to_string(B) +
                                               " replications failed (budget " + std::to_string(budget) +
                                               "); first: " + d.skipped.front());
  d.means = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  return d;
}

std::string_view to_string(Decision d) noexcept {
  return d == Decision::DistanceRemovable ? "distance-removable" : "not-removable";
}

ValidationReport bootstrap_t_test(const BootstrapDraws& draws, double alpha, PValueReference reference) {
  const Eigen::Index B = draws.means.size();
  if (B < kMinReplications)
    throw Error(ErrorCode::InvalidB, "the t-test needs at least " + std::to_string(kMinReplications) +
                                         " successful replications, got " + std::to_string(B));
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  ValidationReport rep;
  rep.alpha = alpha;
  rep.reference = reference;
  rep.B = static_cast<int>(B);
  rep.B_requested = draws.B_requested;
  rep.skipped = draws.skipped.size();
  rep.sigma = draws.base_components.sigma;
  rep.anova = draws.base_anova;
  rep.anova_r2 = draws.base_anova.r2;
  rep.notes = draws.skipped;

  const double mbar = draws.means.mean();
  const double se = std::sqrt((draws.means.array() - mbar).square().sum() / static_cast<double>(B - 1));
  rep.mean_of_means = mbar;
  rep.se = se;
  if (se <= kDegenerateSe) {
    if (std::abs(mbar) <= kZeroMean) {
      rep.t_stat = 0.0;
      rep.p_value = 1.0;
      rep.notes.push_back("DegenerateSE: replications identical with zero mean; null accepted");
    } else {
      rep.t_stat = mbar > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      rep.p_value = 0.0;
      rep.notes.push_back("DegenerateSE: replications identical with nonzero mean; null rejected");
    }
  } else {
    rep.t_stat = mbar / se;
    if (reference == PValueReference::Percentile) {
      Eigen::Index exceed = 0;
      for (Eigen::Index b = 0; b < B; ++b)
        if (std::abs(draws.means[b] - mbar) >= std::abs(mbar)) ++exceed;
      rep.p_value = static_cast<double>(1 + exceed) / static_cast<double>(B + 1);
    } else {
      rep.p_value = student_t_two_sided(rep.t_stat, static_cast<double>(B - 1));
    }
  }
  rep.decision = rep.p_value > alpha ? Decision::DistanceRemovable : Decision::NotRemovable;

  const std::vector<double> r = offdiag_values(draws.base_residuals.r);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  rep.residuals.mean = mean;
  rep.residuals.sd = r.size() > 1 ? std::sqrt(ss / static_cast<double>(r.size() - 1)) : 0.0;
  rep.residuals.min = *std::min_element(r.begin(), r.end());
  rep.residuals.max = *std::max_element(r.begin(), r.end());
  return rep;
}

// ------------------------------------------------------------------- output

std::string format_test_line(double t, double p, bool rejected) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "t = %.2f, Pr(|T|>|t|) = %.3f, %s", t, p,
                rejected ? "null rejected" : "null not rejected");
  return buf;
}

std::string format_r2_line(double r2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ANOVA R^2 = %.4f", r2);
  return buf;
}

void write_validation_text(const ValidationReport& r, std::ostream& out) {
  out << "Pair effects against structural components (H0: r_ij = 0)\n";
  out << "sigma = " << format_exact(r.sigma) << '\n';
  out << format_r2_line(r.anova_r2) << '\n';
  out << "V(theta) = " << format_fixed(r.anova.var_theta, 6) << ", V(S) = " << format_fixed(r.anova.var_structural, 6)
      << ", V(r) = " << format_fixed(r.anova.var_residual, 6) << ", covariance = " << format_fixed(r.anova.covariance, 6)
      << '\n';
  out << "replications = " << r.B << " (requested " << r.B_requested << ", skipped " << r.skipped << ")\n";
  out << "mean of means = " << format_fixed(r.mean_of_means, 8) << ", standard error = " << format_fixed(r.se, 8) << '\n';
  out << format_test_line(r.t_stat, r.p_value, r.decision == Decision::NotRemovable) << '\n';
  out << "reference = " << (r.reference == PValueReference::Percentile ? "percentile" : "student-t")
      << ", alpha = " << format_exact(r.alpha) << '\n';
  out << "decision = " << to_string(r.decision) << '\n';
  out << "residuals: mean = " << format_fixed(r.residuals.mean, 6) << ", sd = " << format_fixed(r.residuals.sd, 6)
      << ", min = " << format_fixed(r.residuals.min, 6) << ", max = " << format_fixed(r.residuals.max, 6) << '\n';
  for (const auto& n : r.notes) out << "note: " << n << '\n';
}

void write_validation_text(const ValidationReport& report, const std::string& path) {
  auto out = open_out(path);
  write_validation_text(report, out);
}

void write_validation_csv(const ValidationReport& r, const std::string& path) {
  auto out = open_out(path);
  out << "key,value\n";
  out << "anova_r2," << format_exact(r.anova_r2) << '\n';
  out << "var_theta," << format_exact(r.anova.var_theta) << '\n';
  out << "var_structural," << format_exact(r.anova.var_structural) << '\n';
  out << "var_residual," << format_exact(r.anova.var_residual) << '\n';
  out << "covariance," << format_exact(r.anova.covariance) << '\n';
  out << "t_stat," << format_exact(r.t_stat) << '\n';
  out << "p_value," << format_exact(r.p_value) << '\n';
  out << "B," << r.B << '\n';
  out << "B_requested," << r.B_requested << '\n';
  out << "skipped," << r.skipped << '\n';
  out << "mean_of_means," << format_exact(r.mean_of_means) << '\n';
  out << "se," << format_exact(r.se) << '\n';
  out << "alpha," << format_exact(r.alpha) << '\n';
  out << "reference," << (r.reference == PValueReference::Percentile ? "percentile" : "student-t") << '\n';
  out << "sigma," << format_exact(r.sigma) << '\n';
  out << "residual_mean," << format_exact(r.residuals.mean) << '\n';
  out << "residual_sd," << format_exact(r.residuals.sd) << '\n';
  out << "residual_min," << format_exact(r.residuals.min) << '\n';
  out << "residual_max," << format_exact(r.residuals.max) << '\n';
  out << "decision," << to_string(r.decision) << '\n';
}

void write_empirical_mrt(const EmpiricalMrt& mrt, const CountryIndex& index, const std::vector<int>& years,
                         const std::string& path) {
  if (mrt.log_Pi.rows() != static_cast<Eigen::Index>(index.size()) ||
      mrt.log_Pi.cols() != static_cast<Eigen::Index>(years.size()))
    throw Error(ErrorCode::IndexMismatch, "resistances do not match the country index and years");
  auto out = open_out(path);
  out << "country,year,log_Pi,log_P\n";
  for (Eigen::Index t = 0; t < mrt.log_Pi.cols(); ++t)
    for (Eigen::Index i = 0; i < mrt.log_Pi.rows(); ++i)
      out << index.code(static_cast<std::size_t>(i)) << ',' << years[static_cast<std::size_t>(t)] << ','
          << format_exact(mrt.log_Pi(i, t)) << ',' << format_exact(mrt.log_P(i, t)) << '\n';
}

void write_residual_map(const ResidualMap& map, const CountryIndex& index, const std::string& path) {
  const auto n = static_cast<Eigen::Index>(index.size());
  if (map.r.rows() != n || map.r.cols() != n)
    throw Error(ErrorCode::IndexMismatch, "residual map does not match the country index");
  auto out = open_out(path);
  out << "origin,dest,r\n";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j)
        out << index.code(static_cast<std::size_t>(i)) << ',' << index.code(static_cast<std::size_t>(j)) << ','
            << format_exact(map.r(i, j)) << '\n';
}

void write_draws(const BootstrapDraws& d, const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  const auto& idx = d.base_fit.index;
  const std::size_t n = idx.size();
  {
    auto out = open_out((dir / "draws_means.csv").string());
    out << "replication,mean\n";
    for (std::size_t k = 0; k < d.replications.size(); ++k)
      out << d.replications[k] << ',' << format_exact(d.means[static_cast<Eigen::Index>(k)]) << '\n';
  }
  if (d.theta.empty()) return;
  auto pairs = [&](const std::string& file, const char* col, const std::vector<Eigen::MatrixXd>& v) {
    auto out = open_out((dir / file).string());
    out << "replication,origin,dest," << col << '\n';
    for (std::size_t k = 0; k < v.size(); ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j)
            out << d.replications[k] << ',' << idx.code(i) << ',' << idx.code(j) << ','
                << format_exact(v[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
  };
  pairs("draws_theta.csv", "theta", d.theta);
  pairs("draws_r.csv", "r", d.r);
  auto out = open_out((dir / "draws_mrt.csv").string());
  out << "replication,country,year,log_Pi,log_P\n";
  for (std::size_t k = 0; k < d.log_Pi.size(); ++k)
    for (Eigen::Index t = 0; t < d.log_Pi[k].cols(); ++t)
      for (std::size_t i = 0; i < n; ++i)
        out << d.replications[k] << ',' << idx.code(i) << ',' << d.base_fit.years[static_cast<std::size_t>(t)] << ','
            << format_exact(d.log_Pi[k](static_cast<Eigen::Index>(i), t)) << ','
            << format_exact(d.log_P[k](static_cast<Eigen::Index>(i), t)) << '\n';
}

}  // namespace gravity
