#include "gravity/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gravity/error.hpp"
#include "gravity/util.hpp"

namespace gravity {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
  return out;
}

/// Throws RankDeficient naming the offending columns.
void check_rank(const Eigen::MatrixXd& Xw, const std::vector<std::string>& names) {
  if (Xw.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() == Xw.cols()) return;
  std::string cols;
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < Xw.cols(); ++k) {
    if (!cols.empty()) cols += ", ";
    cols += names.at(static_cast<std::size_t>(perm[k]));
  }
  throw Error(ErrorCode::RankDeficient, "collinear after fixed-effect absorption: " + cols);
}

struct Effects {
  Eigen::MatrixXd pair;  // n x n
  Eigen::VectorXd time;
  Eigen::VectorXd by_row;  // theta + alpha per row
};

/// Splits u = y - X beta into pair and zero-sum time effects.
Effects split_effects(const DesignBundle& d, const Eigen::VectorXd& u) {
  const std::size_t N = d.rows(), G = d.pair_group_count(), T = d.periods;
  const double grand = u.mean();
  std::vector<double> gsum(G, 0.0), gcount(G, 0.0), tsum(T, 0.0);
  for (std::size_t r = 0; r < N; ++r) {
    gsum[d.pair_group(r)] += u[static_cast<Eigen::Index>(r)];
    gcount[d.pair_group(r)] += 1.0;
    tsum[d.time_of_row(r)] += u[static_cast<Eigen::Index>(r)];
  }
  Effects e;
  e.time = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));
  if (d.time_fe)
    for (std::size_t t = 0; t < T; ++t)
      e.time[static_cast<Eigen::Index>(t)] = tsum[t] / static_cast<double>(d.pairs()) - grand;
  const PairLayout layout{d.n};
  e.pair = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.n), static_cast<Eigen::Index>(d.n));
  e.by_row.resize(static_cast<Eigen::Index>(N));
  for (std::size_t r = 0; r < N; ++r) {
    const double theta = d.pair_fe ? gsum[d.pair_group(r)] / gcount[d.pair_group(r)] : grand;
    e.by_row[static_cast<Eigen::Index>(r)] = theta + e.time[static_cast<Eigen::Index>(d.time_of_row(r))];
    if (r < d.pairs())
      e.pair(static_cast<Eigen::Index>(layout.origin(r)), static_cast<Eigen::Index>(layout.dest(r))) = theta;
  }
  return e;
}

double total_ss(const Eigen::VectorXd& y) { return (y.array() - y.mean()).square().sum(); }

}  // namespace

std::optional<std::size_t> GravityFit::find(std::string_view name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return k;
  return std::nullopt;
}

double GravityFit::coefficient(std::string_view name) const {
  if (name == "rho" && rho) return *rho;
  const auto k = find(name);
  if (!k) throw Error(ErrorCode::UnknownRegressor, std::string(name));
  return beta[static_cast<Eigen::Index>(*k)];
}

double GravityFit::standard_error(std::string_view name) const {
  if (name == "rho" && rho_se) return *rho_se;
  const auto k = find(name);
  if (!k) throw Error(ErrorCode::UnknownRegressor, std::string(name));
  return se[static_cast<Eigen::Index>(*k)];
}

// ------------------------------------------------------------ fixed effects

FixedEffectsModel::FixedEffectsModel(DesignBundle design, VarianceType variance)
    : design_(std::move(design)), variance_(variance) {
  const std::size_t k = static_cast<std::size_t>(design_.X.cols());
  if (design_.rows() <= k + design_.absorbed_dof())
    throw Error(ErrorCode::RankDeficient, "N = " + std::to_string(design_.rows()) +
                                              " does not exceed the parameter count " +
                                              std::to_string(k + design_.absorbed_dof()));
  Xw_ = design_.within(design_.X);
  check_rank(Xw_, design_.names);
  const auto kk = static_cast<Eigen::Index>(k);
  if (kk > 0) {
    XtX_inv_ = (Xw_.transpose() * Xw_).ldlt().solve(Eigen::MatrixXd::Identity(kk, kk));
    projector_ = XtX_inv_ * Xw_.transpose();
  } else {
    XtX_inv_.resize(0, 0);
    projector_.resize(0, static_cast<Eigen::Index>(design_.rows()));
  }
}

Eigen::VectorXd FixedEffectsModel::coefficients(const Eigen::VectorXd& y) const {
  if (static_cast<std::size_t>(y.size()) != design_.rows())
    throw Error(ErrorCode::DimensionMismatch, "response length differs from design rows");
  // projector_ * within(y) == projector_ * y because Xw is already demeaned.
  return projector_ * y;
}

Eigen::MatrixXd FixedEffectsModel::pair_effects(const Eigen::VectorXd& y, const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd u = design_.X.cols() > 0 ? Eigen::VectorXd(y - design_.X * beta) : y;
  return split_effects(design_, u).pair;
}

GravityFit FixedEffectsModel::fit(const Eigen::VectorXd& y) const {
  const DesignBundle& d = design_;
  GravityFit f;
  f.names = d.names;
  f.absorbed = d.absorbed;
  f.beta = coefficients(y);
  const Eigen::VectorXd xb = d.X.cols() > 0 ? Eigen::VectorXd(d.X * f.beta) : Eigen::VectorXd::Zero(y.size());
  const Effects e = split_effects(d, y - xb);
  f.pair_effects = e.pair;
  f.time_effects = e.time;
  f.fitted = xb + e.by_row;
  f.residuals = y - f.fitted;
  f.N = d.rows();
  const std::size_t k = f.names.size();
  f.dof = f.N - k - d.absorbed_dof();
  const double ssr = f.residuals.squaredNorm();
  f.sigma2 = ssr / static_cast<double>(f.dof);
  const double tss = total_ss(y);
  f.r2 = tss > 0.0 ? 1.0 - ssr / tss : 1.0;
  const double wss = d.within(y).squaredNorm();
  f.r2_within = wss > 0.0 ? 1.0 - ssr / wss : 1.0;
  f.variance = variance_;
  f.se.resize(static_cast<Eigen::Index>(k));
  if (k > 0) {
    Eigen::MatrixXd V;
    if (variance_ == VarianceType::Conventional) {
      V = f.sigma2 * XtX_inv_;
    } else {
      const Eigen::MatrixXd S = Xw_.transpose() * f.residuals.array().square().matrix().asDiagonal() * Xw_;
      V = XtX_inv_ * S * XtX_inv_ * (static_cast<double>(f.N) / static_cast<double>(f.dof));
    }
    f.se = V.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  return f;
}

GravityFit fit_fe(const PanelDataset& ds, const ModelSpec& spec, VarianceType variance, const FlowWeight* weights) {
  if (spec.spatial) throw Error(ErrorCode::InvalidSpec, "fit_fe takes non-spatial specifications");
  FixedEffectsModel model(build_design(ds, spec, weights), variance);
  GravityFit f = model.fit(ds.flow());
  f.spec = spec;
  f.index = ds.index();
  f.years = ds.years();
  return f;
}

// ------------------------------------------------------------------- 2SLS

TslsResult two_stage_least_squares(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& H,
                                   double dof_factor) {
  if (Z.rows() != y.size() || H.rows() != y.size())
    throw Error(ErrorCode::DimensionMismatch, "2SLS inputs differ in row count");
  if (H.cols() < Z.cols())
    throw Error(ErrorCode::RankDeficient, "fewer instruments than regressors");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qh(H);
  qh.setThreshold(1e-10);
  if (qh.rank() < H.cols()) throw Error(ErrorCode::RankDeficient, "instrument matrix is rank deficient");
  TslsResult r;
  const Eigen::MatrixXd G = qh.solve(Z);
  r.projected = H * G;
  const Eigen::MatrixXd A = r.projected.transpose() * Z;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) throw Error(ErrorCode::RankDeficient, "projected regressors are rank deficient");
  r.coefficients = lu.solve(r.projected.transpose() * y);
  r.residuals = y - Z * r.coefficients;
  const Eigen::MatrixXd Ainv = lu.inverse();
  const Eigen::MatrixXd S =
      r.projected.transpose() * r.residuals.array().square().matrix().asDiagonal() * r.projected;
  r.covariance = Ainv * S * Ainv.transpose() * dof_factor;
  return r;
}

GravityFit fit_sar_ivgmm(const PanelDataset& ds, const ModelSpec& spec, const FlowWeight& fw,
                         const SarOptions& options) {
  if (!spec.spatial) throw Error(ErrorCode::InvalidSpec, "fit_sar_ivgmm takes spatial specifications");
  if (options.order != 1 && options.order != 2) throw Error(ErrorCode::InvalidSpec, "instrument order must be 1 or 2");
  if (fw.countries() != ds.countries())
    throw Error(ErrorCode::DimensionMismatch, "weight dimension differs from country count");
  const DesignBundle d = build_design(ds, spec, &fw);
  const std::size_t k = d.names.size();
  if (k == 0) throw Error(ErrorCode::RankDeficient, "no exogenous regressors to instrument the spatial lag");
  if (d.rows() <= k + 1 + d.absorbed_dof()) throw Error(ErrorCode::RankDeficient, "too few observations");

  const Eigen::VectorXd Wy = flow_lag(fw, d.y);
  const Eigen::VectorXd yw = d.within(d.y);
  const Eigen::MatrixXd Xw = d.within(d.X);
  check_rank(Xw, d.names);
  const auto N = static_cast<Eigen::Index>(d.rows());
  const auto kk = static_cast<Eigen::Index>(k);

  Eigen::MatrixXd Z(N, kk + 1);
  Z.col(0) = d.within(Wy);
  Z.rightCols(kk) = Xw;

  // Instruments: X, WX, W^2X after absorption; excluded columns pruned if collinear.
  const Eigen::MatrixXd WX = flow_lag(fw, d.X);
  Eigen::MatrixXd cand(N, kk * options.order);
  cand.leftCols(kk) = d.within(WX);
  if (options.order == 2) cand.rightCols(kk) = d.within(flow_lag(fw, WX));
  Eigen::MatrixXd H = Xw;
  for (Eigen::Index c = 0; c < cand.cols(); ++c) {
    Eigen::MatrixXd trial(N, H.cols() + 1);
    trial << H, cand.col(c);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
    qr.setThreshold(1e-9);
    if (qr.rank() == trial.cols()) H = std::move(trial);
  }
  const Eigen::Index excluded = H.cols() - kk;
  if (excluded < 1) throw Error(ErrorCode::RankDeficient, "spatial instruments are collinear with the regressors");

  GravityFit f;
  f.spec = spec;
  f.index = ds.index();
  f.years = ds.years();
  f.names = d.names;
  f.absorbed = d.absorbed;
  f.N = d.rows();
  f.dof = f.N - k - 1 - d.absorbed_dof();
  f.variance = VarianceType::Robust;

  // First-stage partial F of the excluded instruments.
  {
    const Eigen::VectorXd z = Z.col(0);
    const Eigen::VectorXd er = z - Xw * Xw.colPivHouseholderQr().solve(z);
    const Eigen::VectorXd eu = z - H * H.colPivHouseholderQr().solve(z);
    const double ssr_r = er.squaredNorm(), ssr_u = eu.squaredNorm();
    const double df = static_cast<double>(f.N - d.absorbed_dof() - static_cast<std::size_t>(H.cols()));
    const double F = ssr_u > 0.0 ? ((ssr_r - ssr_u) / static_cast<double>(excluded)) / (ssr_u / df)
                                 : std::numeric_limits<double>::infinity();
    f.first_stage_f = F;
    if (!(F >= options.weak_threshold)) {
      const std::string msg = "first-stage F = " + format_fixed(F, 2) + " below " + format_fixed(options.weak_threshold, 1);
      if (options.strict) throw Error(ErrorCode::WeakInstruments, msg);
      f.warnings.push_back("WeakInstruments: " + msg);
    }
  }

  const double dof_factor = static_cast<double>(f.N) / static_cast<double>(f.dof);
  const TslsResult r = two_stage_least_squares(yw, Z, H, dof_factor);
  f.rho = r.coefficients[0];
  f.rho_se = std::sqrt(std::max(r.covariance(0, 0), 0.0));
  f.beta = r.coefficients.tail(kk);
  f.se = r.covariance.diagonal().tail(kk).cwiseMax(0.0).cwiseSqrt();

  const Eigen::VectorXd xb = d.X * f.beta + *f.rho * Wy;
  const Effects e = split_effects(d, d.y - xb);
  f.pair_effects = e.pair;
  f.time_effects = e.time;
  f.fitted = xb + e.by_row;
  f.residuals = d.y - f.fitted;
  const double ssr = f.residuals.squaredNorm();
  f.sigma2 = ssr / static_cast<double>(f.dof);
  const double tss = total_ss(d.y);
  f.r2 = tss > 0.0 ? 1.0 - ssr / tss : 1.0;
  const double wss = yw.squaredNorm();
  f.r2_within = wss > 0.0 ? 1.0 - ssr / wss : 1.0;
  return f;
}

// -------------------------------------------------------------- comparison

ComparisonTable compare_specs(const GravityFit& with, const GravityFit& without) {
  if (!(with.index == without.index) || with.years != without.years || with.N != without.N)
    throw Error(ErrorCode::IncomparableSpecs, "fits were estimated on different datasets");
  if (with.spec.spatial != without.spec.spatial)
    throw Error(ErrorCode::IncomparableSpecs, "one fit is spatial and the other is not");
  auto base = [](const GravityFit& f) {
    std::set<std::string> s;
    for (const auto& r : f.spec.regressors)
      if (r != "dist") s.insert(r);
    for (const auto& r : f.spec.lagged_regressors) s.insert("W_" + r);
    return s;
  };
  if (base(with) != base(without))
    throw Error(ErrorCode::IncomparableSpecs, "specifications differ beyond the distance regressor");

  // Ordered union: names of the without-fit, with-only names inserted after
  // their predecessor in the with-fit, unknown placement appended.
  std::vector<std::string> order = without.names;
  for (std::size_t k = 0; k < with.names.size(); ++k) {
    const auto& nm = with.names[k];
    if (std::find(order.begin(), order.end(), nm) != order.end()) continue;
    auto pos = order.begin();
    if (k > 0) {
      const auto prev = std::find(order.begin(), order.end(), with.names[k - 1]);
      pos = prev == order.end() ? order.end() : prev + 1;
    }
    order.insert(pos, nm);
  }
  ComparisonTable table;
  auto fill = [](ComparisonRow& row) {
    if (row.with_estimate && row.without_estimate) {
      row.delta = *row.without_estimate - *row.with_estimate;
      row.same_sign = (*row.without_estimate >= 0.0) == (*row.with_estimate >= 0.0);
    }
  };
  for (const auto& nm : order) {
    ComparisonRow row;
    row.name = nm;
    if (const auto k = without.find(nm)) {
      row.without_estimate = without.beta[static_cast<Eigen::Index>(*k)];
      row.without_se = without.se[static_cast<Eigen::Index>(*k)];
    }
    if (const auto k = with.find(nm)) {
      row.with_estimate = with.beta[static_cast<Eigen::Index>(*k)];
      row.with_se = with.se[static_cast<Eigen::Index>(*k)];
    }
    fill(row);
    table.rows.push_back(std::move(row));
  }
  if (with.rho || without.rho) {
    ComparisonRow row;
    row.name = "rho";
    row.without_estimate = without.rho;
    row.without_se = without.rho_se;
    row.with_estimate = with.rho;
    row.with_se = with.rho_se;
    fill(row);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ------------------------------------------------------------------ output

void write_coefficients(const GravityFit& fit, const std::string& path) {
  auto out = open_out(path);
  out << "name,estimate,se,stars\n";
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const double b = fit.beta[static_cast<Eigen::Index>(k)], s = fit.se[static_cast<Eigen::Index>(k)];
    out << fit.names[k] << ',' << format_exact(b) << ',' << format_exact(s) << ',' << significance_stars(b, s) << '\n';
  }
  if (fit.rho)
    out << "rho," << format_exact(*fit.rho) << ',' << format_exact(fit.rho_se.value_or(0.0)) << ','
        << significance_stars(*fit.rho, fit.rho_se.value_or(0.0)) << '\n';
}

void write_pair_effects(const GravityFit& fit, const std::string& path) {
  auto out = open_out(path);
  out << "origin,dest,theta\n";
  const std::size_t n = fit.index.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j)
        out << fit.index.code(i) << ',' << fit.index.code(j) << ','
            << format_exact(fit.pair_effects(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
}

void write_residuals(const GravityFit& fit, const std::string& path) {
  auto out = open_out(path);
  out << "origin,dest,year,fitted,residual\n";
  const PairLayout layout{fit.index.size()};
  const std::size_t m = layout.count();
  for (std::size_t r = 0; r < fit.N; ++r) {
    const std::size_t p = r % m;
    out << fit.index.code(layout.origin(p)) << ',' << fit.index.code(layout.dest(p)) << ',' << fit.years[r / m]
        << ',' << format_exact(fit.fitted[static_cast<Eigen::Index>(r)]) << ','
        << format_exact(fit.residuals[static_cast<Eigen::Index>(r)]) << '\n';
  }
}

void write_fit_summary(const GravityFit& fit, const std::string& path) {
  auto out = open_out(path);
  out << "key,value\n";
  out << "model," << (fit.spec.spatial ? "sar-2sls" : "fixed-effects") << '\n';
  out << "N," << fit.N << '\n';
  out << "dof," << fit.dof << '\n';
  out << "r2," << format_exact(fit.r2) << '\n';
  out << "r2_within," << format_exact(fit.r2_within) << '\n';
  out << "sigma2," << format_exact(fit.sigma2) << '\n';
  out << "variance," << (fit.variance == VarianceType::Robust ? "robust" : "conventional") << '\n';
  out << "pair_fe," << (fit.spec.include_pair_fe ? 1 : 0) << '\n';
  out << "time_fe," << (fit.spec.include_time_fe ? 1 : 0) << '\n';
  out << "include_distance," << (fit.spec.include_distance ? 1 : 0) << '\n';
  for (const auto& a : fit.absorbed) out << "absorbed," << a << '\n';
  if (fit.first_stage_f) out << "first_stage_f," << format_exact(*fit.first_stage_f) << '\n';
  for (const auto& w : fit.warnings) out << "warning,\"" << w << "\"\n";
}

}  // namespace gravity
