#include "gravity/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "gravity/error.hpp"
#include "gravity/util.hpp"

namespace gravity {

WeightMatrix::WeightMatrix(Eigen::MatrixXd values, Normalization normalization, Provenance provenance)
    : values_(std::move(values)), normalization_(normalization), provenance_(provenance) {
  if (values_.rows() != values_.cols() || values_.rows() < 2)
    throw Error(ErrorCode::InvalidWeights, "weight matrix must be square with n >= 2");
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    if (values_(i, i) != 0.0) throw Error(ErrorCode::InvalidWeights, "nonzero diagonal at row " + std::to_string(i));
    for (Eigen::Index j = 0; j < values_.cols(); ++j)
      if (!(values_(i, j) >= 0.0) || !std::isfinite(values_(i, j)))
        throw Error(ErrorCode::InvalidWeights, "negative or non-finite weight");
    if (normalization_ == Normalization::RowStochastic &&
        std::fabs(values_.row(i).sum() - 1.0) > 1e-12)
      throw Error(ErrorCode::InvalidWeights, "row " + std::to_string(i) + " does not sum to one");
  }
}

double haversine_km(double lat1, double lon1, double lat2, double lon2, double radius) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double p1 = lat1 * deg, p2 = lat2 * deg;
  const double dphi = (lat2 - lat1) * deg;
  const double dlambda = (lon2 - lon1) * deg;
  const double a = std::sin(dphi / 2) * std::sin(dphi / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
  return 2.0 * radius * std::asin(std::min(1.0, std::sqrt(a)));
}

Eigen::MatrixXd haversine_distances(const Eigen::VectorXd& lat_deg, const Eigen::VectorXd& lon_deg, double radius) {
  if (lat_deg.size() != lon_deg.size()) throw Error(ErrorCode::DimensionMismatch, "lat/lon length");
  const Eigen::Index n = lat_deg.size();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d(i, j) = d(j, i) = haversine_km(lat_deg[i], lon_deg[i], lat_deg[j], lon_deg[j], radius);
  return d;
}

WeightMatrix normalize_weights(Eigen::MatrixXd raw, Normalization normalization, Provenance provenance) {
  switch (normalization) {
    case Normalization::None:
      break;
    case Normalization::RowStochastic:
      for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const double s = raw.row(i).sum();
        if (!(s > 0.0)) throw Error(ErrorCode::InvalidWeights, "all-zero row " + std::to_string(i));
        raw.row(i) /= s;
      }
      break;
    case Normalization::Spectral: {
      Eigen::EigenSolver<Eigen::MatrixXd> es(raw, false);
      const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
      if (!(radius > 0.0)) throw Error(ErrorCode::InvalidWeights, "zero spectral radius");
      raw /= radius;
      break;
    }
  }
  return WeightMatrix(std::move(raw), normalization, provenance);
}

WeightMatrix inverse_distance_weights(const Eigen::MatrixXd& distances, Normalization normalization) {
  const Eigen::Index n = distances.rows();
  if (distances.cols() != n || n < 2) throw Error(ErrorCode::DimensionMismatch, "distance matrix must be square");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances(i, j);
      if (!(d > 0.0)) throw Error(ErrorCode::ZeroDistance, std::to_string(i) + "," + std::to_string(j));
      if (std::fabs(d - distances(j, i)) > 1e-12 * std::max(1.0, std::fabs(d)))
        throw Error(ErrorCode::AsymmetricInput, std::to_string(i) + "," + std::to_string(j));
      w(i, j) = 1.0 / d;
    }
  }
  return normalize_weights(std::move(w), normalization, Provenance::InverseDistance);
}

WeightMatrix inverse_distance_weights(const PanelDataset& ds, Normalization normalization) {
  Eigen::MatrixXd km = ds.log_distance().array().exp().matrix();
  km.diagonal().setZero();
  return inverse_distance_weights(km, normalization);
}

void write_weights_csv(const WeightMatrix& w, std::ostream& out) {
  const auto& v = w.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (j) out << ',';
      out << format_exact(v(i, j));
    }
    out << '\n';
  }
}

void write_weights_csv(const WeightMatrix& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, path);
  write_weights_csv(w, out);
}

WeightMatrix read_weights_csv(const std::string& path, Normalization declared) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& f : split_csv_line(line)) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.size() || f.empty()) throw Error(ErrorCode::InvalidWeights, "bad value '" + f + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n)
      throw Error(ErrorCode::DimensionMismatch, "weights file is not square");
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return WeightMatrix(std::move(m), declared, Provenance::Custom);
}

// ---------------------------------------------------------------- flow lags

FlowWeight::FlowWeight(WeightMatrix base, FlowLagMode mode) : base_(std::move(base)), mode_(mode) {
  const std::size_t n = base_.size();
  if (n < 3) throw Error(ErrorCode::InvalidWeights, "flow weights need n >= 3");
  const PairLayout layout{n};
  const std::size_t m = layout.count();
  const bool renormalize = base_.normalization() == Normalization::RowStochastic;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(m * (n - 2));
  for (std::size_t p = 0; p < m; ++p) {
    const std::size_t i = layout.origin(p), j = layout.dest(p);
    // origin lag: partners (h, j) weighted by w_ih; destination lag: (i, k) by w_jk
    const std::size_t anchor = mode_ == FlowLagMode::Origin ? i : j;
    double total = 0.0;
    for (std::size_t h = 0; h < n; ++h)
      if (h != i && h != j) total += base_(anchor, h);
    const double scale = renormalize ? (total > 0.0 ? 1.0 / total : 0.0) : 1.0;
    for (std::size_t h = 0; h < n; ++h) {
      if (h == i || h == j) continue;
      const double w = base_(anchor, h) * scale;
      if (w == 0.0) continue;
      const std::size_t q = mode_ == FlowLagMode::Origin ? layout.pair(h, j) : layout.pair(i, h);
      entries.emplace_back(static_cast<int>(p), static_cast<int>(q), w);
    }
  }
  op_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  op_.setFromTriplets(entries.begin(), entries.end());
  op_.makeCompressed();
}

Eigen::MatrixXd flow_lag(const FlowWeight& fw, const Eigen::MatrixXd& Y) {
  const auto m = static_cast<Eigen::Index>(fw.pairs());
  if (Y.rows() == 0 || Y.rows() % m != 0)
    throw Error(ErrorCode::DimensionMismatch, "flow vector length " + std::to_string(Y.rows()) +
                                                  " is not a multiple of n(n-1) = " + std::to_string(m));
  Eigen::MatrixXd out(Y.rows(), Y.cols());
  const Eigen::Index T = Y.rows() / m;
  for (Eigen::Index t = 0; t < T; ++t) out.middleRows(t * m, m) = fw.period_operator() * Y.middleRows(t * m, m);
  return out;
}

Eigen::VectorXd flow_lag(const FlowWeight& fw, const Eigen::VectorXd& y) {
  Eigen::MatrixXd Y = y;
  return flow_lag(fw, Y).col(0);
}

Eigen::SparseMatrix<double> flow_weight_matrix(const FlowWeight& fw, std::size_t periods) {
  const auto m = static_cast<Eigen::Index>(fw.pairs());
  const auto& op = fw.period_operator();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(op.nonZeros()) * periods);
  for (std::size_t t = 0; t < periods; ++t) {
    const Eigen::Index off = static_cast<Eigen::Index>(t) * m;
    for (Eigen::Index r = 0; r < op.outerSize(); ++r)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op, r); it; ++it)
        entries.emplace_back(static_cast<int>(off + it.row()), static_cast<int>(off + it.col()), it.value());
  }
  Eigen::SparseMatrix<double> W(m * static_cast<Eigen::Index>(periods), m * static_cast<Eigen::Index>(periods));
  W.setFromTriplets(entries.begin(), entries.end());
  return W;
}

// ---------------------------------------------------------------- Moran's I

namespace {

double moran_statistic(const Eigen::SparseMatrix<double>& W, const Eigen::VectorXd& centered, double s0) {
  const double denom = centered.squaredNorm();
  const double n = static_cast<double>(centered.size());
  return (n / s0) * centered.dot(W * centered) / denom;
}

}  // namespace

MoranResult morans_i(const Eigen::SparseMatrix<double>& W, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index N = x.size();
  if (W.rows() != N || W.cols() != N) throw Error(ErrorCode::DimensionMismatch, "weights do not match x");
  if (N < 3) throw Error(ErrorCode::DimensionMismatch, "Moran's I needs at least 3 units");
  Eigen::VectorXd z = x.array() - x.mean();
  if (!(z.squaredNorm() > 1e-300) || z.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, x.cwiseAbs().maxCoeff()))
    throw Error(ErrorCode::ZeroVariance, "x has zero variance");

  const double s0 = W.sum();
  if (!(s0 > 0.0)) throw Error(ErrorCode::InvalidWeights, "weights sum to zero");
  // S1 = 1/2 sum (w_ij + w_ji)^2, S2 = sum_i (w_i. + w_.i)^2
  Eigen::SparseMatrix<double> Wt = W.transpose();
  Eigen::SparseMatrix<double> sym = W + Wt;
  const double s1 = 0.5 * sym.squaredNorm();
  Eigen::VectorXd row = W * Eigen::VectorXd::Ones(N);
  Eigen::VectorXd col = Wt * Eigen::VectorXd::Ones(N);
  const double s2 = (row + col).squaredNorm();

  const double n = static_cast<double>(N);
  MoranResult res;
  res.statistic = moran_statistic(W, z, s0);
  res.expected = -1.0 / (n - 1.0);
  const double second = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0);
  res.variance = second - res.expected * res.expected;
  res.z = (res.statistic - res.expected) / std::sqrt(res.variance);
  res.p_value = 2.0 * (1.0 - normal_cdf(std::fabs(res.z)));
  return res;
}

MoranResult morans_i(const WeightMatrix& W, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return morans_i(Eigen::SparseMatrix<double>(W.values().sparseView()), x);
}

MoranResult morans_i(const FlowWeight& fw, const Eigen::Ref<const Eigen::VectorXd>& flow_residuals) {
  const auto m = static_cast<Eigen::Index>(fw.pairs());
  if (flow_residuals.size() == 0 || flow_residuals.size() % m != 0)
    throw Error(ErrorCode::DimensionMismatch, "residual length is not a multiple of n(n-1)");
  return morans_i(flow_weight_matrix(fw, static_cast<std::size_t>(flow_residuals.size() / m)), flow_residuals);
}

MoranResult morans_i_permutation(const Eigen::SparseMatrix<double>& W, const Eigen::Ref<const Eigen::VectorXd>& x,
                                 std::uint64_t seed, int permutations, unsigned threads) {
  MoranResult res = morans_i(W, x);
  if (permutations < 1) throw Error(ErrorCode::InvalidConfig, "permutations must be positive");
  const Eigen::VectorXd z = x.array() - x.mean();
  const double s0 = W.sum();
  const double observed = std::fabs(res.statistic - res.expected);
  std::vector<char> extreme(static_cast<std::size_t>(permutations), 0);
  parallel_for(extreme.size(), threads, [&](std::size_t k) {
    Rng rng = substream(seed, "permutation", k);
    Eigen::VectorXd p = z;
    std::shuffle(p.data(), p.data() + p.size(), rng);
    const double stat = moran_statistic(W, p, s0);
    extreme[k] = std::fabs(stat - res.expected) >= observed - 1e-15;
  });
  const double count = static_cast<double>(std::count(extreme.begin(), extreme.end(), 1));
  res.permutation_p = (1.0 + count) / (1.0 + permutations);
  return res;
}

// ---------------------------------------------------------------- LM lag test

namespace {

struct TraceTerms {
  double cross = 0.0;   // tr(A' P A P)
  double square = 0.0;  // tr(A P A P)
};

TraceTerms period_traces(const Eigen::SparseMatrix<double, Eigen::RowMajor>& A, bool centered) {
  const Eigen::Index m = A.rows();
  TraceTerms t;
  const double fro = A.squaredNorm();
  double tr_sq = 0.0;
  for (Eigen::Index r = 0; r < A.outerSize(); ++r)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(A, r); it; ++it)
      tr_sq += it.value() * A.coeff(it.col(), it.row());
  t.cross = fro;
  t.square = tr_sq;
  if (centered) {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
    const Eigen::VectorXd a1 = A * ones;
    const Eigen::VectorXd at1 = A.transpose() * ones;
    const double total = a1.sum();
    const double md = static_cast<double>(m);
    t.cross = fro - (a1.squaredNorm() + at1.squaredNorm()) / md + total * total / (md * md);
    // 1' A^2 1 = (A'1)'(A1)
    t.square = tr_sq - 2.0 * at1.dot(a1) / md + total * total / (md * md);
  }
  return t;
}

}  // namespace

LmTestResult lm_spatial_lag_test(const Eigen::Ref<const Eigen::VectorXd>& residuals, const FlowWeight& fw,
                                 const DesignBundle& design) {
  const auto N = static_cast<Eigen::Index>(design.rows());
  if (residuals.size() != N) throw Error(ErrorCode::DimensionMismatch, "residuals do not match design rows");
  if (design.n != fw.countries()) throw Error(ErrorCode::DimensionMismatch, "weights do not match countries");
  const double ee = residuals.squaredNorm();
  if (!(ee > 1e-300)) throw Error(ErrorCode::ZeroVariance, "zero residual vector");

  const Eigen::MatrixXd Xw = design.within(design.X);
  const Eigen::VectorXd yw = design.within(design.y);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Xw.cols());
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  if (Xw.cols() > 0) {
    qr.compute(Xw);
    beta = qr.solve(Eigen::VectorXd(yw - residuals));
  }
  const Eigen::VectorXd Wy = design.within(flow_lag(fw, design.y));
  Eigen::VectorXd WXb = Eigen::VectorXd::Zero(N);
  if (Xw.cols() > 0) WXb = design.within(flow_lag(fw, Eigen::VectorXd(design.X * beta)));
  Eigen::VectorXd MWXb = WXb;
  if (Xw.cols() > 0) MWXb -= Xw * qr.solve(WXb);

  const double n_eff = static_cast<double>(design.rows() - design.absorbed_dof());
  const double sigma2 = ee / n_eff;

  const bool center_pairs = design.time_fe || !design.pair_fe;
  const double t_factor = static_cast<double>(design.pair_fe ? design.periods - 1 : design.periods);
  const TraceTerms tr = period_traces(fw.period_operator(), center_pairs);
  const double trace = t_factor * (tr.cross + tr.square);

  const double score = residuals.dot(Wy) / sigma2;
  const double info = MWXb.squaredNorm() / sigma2 + trace;
  LmTestResult res;
  res.statistic = score * score / info;
  res.p_value = chi2_1_sf(res.statistic);
  return res;
}

}  // namespace gravity
