// weights.hpp
// Inverse-distance spatial weights, origin/destination flow lags and spatial
// diagnostics (Moran's I, LM lag test).
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gravity/panel.hpp"
#include "gravity/weight_spec.hpp"

namespace gravity {

enum class Provenance { InverseDistance, Custom };

/// n x n spatial weights: zero diagonal, nonnegative; rows sum to one when
/// row-stochastic.
class WeightMatrix {
 public:
  WeightMatrix(Eigen::MatrixXd values, Normalization normalization, Provenance provenance);

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Normalization normalization() const noexcept { return normalization_; }
  Provenance provenance() const noexcept { return provenance_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

 private:
  Eigen::MatrixXd values_;
  Normalization normalization_;
  Provenance provenance_;
};

constexpr double kEarthRadiusKm = 6371.0;

/// Great-circle distance between two points given in degrees.
double haversine_km(double lat1, double lon1, double lat2, double lon2, double radius = kEarthRadiusKm);
Eigen::MatrixXd haversine_distances(const Eigen::VectorXd& lat_deg, const Eigen::VectorXd& lon_deg,
                                    double radius = kEarthRadiusKm);

/// Applies a normalization to raw nonnegative weights with zero diagonal.
WeightMatrix normalize_weights(Eigen::MatrixXd raw, Normalization normalization,
                               Provenance provenance = Provenance::Custom);

/// w_ij = 1/d_ij (i != j), then normalized. Distances in any positive unit.
/// Throws ZeroDistance, AsymmetricInput.
WeightMatrix inverse_distance_weights(const Eigen::MatrixXd& distances, Normalization normalization);

/// Inverse-distance weights from a dataset's log distances.
WeightMatrix inverse_distance_weights(const PanelDataset& ds, Normalization normalization);

/// Dense CSV, n rows of n values, no header.
void write_weights_csv(const WeightMatrix& w, std::ostream& out);
void write_weights_csv(const WeightMatrix& w, const std::string& path);
WeightMatrix read_weights_csv(const std::string& path, Normalization declared = Normalization::None);

/// Origin or destination lag acting on flow vectors indexed like
/// PanelDataset estimation rows. Operator form only.
///
/// With row-stochastic base weights the neighbor weights of each flow are
/// renormalized over admissible partners (the excluded self-flow), so lags of
/// constants are constants.
class FlowWeight {
 public:
  explicit FlowWeight(WeightMatrix base, FlowLagMode mode = FlowLagMode::Origin);

  const WeightMatrix& base() const noexcept { return base_; }
  FlowLagMode mode() const noexcept { return mode_; }
  std::size_t countries() const noexcept { return base_.size(); }
  std::size_t pairs() const noexcept { return base_.size() * (base_.size() - 1); }

  /// One-period operator (n(n-1) x n(n-1), n-2 nonzeros per row).
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& period_operator() const noexcept { return op_; }

 private:
  WeightMatrix base_;
  FlowLagMode mode_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> op_;
};

/// Applies the flow lag year by year. Throws DimensionMismatch.
Eigen::VectorXd flow_lag(const FlowWeight& fw, const Eigen::VectorXd& y);
Eigen::MatrixXd flow_lag(const FlowWeight& fw, const Eigen::MatrixXd& Y);

struct MoranResult {
  double statistic = 0.0;
  double expected = 0.0;
  double variance = 0.0;
  double z = 0.0;
  /// Two-sided, normal approximation.
  double p_value = 1.0;
  std::optional<double> permutation_p;
};

/// Moran's I of x under an arbitrary (square, sparse) weight operator.
/// Throws ZeroVariance, DimensionMismatch.
MoranResult morans_i(const Eigen::SparseMatrix<double>& W, const Eigen::Ref<const Eigen::VectorXd>& x);
MoranResult morans_i(const WeightMatrix& W, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Flow residuals over all years; the operator is block diagonal by year.
MoranResult morans_i(const FlowWeight& fw, const Eigen::Ref<const Eigen::VectorXd>& flow_residuals);

/// Adds a permutation p-value (two-sided around E[I]); seeded per permutation.
MoranResult morans_i_permutation(const Eigen::SparseMatrix<double>& W, const Eigen::Ref<const Eigen::VectorXd>& x,
                                 std::uint64_t seed, int permutations = 999, unsigned threads = 1);

/// Block-diagonal (one block per year) sparse form of a flow weight.
Eigen::SparseMatrix<double> flow_weight_matrix(const FlowWeight& fw, std::size_t periods);

struct LmTestResult {
  double statistic = 0.0;
  /// Upper tail of chi-square(1).
  double p_value = 1.0;
};

/// LM test for an omitted spatial lag of the response, given residuals of the
/// non-spatial fit of `design` (fixed effects handled by the within transform).
/// Throws DimensionMismatch, ZeroVariance.
LmTestResult lm_spatial_lag_test(const Eigen::Ref<const Eigen::VectorXd>& residuals, const FlowWeight& fw,
                                 const DesignBundle& design);

}  // namespace gravity
