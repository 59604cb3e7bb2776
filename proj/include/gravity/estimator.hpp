// estimator.hpp
// Two-way fixed-effects gravity regression, spatial SAR 2SLS and fit comparison.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gravity/panel.hpp"
#include "gravity/weights.hpp"

namespace gravity {

enum class VarianceType { Conventional, Robust };

struct GravityFit {
  ModelSpec spec;
  CountryIndex index;
  std::vector<int> years;
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  std::optional<double> rho;
  std::optional<double> rho_se;
  std::vector<std::string> absorbed;
  /// theta_ij over estimation pairs (n x n, diagonal zero). Carries the intercept.
  Eigen::MatrixXd pair_effects;
  /// Zero-sum time effects.
  Eigen::VectorXd time_effects;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  double r2 = 0.0;
  double r2_within = 0.0;
  double sigma2 = 0.0;
  std::size_t N = 0;
  std::size_t dof = 0;
  VarianceType variance = VarianceType::Conventional;
  std::optional<double> first_stage_f;
  /// Warning-class conditions (e.g. "WeakInstruments: ...").
  std::vector<std::string> warnings;

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws UnknownRegressor.
  double coefficient(std::string_view name) const;
  double standard_error(std::string_view name) const;
};

/// Within-transform least squares on a fixed design, reusable across responses
/// (bootstrap refits). Throws RankDeficient.
class FixedEffectsModel {
 public:
  explicit FixedEffectsModel(DesignBundle design, VarianceType variance = VarianceType::Conventional);

  const DesignBundle& design() const noexcept { return design_; }
  /// Slope coefficients for a response indexed like the design rows.
  Eigen::VectorXd coefficients(const Eigen::VectorXd& y) const;
  /// Pair means of y - X beta: theta_ij (n x n), the pair effects of a refit.
  Eigen::MatrixXd pair_effects(const Eigen::VectorXd& y, const Eigen::VectorXd& beta) const;
  GravityFit fit(const Eigen::VectorXd& y) const;

 private:
  DesignBundle design_;
  VarianceType variance_;
  Eigen::MatrixXd Xw_;
  Eigen::MatrixXd XtX_inv_;
  /// (Xw' Xw)^-1 Xw'
  Eigen::MatrixXd projector_;
};

/// Throws InvalidSpec (spatial spec), UnknownRegressor, CollinearDummySpec, RankDeficient.
GravityFit fit_fe(const PanelDataset& ds, const ModelSpec& spec, VarianceType variance = VarianceType::Conventional,
                  const FlowWeight* weights = nullptr);

struct TslsResult {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  /// Heteroskedasticity-robust covariance, scaled by `dof_factor`.
  Eigen::MatrixXd covariance;
  /// First-stage projection of the regressors on the instruments.
  Eigen::MatrixXd projected;
};

/// Two-stage least squares of y on Z with instruments H. Throws RankDeficient.
TslsResult two_stage_least_squares(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& H,
                                   double dof_factor = 1.0);

struct SarOptions {
  /// Instrument order: [X, WX] (1) or [X, WX, W^2 X] (2).
  int order = 2;
  double weak_threshold = 10.0;
  /// Throw WeakInstruments instead of recording a warning.
  bool strict = false;
};

/// Spatial-lag model by 2SLS with spatial instruments after fixed-effect absorption.
/// Throws InvalidSpec, RankDeficient, WeakInstruments (strict only).
GravityFit fit_sar_ivgmm(const PanelDataset& ds, const ModelSpec& spec, const FlowWeight& fw,
                         const SarOptions& options = {});

struct ComparisonRow {
  std::string name;
  std::optional<double> without_estimate, without_se;
  std::optional<double> with_estimate, with_se;
  std::optional<double> delta;
  std::optional<bool> same_sign;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
};

/// Side-by-side coefficients; "rho" is appended for spatial fits. Throws IncomparableSpecs.
ComparisonTable compare_specs(const GravityFit& fit_with_dist, const GravityFit& fit_without);

/// name,estimate,se,stars (spatial fits add a "rho" row).
void write_coefficients(const GravityFit& fit, const std::string& path);
/// origin,dest,theta
void write_pair_effects(const GravityFit& fit, const std::string& path);
/// origin,dest,year,fitted,residual
void write_residuals(const GravityFit& fit, const std::string& path);
/// key,value
void write_fit_summary(const GravityFit& fit, const std::string& path);

}  // namespace gravity
