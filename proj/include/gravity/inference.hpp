// inference.hpp
// Structural components of a no-distance fit, empirical multilateral
// resistances, structural residuals, constrained ANOVA and the residual
// bootstrap t-test of whether pair effects can replace distance.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gravity/estimator.hpp"
#include "gravity/panel.hpp"
#include "gravity/structural.hpp"

namespace gravity {

enum class DistanceLoading {
  /// Distance has unit flow elasticity: log T gains log d / (sigma - 1).
  Unit,
  /// Elasticity estimated: from a supplied with-distance fit, otherwise in the
  /// second-stage regression on the pair effects.
  Fitted,
};

enum class ConstantPolicy { MeanCentered, Raw };

enum class PValueReference { Percentile, StudentT };

/// Log-scale structural indices. Trade costs are on the log T scale.
struct StructuralComponents {
  CountryIndex index;
  std::vector<int> years;
  double sigma = 4.0;
  /// n x T origin size index X^_it and destination size index E^_jt.
  Eigen::MatrixXd X_hat, E_hat;
  /// n x n, diagonal = domestic.
  Eigen::MatrixXd distance, T2_hat, T_hat;
  /// Provenance: coefficient names and values behind each index.
  std::vector<std::string> origin_names, dest_names, cost_names;
  Eigen::VectorXd origin_coefficients, dest_coefficients;
  /// Flow-scale effects of the cost covariates.
  Eigen::VectorXd cost_coefficients;
  /// Cost covariates not identified from the pair effects (effect set to zero).
  std::vector<std::string> unidentified;
  /// Flow-scale distance elasticity used (negative: flows fall with distance).
  double distance_coefficient = -1.0;
};

struct ComponentOptions {
  double sigma = 4.0;
  DistanceLoading loading = DistanceLoading::Unit;
  /// With-distance fit supplying the distance coefficient under Fitted loading.
  const GravityFit* with_distance = nullptr;
};

/// Maps (beta, theta) of a no-distance pair-effects fit to structural
/// components; built once and reused across bootstrap replications.
class ComponentExtractor {
 public:
  /// Throws MissingCovariate, SpecMismatch.
  ComponentExtractor(const PanelDataset& ds, const ModelSpec& spec, const std::vector<std::string>& names,
                     const ComponentOptions& options = {});

  /// Throws NonFiniteComponent.
  StructuralComponents extract(const Eigen::VectorXd& beta, const Eigen::MatrixXd& theta) const;

 private:
  CountryIndex index_;
  std::vector<int> years_;
  double sigma_;
  bool fitted_in_second_stage_ = false;
  double distance_coefficient_ = -1.0;
  std::vector<std::string> origin_names_, dest_names_, cost_names_;
  std::vector<std::size_t> origin_pos_, dest_pos_;
  /// Per covariate: n x T values.
  std::vector<Eigen::MatrixXd> origin_values_, dest_values_;
  /// Per cost covariate: n x n values.
  std::vector<Eigen::MatrixXd> cost_values_;
  std::vector<std::string> unidentified_;
  Eigen::MatrixXd log_distance_;
  Eigen::VectorXd internal_;
  /// Second stage: psi = R (theta - distance term) over pairs.
  Eigen::MatrixXd R_;
};

/// Throws MissingCovariate, SpecMismatch, NonFiniteComponent.
StructuralComponents extract_components(const GravityFit& fit, const PanelDataset& ds,
                                        const ComponentOptions& options = {});

struct EmpiricalMrt {
  PanelMrtMode mode = PanelMrtMode::Pooled;
  /// n x T log resistances (pooled mode repeats the common solution).
  Eigen::MatrixXd log_Pi, log_P;
  int iterations = 0;
  double residual = 0.0;
};

/// Levels from log components, sizes as shares, then the resistance system.
/// Throws NonConvergence, NonFiniteComponent.
EmpiricalMrt solve_empirical_mrt(const StructuralComponents& components, PanelMrtMode mode = PanelMrtMode::Pooled,
                                 const MrtOptions& options = {}, unsigned threads = 1);

/// Flow-scale structural terms of the pair effects.
struct StructuralTerms {
  /// (sigma - 1) mean_t log Pi_i + constant.
  Eigen::VectorXd outward;
  /// (sigma - 1) mean_t log P_j.
  Eigen::VectorXd inward;
  /// (1 - sigma) log T^_ij, split into distance and non-distance parts.
  Eigen::MatrixXd distance, cost;
  /// -mean_t log sum_j exp(E^_jt): level of the pair effects implied by the sizes.
  double constant = 0.0;

  /// outward_i + inward_j + distance_ij + cost_ij over off-diagonal cells.
  Eigen::MatrixXd total() const;
};

StructuralTerms structural_terms(const StructuralComponents& components, const EmpiricalMrt& mrt);

struct ResidualMap {
  /// n x n, diagonal zero.
  Eigen::MatrixXd r;
  double constant = 0.0;
  ConstantPolicy policy = ConstantPolicy::MeanCentered;

  double mean() const;
};

/// r_ij = theta_ij - (outward_i + inward_j + dyadic_ij) - c. Throws IndexMismatch.
ResidualMap structural_residuals(const Eigen::MatrixXd& theta, const Eigen::VectorXd& outward,
                                 const Eigen::VectorXd& inward, const Eigen::MatrixXd& dyadic,
                                 ConstantPolicy policy = ConstantPolicy::MeanCentered);
ResidualMap structural_residuals(const Eigen::MatrixXd& theta, const StructuralTerms& terms,
                                 ConstantPolicy policy = ConstantPolicy::MeanCentered);

struct AnovaResult {
  double r2 = 0.0;
  double var_theta = 0.0;
  double var_structural = 0.0;
  double var_residual = 0.0;
  /// 2 Cov(S, r): V(theta) = V(S) + V(r) + covariance.
  double covariance = 0.0;
};

/// R^2 = 1 - V(r)/V(theta) with mean-centered r = theta - S over off-diagonal
/// cells. Throws IndexMismatch, DegenerateVariance.
AnovaResult anova_r2(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& structural);

struct BootstrapOptions {
  int B = 399;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  ComponentOptions components{};
  PanelMrtMode mrt_mode = PanelMrtMode::Pooled;
  MrtOptions mrt{};
  /// Constant policy of the tested residuals.
  ConstantPolicy test_policy = ConstantPolicy::Raw;
  /// Fraction of B that may fail to converge and be skipped.
  double skip_fraction = 0.01;
  bool keep_draws = false;
  bool record_indices = false;
};

struct BootstrapDraws {
  int B_requested = 0;
  /// Replication ids that converged, ascending.
  std::vector<int> replications;
  /// M(r_b) per successful replication.
  Eigen::VectorXd means;
  std::vector<std::string> skipped;
  GravityFit base_fit;
  StructuralComponents base_components;
  EmpiricalMrt base_mrt;
  StructuralTerms base_terms;
  ResidualMap base_residuals;
  AnovaResult base_anova;
  /// Per successful replication when keep_draws.
  std::vector<Eigen::MatrixXd> theta, log_Pi, log_P, r;
  /// Resampled residual positions per replication when record_indices.
  std::vector<std::vector<std::size_t>> indices;
  double dof_scale = 1.0;
};

/// Residual bootstrap: fit, resample residuals i.i.d. (dof-rescaled), refit,
/// re-solve resistances and form r_b. Deterministic given the seed.
/// Throws InvalidB, NonConvergence, SpecMismatch, MissingCovariate.
BootstrapDraws regression_bootstrap(const PanelDataset& ds, const ModelSpec& spec, const BootstrapOptions& options);

enum class Decision { DistanceRemovable, NotRemovable };

std::string_view to_string(Decision d) noexcept;

struct ResidualSummary {
  double mean = 0.0, sd = 0.0, min = 0.0, max = 0.0;
};

struct ValidationReport {
  double anova_r2 = 0.0;
  AnovaResult anova;
  double t_stat = 0.0;
  double p_value = 1.0;
  int B = 0;
  int B_requested = 0;
  std::size_t skipped = 0;
  double mean_of_means = 0.0;
  double se = 0.0;
  double alpha = 0.05;
  PValueReference reference = PValueReference::Percentile;
  ResidualSummary residuals;
  Decision decision = Decision::DistanceRemovable;
  double sigma = 4.0;
  std::vector<std::string> notes;
};

/// t = mean of M(r_b) / sd of M(r_b). Throws InvalidB (< 199 successful replications).
ValidationReport bootstrap_t_test(const BootstrapDraws& draws, double alpha = 0.05,
                                  PValueReference reference = PValueReference::Percentile);

/// "t = 1.12, Pr(|T|>|t|) = 0.130, null not rejected"
std::string format_test_line(double t, double p, bool rejected);
/// "ANOVA R^2 = 0.9998"
std::string format_r2_line(double r2);

void write_validation_text(const ValidationReport& report, std::ostream& out);
void write_validation_text(const ValidationReport& report, const std::string& path);
void write_validation_csv(const ValidationReport& report, const std::string& path);
/// country,year,log_Pi,log_P
void write_empirical_mrt(const EmpiricalMrt& mrt, const CountryIndex& index, const std::vector<int>& years,
                         const std::string& path);
/// origin,dest,r
void write_residual_map(const ResidualMap& map, const CountryIndex& index, const std::string& path);
/// draws_means.csv and, when kept, draws_theta.csv, draws_r.csv, draws_mrt.csv.
void write_draws(const BootstrapDraws& draws, const std::string& directory);

}  // namespace gravity
