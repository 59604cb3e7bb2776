// generator.hpp
// Synthetic structural-gravity panels with known ground truth.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gravity/panel.hpp"
#include "gravity/structural.hpp"
#include "gravity/weight_spec.hpp"

namespace gravity {

/// Log internal distance convention for domestic trade costs:
/// log(min_j d_ij / 2). Shared by the generator and the empirical MRT solve.
Eigen::VectorXd internal_log_distance(const Eigen::MatrixXd& log_distance);

struct GeneratorConfig {
  std::size_t countries = 10;
  std::size_t periods = 5;
  int first_year = 1988;
  double sigma = 4.0;
  /// Flow-scale coefficients on (pop, gdp, ppp) of the origin and destination.
  std::vector<double> beta_origin = {0.5, 1.0, 0.3};
  std::vector<double> beta_dest = {0.4, 0.9, 0.2};
  /// Flow-scale elasticity magnitude of distance: log T gains elasticity/(sigma-1) per log km.
  double distance_elasticity = 1.0;
  /// Flow-scale effects of (contig, comlang, comcur, barrier); barrier is a
  /// continuous non-transport index entering with a negative sign.
  std::vector<double> cost_effects = {0.9, 0.6, 0.75, -0.5};
  /// Target share of distance in the variance of log trade costs; the cost
  /// effects are rescaled by a common factor to reach it. <= 0 disables.
  double distance_share = 0.21;
  double rho = 0.0;
  WeightSpec weights{};
  double noise_sd = 0.05;
  /// Log border cost on international pairs, left out of every model.
  double omitted_border_cost = 0.0;
  /// Fraction of the border cost removed linearly by the last year.
  double border_phase_down = 0.25;
  PanelMrtMode mrt_mode = PanelMrtMode::Pooled;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  /// Throws InvalidConfig.
  void validate() const;
};

struct GroundTruth {
  double sigma = 0.0;
  double rho = 0.0;
  /// Flow-scale coefficients in schema order of the size covariates.
  std::vector<std::string> size_names;
  Eigen::VectorXd size_coefficients;
  /// Flow-scale effects of the cost covariates after share rescaling.
  std::vector<std::string> cost_names;
  Eigen::VectorXd cost_coefficients;
  double distance_elasticity = 0.0;
  double distance_share = 0.0;
  Eigen::VectorXd latitude, longitude;
  /// Time-invariant log trade costs, diagonal = domestic.
  Eigen::MatrixXd log_trade_cost;
  /// n x T, levels.
  Eigen::MatrixXd Pi, P;
  /// n x T log size indices (origin output, destination expenditure).
  Eigen::MatrixXd log_output, log_expenditure;
  /// Pair component under zero-sum time effects (n x n, diagonal unused).
  Eigen::MatrixXd pair_component;
  Eigen::VectorXd time_component;
  /// Log structural flows over estimation rows, before spatial lag and noise.
  Eigen::VectorXd structural;
  Eigen::VectorXd noise;
  /// Flow lag of the emitted flows.
  Eigen::VectorXd spatial_lag;
};

struct SyntheticPanel {
  PanelDataset data;
  GroundTruth truth;
};

/// Schema of generated panels: pop/gdp/ppp by origin and destination (size),
/// contig/comlang/comcur/barrier (dyadic cost).
Schema synthetic_schema();

/// Throws InvalidConfig.
SyntheticPanel generate_synthetic(const GeneratorConfig& config);

/// mrt_truth.csv (country,year,Pi,P), tradecost_truth.csv (origin,dest,T),
/// coefficients_truth.csv (name,value), pair_truth.csv (origin,dest,theta).
void write_truth(const SyntheticPanel& panel, const std::string& directory);

}  // namespace gravity
