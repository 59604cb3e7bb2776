// panel.hpp
// Dyadic panel data: country index, covariate schema, balanced
// origin-destination-year dataset, model specification and design matrices.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gravity/weight_spec.hpp"

namespace gravity {

class FlowWeight;

/// Ordered, unique ISO-3 style country codes. Positions never change once built.
class CountryIndex {
 public:
  CountryIndex() = default;
  explicit CountryIndex(std::vector<std::string> codes);

  std::size_t size() const noexcept { return codes_.size(); }
  const std::string& code(std::size_t pos) const { return codes_.at(pos); }
  const std::vector<std::string>& codes() const noexcept { return codes_; }
  std::optional<std::size_t> find(std::string_view code) const;
  /// Throws UnknownCountry.
  std::size_t position(std::string_view code) const;

  bool operator==(const CountryIndex& other) const { return codes_ == other.codes_; }

 private:
  std::vector<std::string> codes_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Directed off-diagonal pairs (i, j), i != j, in origin-major order.
struct PairLayout {
  std::size_t n = 0;

  std::size_t count() const noexcept { return n * (n - 1); }
  std::size_t pair(std::size_t i, std::size_t j) const noexcept {
    return i * (n - 1) + (j < i ? j : j - 1);
  }
  std::size_t origin(std::size_t p) const noexcept { return p / (n - 1); }
  std::size_t dest(std::size_t p) const noexcept {
    const std::size_t i = origin(p);
    const std::size_t r = p % (n - 1);
    return r < i ? r : r + 1;
  }
};

enum class CovariateRole { Origin, Destination, Dyadic, DyadicTime };

/// Marks which covariates build the structural size and cost indices.
enum class ComponentTag { None, Size, Cost };

struct Covariate {
  std::string name;
  CovariateRole role = CovariateRole::DyadicTime;
  ComponentTag tag = ComponentTag::None;

  bool operator==(const Covariate&) const = default;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Covariate> covariates);

  const std::vector<Covariate>& covariates() const noexcept { return covariates_; }
  std::size_t size() const noexcept { return covariates_.size(); }
  std::optional<std::size_t> find(std::string_view name) const;
  const Covariate& at(std::size_t k) const { return covariates_.at(k); }

  bool operator==(const Schema& other) const { return covariates_ == other.covariates_; }

 private:
  std::vector<Covariate> covariates_;
};

std::string_view to_string(CovariateRole role) noexcept;
std::string_view to_string(ComponentTag tag) noexcept;

/// Schema declaration: one `name = role [tag]` line per covariate, `#` comments.
/// Roles: origin, dest, dyadic, dyadic_time. Tags: size, cost.
Schema parse_schema(std::string_view text);
Schema load_schema(const std::string& path);
void write_schema(const Schema& schema, const std::string& path);

/// Self-flow rows (i == i). Stored for round-tripping, never estimated.
struct DiagonalRows {
  std::vector<std::size_t> country;
  std::vector<std::size_t> year;  // position into PanelDataset::years()
  std::vector<double> flow;
  std::vector<std::vector<double>> covariates;

  std::size_t size() const noexcept { return flow.size(); }
};

/// Balanced dyadic panel. Estimation rows are stored year-major, then by
/// PairLayout: row = t * n(n-1) + pair(i, j). Immutable after construction.
class PanelDataset {
 public:
  PanelDataset(CountryIndex index, std::vector<int> years, Schema schema,
               Eigen::MatrixXd log_distance, Eigen::VectorXd flow, Eigen::MatrixXd covariates,
               DiagonalRows diagonal = {});

  const CountryIndex& index() const noexcept { return index_; }
  const std::vector<int>& years() const noexcept { return years_; }
  const Schema& schema() const noexcept { return schema_; }
  /// Log great-circle distance (km); symmetric, zero diagonal.
  const Eigen::MatrixXd& log_distance() const noexcept { return log_distance_; }
  /// Log flows over estimation rows.
  const Eigen::VectorXd& flow() const noexcept { return flow_; }
  const Eigen::MatrixXd& covariates() const noexcept { return covariates_; }
  const DiagonalRows& diagonal() const noexcept { return diagonal_; }

  std::size_t countries() const noexcept { return index_.size(); }
  std::size_t periods() const noexcept { return years_.size(); }
  PairLayout layout() const noexcept { return PairLayout{index_.size()}; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(flow_.size()); }
  std::size_t row(std::size_t t, std::size_t i, std::size_t j) const noexcept {
    return t * layout().count() + layout().pair(i, j);
  }

  /// Throws UnknownRegressor.
  Eigen::VectorXd covariate(std::string_view name) const;
  /// log_distance broadcast over estimation rows.
  Eigen::VectorXd distance_column() const;

  /// Same dataset with a different response (bootstrap, generator).
  PanelDataset with_flow(Eigen::VectorXd flow) const;

  /// Order-independent digest of flows and distances.
  std::uint64_t fingerprint() const;

 private:
  CountryIndex index_;
  std::vector<int> years_;
  Schema schema_;
  Eigen::MatrixXd log_distance_;
  Eigen::VectorXd flow_;
  Eigen::MatrixXd covariates_;
  DiagonalRows diagonal_;
};

enum class DiagonalPolicy { Keep, Reject };

struct LoadOptions {
  /// Flow and `dist` columns are in levels and are log-transformed on load.
  bool levels = false;
  /// Companion `origin,dest,dist_km` file; otherwise the panel needs a `dist` column.
  std::string distance_path;
  DiagonalPolicy diagonal = DiagonalPolicy::Keep;
};

PanelDataset read_panel(std::istream& in, const Schema& schema, const LoadOptions& options = {},
                        std::istream* distances = nullptr);
PanelDataset load_panel(const std::string& path, const Schema& schema, const LoadOptions& options = {});

/// Writes `origin,dest,year,flow,<covariates>[,dist]` with round-trip exact reals.
void write_panel(const PanelDataset& ds, std::ostream& out, bool with_dist_column = true);
void write_panel(const PanelDataset& ds, const std::string& path, bool with_dist_column = true);
/// Writes `origin,dest,dist_km`.
void write_distances(const PanelDataset& ds, const std::string& path);

enum class CollinearityPolicy { Error, Absorb };

struct ModelSpec {
  /// Ordered regressors; may contain "dist".
  std::vector<std::string> regressors;
  bool include_distance = false;
  bool include_pair_fe = true;
  bool include_time_fe = true;
  /// Pair effects shared by (i,j) and (j,i); robustness mode only.
  bool symmetric_pair_fe = false;
  bool spatial = false;
  std::optional<WeightSpec> weights;
  /// Covariates entering as their flow lag, named "W_<name>".
  std::vector<std::string> lagged_regressors;
  CollinearityPolicy collinearity = CollinearityPolicy::Error;

  /// Throws InvalidSpec.
  void validate() const;
};

/// Response, regressors and implicit dummy blocks for one specification.
struct DesignBundle {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  /// Regressors dropped because pair effects absorb them.
  std::vector<std::string> absorbed;

  std::size_t n = 0;
  std::size_t periods = 0;
  bool pair_fe = true;
  bool time_fe = true;
  bool symmetric_pair = false;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(y.size()); }
  std::size_t pairs() const noexcept { return n * (n - 1); }
  std::size_t time_of_row(std::size_t r) const noexcept { return r / pairs(); }
  std::size_t pair_of_row(std::size_t r) const noexcept { return r % pairs(); }
  /// Pair effect group of a row: directed pair, or unordered pair in symmetric mode.
  std::size_t pair_group(std::size_t r) const noexcept;
  std::size_t pair_group_count() const noexcept;

  /// Removes the fixed effects from each column (exact two-way demeaning on
  /// the balanced panel; grand-mean centering when no effects are requested).
  Eigen::MatrixXd within(const Eigen::MatrixXd& v) const;
  Eigen::VectorXd within(const Eigen::VectorXd& v) const;
  /// Parameters absorbed by the fixed effects (or the intercept).
  std::size_t absorbed_dof() const noexcept;
};

/// Throws UnknownRegressor, CollinearDummySpec, InvalidSpec.
DesignBundle build_design(const PanelDataset& ds, const ModelSpec& spec,
                          const FlowWeight* weights = nullptr);

}  // namespace gravity
