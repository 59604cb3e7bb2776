// error.hpp
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gravity {

enum class ErrorCode {
  // panel-core
  MissingFile,
  MissingColumn,
  UnexpectedColumn,
  MalformedRow,
  UnknownCountry,
  UnbalancedPanel,
  DuplicateObservation,
  NonPositiveDistance,
  AsymmetricDistance,
  NonPositiveFlow,
  RoleViolation,
  InvalidSchema,
  UnknownRegressor,
  CollinearDummySpec,
  InvalidSpec,
  // spatial-weights
  ZeroDistance,
  AsymmetricInput,
  InvalidWeights,
  DimensionMismatch,
  ZeroVariance,
  // structural-gravity
  InvalidWorld,
  NonConvergence,
  StaleSolution,
  InvalidConfig,
  // panel-estimator
  RankDeficient,
  WeakInstruments,
  IncomparableSpecs,
  // inference
  MissingCovariate,
  SpecMismatch,
  NonFiniteComponent,
  IndexMismatch,
  DegenerateVariance,
  DegenerateSE,
  InvalidB,
};

std::string_view error_name(ErrorCode code) noexcept;

/// Library error. `code()` names the failure; `what()` carries the detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace gravity
