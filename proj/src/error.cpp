#include "gravity/error.hpp"

namespace gravity {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnexpectedColumn: return "UnexpectedColumn";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::UnknownCountry: return "UnknownCountry";
    case ErrorCode::UnbalancedPanel: return "UnbalancedPanel";
    case ErrorCode::DuplicateObservation: return "DuplicateObservation";
    case ErrorCode::NonPositiveDistance: return "NonPositiveDistance";
    case ErrorCode::AsymmetricDistance: return "AsymmetricDistance";
    case ErrorCode::NonPositiveFlow: return "NonPositiveFlow";
    case ErrorCode::RoleViolation: return "RoleViolation";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::UnknownRegressor: return "UnknownRegressor";
    case ErrorCode::CollinearDummySpec: return "CollinearDummySpec";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ZeroDistance: return "ZeroDistance";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::InvalidWeights: return "InvalidWeights";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::InvalidWorld: return "InvalidWorld";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::StaleSolution: return "StaleSolution";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::WeakInstruments: return "WeakInstruments";
    case ErrorCode::IncomparableSpecs: return "IncomparableSpecs";
    case ErrorCode::MissingCovariate: return "MissingCovariate";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::NonFiniteComponent: return "NonFiniteComponent";
    case ErrorCode::IndexMismatch: return "IndexMismatch";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::DegenerateSE: return "DegenerateSE";
    case ErrorCode::InvalidB: return "InvalidB";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

}  // namespace gravity
