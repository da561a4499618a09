#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace causalrank {

enum class ErrorCode {
  // graphs
  UnknownNode,
  DuplicateNode,
  MissingEdge,
  SelfLoop,
  CycleIntroduced,
  // discrete models
  InvalidModel,
  IncompleteAssignment,
  ZeroProbabilityEvidence,
  // data and scoring
  InvalidSpec,
  LengthMismatch,
  DimensionMismatch,
  NotNormalized,
  NoPositiveCandidates,
  IndexOutOfRange,
  ZeroMass,
  EmptyDataset,
  UnknownType,
  NoRelevantCandidates,
  NoMatch,
  // runs and io
  ConfigError,
  DivergenceDetected,
  ParseError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::MissingEdge: return "MissingEdge";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::CycleIntroduced: return "CycleIntroduced";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::IncompleteAssignment: return "IncompleteAssignment";
    case ErrorCode::ZeroProbabilityEvidence: return "ZeroProbabilityEvidence";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::NoPositiveCandidates: return "NoPositiveCandidates";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::NoRelevantCandidates: return "NoRelevantCandidates";
    case ErrorCode::NoMatch: return "NoMatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` names the
/// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace causalrank
