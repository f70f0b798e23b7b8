#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vlmunc {

enum class ErrorCode {
  MissingFile,
  IoFailure,
  MagicMismatch,
  VersionMismatch,
  DimensionMismatch,
  NonFiniteValue,
  LabelOutOfRange,
  LabelCountMismatch,
  EmptyDataset,
  UnknownSplit,
  InvalidManifest,
  ZeroNormRow,
  RankTooLow,
  DegenerateInput,
  TooFewSamples,
  EmptyTrainSplit,
  UnknownClass,
  ZeroCount,
  KTooLarge,
  EmptyPool,
  SingleClassOnly,
  NoPositives,
  EmptyInput,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::LabelCountMismatch: return "LabelCountMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownSplit: return "UnknownSplit";
    case ErrorCode::InvalidManifest: return "InvalidManifest";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::RankTooLow: return "RankTooLow";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::ZeroCount: return "ZeroCount";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::SingleClassOnly: return "SingleClassOnly";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Library-wide exception. `module()` names the component that raised it so
/// the CLI can report errors with context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string_view module, const std::string& message)
      : std::runtime_error(std::string(module) + ": " + std::string(to_string(code)) + ": " + message),
        code_(code),
        module_(module) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace vlmunc
