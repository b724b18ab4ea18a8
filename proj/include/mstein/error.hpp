#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mstein {

enum class ErrorCode {
  InvalidParameter,
  HurstOutOfRange,
  NonPositiveParameter,
  RhoOutOfRange,
  NonFiniteFunctionValue,
  NotPSD,
  UnstableStep,
  IntegralDiverged,
  EmptyTail,
  TruncationTooCoarse,
  ZeroVariance,
  SingularPoint,
  AsymmetricMeasure,
  InfiniteActivity,
  GridMismatch,
  NonPositiveInput,
  OrderTooLarge,
  IndexOutOfRange,
  UnknownAtom,
  NotCentered,
  UnknownExperiment,
  IoFailure,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::HurstOutOfRange: return "HurstOutOfRange";
    case ErrorCode::NonPositiveParameter: return "NonPositiveParameter";
    case ErrorCode::RhoOutOfRange: return "RhoOutOfRange";
    case ErrorCode::NonFiniteFunctionValue: return "NonFiniteFunctionValue";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::UnstableStep: return "UnstableStep";
    case ErrorCode::IntegralDiverged: return "IntegralDiverged";
    case ErrorCode::EmptyTail: return "EmptyTail";
    case ErrorCode::TruncationTooCoarse: return "TruncationTooCoarse";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingularPoint: return "SingularPoint";
    case ErrorCode::AsymmetricMeasure: return "AsymmetricMeasure";
    case ErrorCode::InfiniteActivity: return "InfiniteActivity";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::OrderTooLarge: return "OrderTooLarge";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UnknownAtom: return "UnknownAtom";
    case ErrorCode::NotCentered: return "NotCentered";
    case ErrorCode::UnknownExperiment: return "UnknownExperiment";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure in the toolkit is reported as an Error carrying a machine
/// readable code; what() is "<Code>: <reason>" on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& reason)
      : std::runtime_error(std::string(to_string(code)) + ": " + reason),
        code_(code),
        reason_(reason) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  ErrorCode code_;
  std::string reason_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& reason) {
  throw Error(code, reason);
}

inline void require(bool condition, ErrorCode code, const std::string& reason) {
  if (!condition) fail(code, reason);
}

}  // namespace mstein
