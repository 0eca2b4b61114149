#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hybridflow {

enum class ErrorCode {
  BadMagic,
  Truncated,
  NonPositiveDims,
  InvariantViolation,
  WrongBitDepth,
  WrongChannelCount,
  RangeOverflow,
  DimensionMismatch,
  EmptyMask,
  TooSmall,
  InvalidSpec,
  IoError,
  IndexOutOfRange,
  CorruptFile,
  InvalidConfig,
  ShapeMismatch,
  FormatVersionMismatch,
  InvalidCycles,
  EmptySource,
  SourceMismatch,
  MissingGroundTruth,
  TooFewSamples,
  DegenerateVariance,
  NonFiniteLoss,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hybridflow
