#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nicekit {

enum class ErrorCode {
  kMissingField,
  kDuplicateId,
  kDimensionMismatch,
  kUnreadableFile,
  kInvalidValue,
  kLabelOutsideSpace,
  kZeroVector,
  kEndpointError,
  kMissingEmbedding,
  kPoolTooSmall,
  kKTooLarge,
  kMissingFragment,
  kKindTaskMismatch,
  kModeTaskMismatch,
  kTooFewDemos,
  kUnmappedLabel,
  kTimeout,
  kRateLimited,
  kMalformedResponse,
  kExhaustedRetries,
  kCacheIo,
  kMalformedReference,
  kGraphTooLarge,
  kBinTooSmall,
  kAllBinsZero,
  kBadThresholds,
  kConfigMismatch,
  kLocked,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kUnreadableFile: return "UnreadableFile";
    case ErrorCode::kInvalidValue: return "InvalidValue";
    case ErrorCode::kLabelOutsideSpace: return "LabelOutsideSpace";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEndpointError: return "EndpointError";
    case ErrorCode::kMissingEmbedding: return "MissingEmbedding";
    case ErrorCode::kPoolTooSmall: return "PoolTooSmall";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kMissingFragment: return "MissingFragment";
    case ErrorCode::kKindTaskMismatch: return "KindTaskMismatch";
    case ErrorCode::kModeTaskMismatch: return "ModeTaskMismatch";
    case ErrorCode::kTooFewDemos: return "TooFewDemos";
    case ErrorCode::kUnmappedLabel: return "UnmappedLabel";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kExhaustedRetries: return "ExhaustedRetries";
    case ErrorCode::kCacheIo: return "CacheIo";
    case ErrorCode::kMalformedReference: return "MalformedReference";
    case ErrorCode::kGraphTooLarge: return "GraphTooLarge";
    case ErrorCode::kBinTooSmall: return "BinTooSmall";
    case ErrorCode::kAllBinsZero: return "AllBinsZero";
    case ErrorCode::kBadThresholds: return "BadThresholds";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kLocked: return "Locked";
  }
  return "Unknown";
}

/// Every failure surfaced by the library carries a machine-readable code
/// alongside the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Validation failures (bad input bundles) vs. runtime failures (backend, IO).
inline bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingField:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kUnreadableFile:
    case ErrorCode::kInvalidValue:
    case ErrorCode::kLabelOutsideSpace:
    case ErrorCode::kZeroVector:
    case ErrorCode::kMissingEmbedding:
    case ErrorCode::kPoolTooSmall:
    case ErrorCode::kKTooLarge:
    case ErrorCode::kMissingFragment:
    case ErrorCode::kKindTaskMismatch:
    case ErrorCode::kModeTaskMismatch:
    case ErrorCode::kTooFewDemos:
    case ErrorCode::kUnmappedLabel:
    case ErrorCode::kBinTooSmall:
    case ErrorCode::kBadThresholds:
    case ErrorCode::kConfigMismatch:
      return true;
    default:
      return false;
  }
}

}  // namespace nicekit
