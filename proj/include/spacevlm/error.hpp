#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spacevlm {

enum class ErrorCode {
  NearZeroVector,
  DimensionMismatch,
  ThresholdOutOfRange,
  ConceptsIndistinguishable,
  ConceptsAntipodal,
  InvalidArgument,
  IoFailure,
  BadMagic,
  VersionUnsupported,
  LengthMismatch,
  ManifestMismatch,
  ZeroNormRow,
  DuplicateId,
  UnknownId,
  EmptyCaption,
  EndpointUnreachable,
  MalformedReply,
  CacheCorrupt,
  UnresolvableCaption,
  UnknownLabel,
  UnlabeledItem,
  TaskFormat,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NearZeroVector: return "NearZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ThresholdOutOfRange: return "ThresholdOutOfRange";
    case ErrorCode::ConceptsIndistinguishable: return "ConceptsIndistinguishable";
    case ErrorCode::ConceptsAntipodal: return "ConceptsAntipodal";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::EmptyCaption: return "EmptyCaption";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::MalformedReply: return "MalformedReply";
    case ErrorCode::CacheCorrupt: return "CacheCorrupt";
    case ErrorCode::UnresolvableCaption: return "UnresolvableCaption";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UnlabeledItem: return "UnlabeledItem";
    case ErrorCode::TaskFormat: return "TaskFormat";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status and tests can match on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spacevlm
