#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tae {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  InvalidState,
  NonFinite,
  Io,
  BadMagic,
  BadVersion,
  BadDtype,
  DimOverflow,
  Truncated,
  LabelOutOfRange,
  InsufficientSamples,
  MissingClass,
  Config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidState: return "invalid-state";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::Io: return "io";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::BadVersion: return "bad-version";
    case ErrorCode::BadDtype: return "bad-dtype";
    case ErrorCode::DimOverflow: return "dim-overflow";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::LabelOutOfRange: return "label-out-of-range";
    case ErrorCode::InsufficientSamples: return "insufficient-samples";
    case ErrorCode::MissingClass: return "missing-class";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code and
/// a message naming the offending operation or value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error("[" + std::string(to_string(code)) + "] " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tae
