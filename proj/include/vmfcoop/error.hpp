#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vmfcoop {

enum class ErrorKind {
  NonFiniteInput,
  DimMismatch,
  DegenerateMean,
  OutOfRange,
  InvalidSpec,
  DegenerateFusion,
  DegenerateTarget,
  DegeneratePrompt,
  LabelOutOfRange,
  NonFiniteLoss,
  InsufficientSamples,
  BadMagic,
  BadVersion,
  CrcMismatch,
  TruncatedPayload,
  TrailingData,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::DegenerateMean: return "DegenerateMean";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::DegenerateFusion: return "DegenerateFusion";
    case ErrorKind::DegenerateTarget: return "DegenerateTarget";
    case ErrorKind::DegeneratePrompt: return "DegeneratePrompt";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::BadVersion: return "BadVersion";
    case ErrorKind::CrcMismatch: return "CrcMismatch";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::TrailingData: return "TrailingData";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace vmfcoop
