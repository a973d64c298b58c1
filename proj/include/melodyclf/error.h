/// @file
/// @brief Error codes and warning records shared by every module.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace melodyclf {

enum class ErrorCode {
  // midi_io
  UnterminatedVlq,
  TruncatedInput,
  BadMagic,
  UnsupportedFormat,
  TruncatedChunk,
  MalformedEvent,
  InvariantViolation,
  NoNotes,
  // preprocess
  EmptyAfterEnforcement,
  MixedMeter,
  TooShort,
  // encode
  EmptyCorpus,
  UnknownPosition,
  // model
  DimensionMismatch,
  NonFiniteActivation,
  Diverged,
  VocabMismatch,
  VersionMismatch,
  DigestMismatch,
  CorruptCheckpoint,
  // harness
  TooFewItems,
  LengthMismatch,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Non-fatal condition recorded while a file is repaired or trimmed.
struct Warning {
  std::string kind;
  std::string message;
};

using Diagnostics = std::vector<Warning>;

inline void warn(Diagnostics* diag, std::string kind, std::string message) {
  if (diag != nullptr) {
    diag->push_back({std::move(kind), std::move(message)});
  }
}

}  // namespace melodyclf
