#include "melodyclf/error.h"

namespace melodyclf {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnterminatedVlq: return "UnterminatedVlq";
    case ErrorCode::TruncatedInput: return "TruncatedInput";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::TruncatedChunk: return "TruncatedChunk";
    case ErrorCode::MalformedEvent: return "MalformedEvent";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::NoNotes: return "NoNotes";
    case ErrorCode::EmptyAfterEnforcement: return "EmptyAfterEnforcement";
    case ErrorCode::MixedMeter: return "MixedMeter";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::UnknownPosition: return "UnknownPosition";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::TooFewItems: return "TooFewItems";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace melodyclf
