/// @file
/// @brief Vocabularies, one-hot step encoding and batch padding.
///
/// A step is the concatenation one-hot(pitch) ++ one-hot(position) ++
/// one-hot(duration), so its dimension is |P| + |B| + |D|. Steps are stored
/// sparsely; a padded step is an empty vector.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melodyclf/error.h"
#include "melodyclf/preprocess.h"

namespace melodyclf {

inline constexpr int kPitchCount = 128;
inline constexpr int kVocabVersion = 1;

struct SparseEntry {
  int index = 0;
  double value = 0.0;

  bool operator==(const SparseEntry&) const = default;
};

using SparseVector = std::vector<SparseEntry>;

std::vector<double> to_dense(const SparseVector& v, int dim);

struct Vocabularies {
  double grid_step = kDefaultGridStep;
  double beats_per_bar = kDefaultBeatsPerBar;
  std::vector<int> pitch_tokens;
  std::vector<double> position_tokens;
  /// Observed durations, ascending. The out-of-vocabulary token is implicit
  /// and sits right after the last observed duration.
  std::vector<double> duration_tokens;
  int max_len = 0;

  int pitch_size() const { return static_cast<int>(pitch_tokens.size()); }
  int position_size() const { return static_cast<int>(position_tokens.size()); }
  int duration_size() const { return static_cast<int>(duration_tokens.size()) + 1; }
  int dim() const { return pitch_size() + position_size() + duration_size(); }
  int duration_oov() const { return static_cast<int>(duration_tokens.size()); }

  /// Block-local indices.
  int pitch_index(int pitch) const;
  int position_index(double position) const;
  int duration_index(double duration) const;

  std::string to_json() const;
  static Vocabularies from_json(const std::string& text);
  /// FNV-1a over the canonical JSON, as 16 hex digits.
  std::string digest() const;

  bool operator==(const Vocabularies&) const = default;
};

struct EncodedSequence {
  int dim = 0;
  std::vector<SparseVector> steps;
  int length = 0;
  std::optional<int> label;
  std::string source_id;

  std::vector<double> dense_step(std::size_t t) const { return to_dense(steps.at(t), dim); }
};

struct Batch {
  std::vector<EncodedSequence> sequences;
  int max_len = 0;
  std::vector<int> labels;
};

Vocabularies build_vocab(std::span<const MelodySequence> corpus, double grid_step,
                         double beats_per_bar);

EncodedSequence encode_sequence(const MelodySequence& seq, const Vocabularies& vocab,
                                std::optional<int> label = std::nullopt);

/// Pads with all-zero steps to max_len; longer sequences are truncated and
/// reported through `diag`. Labels default to 0 for unlabeled sequences.
Batch pad_batch(std::vector<EncodedSequence> seqs, int max_len, Diagnostics* diag = nullptr);

/// Inverse of the per-row encoding. Returns nullopt for pad steps and for
/// steps whose duration is the OOV token.
std::optional<FeatureRow> decode_step(const SparseVector& step, const Vocabularies& vocab);

/// {"source_id", "label", "length", "steps": [[p, b, d], ...]} with absolute
/// indices into the concatenated vector.
std::string to_encoded_line(const EncodedSequence& seq);

}  // namespace melodyclf
