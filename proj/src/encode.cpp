#include "melodyclf/encode.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "melodyclf/rng.h"

namespace melodyclf {

using nlohmann::ordered_json;

std::vector<double> to_dense(const SparseVector& v, int dim) {
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (const SparseEntry& e : v) {
    out.at(static_cast<std::size_t>(e.index)) += e.value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

int Vocabularies::pitch_index(int pitch) const {
  if (pitch < 0 || pitch >= pitch_size()) {
    throw Error(ErrorCode::InvariantViolation, "pitch out of range: " + std::to_string(pitch));
  }
  return pitch;
}

int Vocabularies::position_index(double position) const {
  const long long idx = std::llround(position / grid_step);
  if (idx < 0 || idx >= position_size() ||
      std::abs(position_tokens[static_cast<std::size_t>(idx)] - position) > kGridTolerance) {
    throw Error(ErrorCode::UnknownPosition,
                "position " + format_beats(position) + " is not on the vocabulary grid");
  }
  return static_cast<int>(idx);
}

int Vocabularies::duration_index(double duration) const {
  auto it = std::lower_bound(duration_tokens.begin(), duration_tokens.end(),
                             duration - kGridTolerance);
  if (it != duration_tokens.end() && std::abs(*it - duration) <= kGridTolerance) {
    return static_cast<int>(it - duration_tokens.begin());
  }
  return duration_oov();
}

std::string Vocabularies::to_json() const {
  ordered_json j;
  j["version"] = kVocabVersion;
  j["grid_step"] = grid_step;
  j["beats_per_bar"] = beats_per_bar;
  j["pitch"] = pitch_tokens;
  j["positions"] = position_tokens;
  j["durations"] = duration_tokens;
  j["max_len"] = max_len;
  return j.dump();
}

Vocabularies Vocabularies::from_json(const std::string& text) {
  Vocabularies v;
  try {
    const ordered_json j = ordered_json::parse(text);
    if (j.at("version").get<int>() != kVocabVersion) {
      throw Error(ErrorCode::VersionMismatch, "unsupported vocab version");
    }
    v.grid_step = j.at("grid_step").get<double>();
    v.beats_per_bar = j.at("beats_per_bar").get<double>();
    v.pitch_tokens = j.at("pitch").get<std::vector<int>>();
    v.position_tokens = j.at("positions").get<std::vector<double>>();
    v.duration_tokens = j.at("durations").get<std::vector<double>>();
    v.max_len = j.at("max_len").get<int>();
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad vocab.json: ") + e.what());
  }
  if (!std::is_sorted(v.duration_tokens.begin(), v.duration_tokens.end()) ||
      !std::is_sorted(v.position_tokens.begin(), v.position_tokens.end()) ||
      !(v.grid_step > 0.0) || v.max_len < 0) {
    throw Error(ErrorCode::Io, "vocab.json violates its invariants");
  }
  return v;
}

std::string Vocabularies::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json())));
  return buf;
}

Vocabularies build_vocab(std::span<const MelodySequence> corpus, double grid_step,
                         double beats_per_bar) {
  if (corpus.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "cannot build a vocabulary from no sequences");
  }
  if (!(grid_step > 0.0) || !(beats_per_bar > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "grid and bar length must be positive");
  }
  Vocabularies v;
  v.grid_step = grid_step;
  v.beats_per_bar = beats_per_bar;
  v.pitch_tokens.resize(kPitchCount);
  for (int p = 0; p < kPitchCount; ++p) {
    v.pitch_tokens[static_cast<std::size_t>(p)] = p;
  }
  const auto positions =
      static_cast<int>(std::ceil(beats_per_bar / grid_step - kGridTolerance));
  for (int k = 0; k < positions; ++k) {
    v.position_tokens.push_back(k * grid_step);
  }

  std::vector<double> durations;
  for (const MelodySequence& seq : corpus) {
    v.max_len = std::max(v.max_len, static_cast<int>(seq.rows.size()));
    for (const FeatureRow& r : seq.rows) {
      durations.push_back(r.duration);
    }
  }
  std::sort(durations.begin(), durations.end());
  for (double d : durations) {
    if (v.duration_tokens.empty() || d - v.duration_tokens.back() > kGridTolerance) {
      v.duration_tokens.push_back(d);
    }
  }
  return v;
}

EncodedSequence encode_sequence(const MelodySequence& seq, const Vocabularies& vocab,
                                std::optional<int> label) {
  EncodedSequence out;
  out.dim = vocab.dim();
  out.label = label;
  out.source_id = seq.source_id;
  out.length = static_cast<int>(seq.rows.size());
  out.steps.reserve(seq.rows.size());
  const int position_base = vocab.pitch_size();
  const int duration_base = position_base + vocab.position_size();
  for (const FeatureRow& r : seq.rows) {
    out.steps.push_back({{vocab.pitch_index(r.pitch), 1.0},
                         {position_base + vocab.position_index(r.position), 1.0},
                         {duration_base + vocab.duration_index(r.duration), 1.0}});
  }
  return out;
}

Batch pad_batch(std::vector<EncodedSequence> seqs, int max_len, Diagnostics* diag) {
  Batch batch;
  batch.max_len = max_len;
  batch.labels.reserve(seqs.size());
  for (EncodedSequence& s : seqs) {
    if (s.length > max_len) {
      warn(diag, "Truncated",
           s.source_id + ": " + std::to_string(s.length) + " steps cut to " +
               std::to_string(max_len));
      s.length = max_len;
    }
    s.steps.resize(static_cast<std::size_t>(max_len));
    for (std::size_t t = static_cast<std::size_t>(s.length); t < s.steps.size(); ++t) {
      s.steps[t].clear();
    }
    batch.labels.push_back(s.label.value_or(0));
  }
  batch.sequences = std::move(seqs);
  return batch;
}

std::optional<FeatureRow> decode_step(const SparseVector& step, const Vocabularies& vocab) {
  const int position_base = vocab.pitch_size();
  const int duration_base = position_base + vocab.position_size();
  int pitch = -1;
  int position = -1;
  int duration = -1;
  for (const SparseEntry& e : step) {
    if (e.value == 0.0) {
      continue;
    }
    if (e.index < position_base) {
      pitch = e.index;
    } else if (e.index < duration_base) {
      position = e.index - position_base;
    } else {
      duration = e.index - duration_base;
    }
  }
  if (pitch < 0 || position < 0 || duration < 0 || duration == vocab.duration_oov()) {
    return std::nullopt;
  }
  return FeatureRow{vocab.pitch_tokens[static_cast<std::size_t>(pitch)],
                    vocab.position_tokens[static_cast<std::size_t>(position)],
                    vocab.duration_tokens[static_cast<std::size_t>(duration)], 0};
}

std::string to_encoded_line(const EncodedSequence& seq) {
  ordered_json steps = ordered_json::array();
  for (int t = 0; t < seq.length; ++t) {
    ordered_json idx = ordered_json::array();
    for (const SparseEntry& e : seq.steps[static_cast<std::size_t>(t)]) {
      idx.push_back(e.index);
    }
    steps.push_back(std::move(idx));
  }
  ordered_json j;
  j["source_id"] = seq.source_id;
  if (seq.label) {
    j["label"] = *seq.label;
  }
  j["length"] = seq.length;
  j["steps"] = std::move(steps);
  return j.dump();
}

}  // namespace melodyclf
