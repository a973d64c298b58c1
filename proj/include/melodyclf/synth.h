/// @file
/// @brief Synthetic labeled melody corpora written as real SMF bytes.
///
/// Label 1 ("human"): diatonic random walk, durations from {0.5, 1, 2}
/// quarters, every onset on the sixteenth grid. Label 0 ("machine"):
/// chromatic steps in [-7, +7], continuous durations, onsets jittered off
/// the grid. Every piece is a pure function of (seed, label, index).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "melodyclf/midi_io.h"

namespace melodyclf {

struct SynthConfig {
  std::uint64_t seed = 42;
  int n_label0 = 300;
  int n_label1 = 300;
  int bars = 8;
  int ppq = 480;
  int bpm_min = 80;
  int bpm_max = 160;
  /// Max onset displacement of label-0 events, in beats.
  double jitter_beats = 0.07;

  std::vector<int> scale = {0, 2, 4, 5, 7, 9, 11};
  int label1_low = 55;
  int label1_high = 84;
  std::vector<double> label1_durations = {0.5, 1.0, 2.0};
  std::vector<double> label1_duration_weights = {0.45, 0.4, 0.15};
  double label1_rest_probability = 0.08;

  double label0_min_duration = 0.2;
  double label0_max_duration = 1.8;
  int label0_max_step = 7;
  int label0_low = 48;
  int label0_high = 84;

  /// Throws InvariantViolation on negative counts or jitter.
  void validate() const;
};

MidiFile gen_label1(const SynthConfig& config, int index);
MidiFile gen_label0(const SynthConfig& config, int index);
MidiFile gen_piece(const SynthConfig& config, int label, int index);

/// Tempo used for a piece; both labels draw from the same range.
int synth_bpm(const SynthConfig& config, int label, int index);

struct ManifestEntry {
  std::string path;  // relative to the corpus directory
  int label = 0;
  std::uint64_t seed = 0;
  int index = 0;
  int bpm = 120;
};

/// Writes <dir>/label0/*.mid, <dir>/label1/*.mid and <dir>/manifest.jsonl.
std::vector<ManifestEntry> write_synth_corpus(const SynthConfig& config, const std::string& dir);

std::vector<ManifestEntry> read_manifest(const std::string& dir);

}  // namespace melodyclf
