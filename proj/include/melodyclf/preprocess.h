/// @file
/// @brief Tick-domain notes to per-bar feature rows.
///
/// Pipeline: to_beats -> quantize -> enforce_monophony -> segment_bars.
/// Positions are measured from each bar's downbeat and durations in quarter
/// notes, so a bar of C4 E4 G4 C5 becomes
///
///   C4 0.0 1.0
///   E4 1.0 0.5
///   G4 1.5 0.5
///   C5 2.0 2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melodyclf/error.h"
#include "melodyclf/midi_io.h"

namespace melodyclf {

inline constexpr double kDefaultGridStep = 0.25;
inline constexpr double kDefaultBeatsPerBar = 4.0;
inline constexpr int kMelodyBars = 8;

/// Tolerance for "is this value a grid multiple" checks on quantized data.
inline constexpr double kGridTolerance = 1e-9;

struct BeatNote {
  int pitch = 60;
  double onset_beats = 0.0;
  double duration_beats = 1.0;

  bool operator==(const BeatNote&) const = default;
};

struct FeatureRow {
  int pitch = 60;
  double position = 0.0;
  double duration = 1.0;
  int bar = 0;

  bool operator==(const FeatureRow&) const = default;
};

struct MelodySequence {
  std::vector<FeatureRow> rows;
  std::string source_id;
  double beats_per_bar = kDefaultBeatsPerBar;
  /// Bars spanned, capped at kMelodyBars.
  int bars = 0;
  bool is_short = false;

  bool operator==(const MelodySequence&) const = default;
};

std::vector<BeatNote> to_beats(std::span<const NoteEvent> notes, int ppq);

/// Identical onsets keep the highest pitch; an overlapped note is cut at the
/// next onset.
std::vector<BeatNote> enforce_monophony(std::span<const BeatNote> notes);

/// Rounds onsets and durations to the nearest grid multiple, ties up.
/// Durations never drop below one grid step.
std::vector<BeatNote> quantize(std::span<const BeatNote> notes, double grid_step);
double snap_to_grid(double value, double grid_step);
bool on_grid(double value, double grid_step);

MelodySequence segment_bars(std::span<const BeatNote> notes, double beats_per_bar,
                            std::string source_id = {});

/// Bar length declared by the file's time-signature events (4/4 if none).
/// Throws MixedMeter if the file declares more than one meter.
double beats_per_bar_of(std::span<const TimeSignature> signatures);

struct PreprocessOptions {
  double grid_step = kDefaultGridStep;
  /// When false the grid is the file's own tick resolution (1/ppq), which
  /// leaves every event where the file put it.
  bool quantize = true;
};

struct PreparedMelody {
  MelodySequence sequence;
  double bpm = 120.0;
  double grid_step = kDefaultGridStep;
  /// Global onsets (beats) after preprocessing, in row order.
  std::vector<double> onsets;
};

/// Grid actually used for a file with the given resolution.
double effective_grid(const PreprocessOptions& options, int ppq);

PreparedMelody preprocess_file(const MidiFile& file, const PreprocessOptions& options,
                               std::string source_id, Diagnostics* diag = nullptr);

/// "C4" for 60, "C#4" for 61.
std::string pitch_name(int pitch);

/// Shortest round-trip decimal with at least one fractional digit ("2.0").
std::string format_beats(double value);

/// Human-readable feature matrix, one "(C4, 0.0, 1.0)" line per row with a
/// bar header line before each bar.
std::string format_feature_matrix(const MelodySequence& sequence);

/// Fraction of onsets that are multiples of `grid_step`.
double grid_occupancy(std::span<const double> onsets, double grid_step);

// ---------------------------------------------------------------------------
// features.jsonl
// ---------------------------------------------------------------------------

/// One line of features.jsonl:
///   {"source_id": ..., "bars": 8, "short": false, "beats_per_bar": 4.0,
///    "label": 1, "split": "train", "rows": [[pitch, position, duration], ...],
///    "bar_index": [0, 0, 1, ...]}
/// `label` and `split` are omitted when unknown.
struct FeatureRecord {
  MelodySequence sequence;
  std::optional<int> label;
  std::string split;
};

std::string to_feature_line(const FeatureRecord& record);
FeatureRecord parse_feature_line(const std::string& line);

}  // namespace melodyclf
