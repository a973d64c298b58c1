#include "melodyclf/preprocess.h"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <utility>

namespace melodyclf {

std::vector<BeatNote> to_beats(std::span<const NoteEvent> notes, int ppq) {
  if (ppq <= 0) {
    throw Error(ErrorCode::InvariantViolation, "ppq must be positive");
  }
  const auto q = static_cast<double>(ppq);
  std::vector<BeatNote> out;
  out.reserve(notes.size());
  for (const NoteEvent& n : notes) {
    out.push_back({n.pitch, static_cast<double>(n.onset_ticks) / q,
                   static_cast<double>(n.duration_ticks) / q});
  }
  return out;
}

std::vector<BeatNote> enforce_monophony(std::span<const BeatNote> notes) {
  std::vector<BeatNote> sorted(notes.begin(), notes.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const BeatNote& a, const BeatNote& b) {
    return a.onset_beats != b.onset_beats ? a.onset_beats < b.onset_beats : a.pitch > b.pitch;
  });

  std::vector<BeatNote> kept;
  kept.reserve(sorted.size());
  for (const BeatNote& n : sorted) {
    if (!kept.empty() && kept.back().onset_beats == n.onset_beats) {
      continue;
    }
    kept.push_back(n);
  }

  std::vector<BeatNote> out;
  out.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    BeatNote n = kept[i];
    if (i + 1 < kept.size()) {
      n.duration_beats = std::min(n.duration_beats, kept[i + 1].onset_beats - n.onset_beats);
    }
    if (n.duration_beats > 0.0) {
      out.push_back(n);
    }
  }
  if (out.empty()) {
    throw Error(ErrorCode::EmptyAfterEnforcement, "no notes left after monophony enforcement");
  }
  return out;
}

double snap_to_grid(double value, double grid_step) {
  return std::floor(value / grid_step + 0.5) * grid_step;
}

bool on_grid(double value, double grid_step) {
  return std::abs(value - std::round(value / grid_step) * grid_step) <= kGridTolerance;
}

std::vector<BeatNote> quantize(std::span<const BeatNote> notes, double grid_step) {
  if (!(grid_step > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "grid step must be positive");
  }
  std::vector<BeatNote> out;
  out.reserve(notes.size());
  for (const BeatNote& n : notes) {
    out.push_back({n.pitch, snap_to_grid(n.onset_beats, grid_step),
                   std::max(snap_to_grid(n.duration_beats, grid_step), grid_step)});
  }
  return out;
}

MelodySequence segment_bars(std::span<const BeatNote> notes, double beats_per_bar,
                            std::string source_id) {
  if (!(beats_per_bar > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "beats per bar must be positive");
  }
  double end = 0.0;
  for (const BeatNote& n : notes) {
    end = std::max(end, n.onset_beats + n.duration_beats);
  }
  if (notes.empty() || end < beats_per_bar - kGridTolerance) {
    throw Error(ErrorCode::TooShort, "melody spans less than one bar");
  }

  MelodySequence seq;
  seq.source_id = std::move(source_id);
  seq.beats_per_bar = beats_per_bar;
  for (const BeatNote& n : notes) {
    const int bar = static_cast<int>(std::floor(n.onset_beats / beats_per_bar + kGridTolerance));
    if (bar >= kMelodyBars) {
      continue;
    }
    const double position = std::max(0.0, n.onset_beats - bar * beats_per_bar);
    seq.rows.push_back({n.pitch, position, n.duration_beats, bar});
  }
  std::stable_sort(seq.rows.begin(), seq.rows.end(), [](const FeatureRow& a, const FeatureRow& b) {
    return a.bar != b.bar ? a.bar < b.bar : a.position < b.position;
  });
  seq.bars = std::min(kMelodyBars,
                      static_cast<int>(std::ceil(end / beats_per_bar - kGridTolerance)));
  seq.is_short = seq.bars < kMelodyBars;
  return seq;
}

double beats_per_bar_of(std::span<const TimeSignature> signatures) {
  std::set<std::pair<int, int>> meters;
  for (const TimeSignature& ts : signatures) {
    meters.insert({ts.numerator, ts.denominator_pow2});
  }
  if (meters.size() > 1) {
    throw Error(ErrorCode::MixedMeter, "file changes time signature");
  }
  if (meters.empty()) {
    return kDefaultBeatsPerBar;
  }
  const TimeSignature ts{0, meters.begin()->first, meters.begin()->second};
  if (ts.numerator <= 0 || ts.denominator_pow2 > 6) {
    throw Error(ErrorCode::InvariantViolation, "invalid time signature");
  }
  return ts.beats_per_bar();
}

double effective_grid(const PreprocessOptions& options, int ppq) {
  return options.quantize ? options.grid_step : 1.0 / static_cast<double>(ppq);
}

PreparedMelody preprocess_file(const MidiFile& file, const PreprocessOptions& options,
                               std::string source_id, Diagnostics* diag) {
  const ExtractedNotes extracted = extract_notes(file, diag);
  const double beats_per_bar = beats_per_bar_of(extracted.time_signatures);

  PreparedMelody out;
  out.grid_step = effective_grid(options, file.ppq);
  out.bpm = extracted.tempo.bpm_at(extracted.notes.front().onset_ticks);

  const auto beats = to_beats(extracted.notes, file.ppq);
  const auto snapped = quantize(beats, out.grid_step);
  const auto mono = enforce_monophony(snapped);
  out.sequence = segment_bars(mono, beats_per_bar, std::move(source_id));
  out.onsets.reserve(out.sequence.rows.size());
  for (const FeatureRow& row : out.sequence.rows) {
    out.onsets.push_back(row.bar * beats_per_bar + row.position);
  }
  return out;
}

std::string pitch_name(int pitch) {
  static constexpr std::array<const char*, 12> kNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                         "F#", "G",  "G#", "A",  "A#", "B"};
  const int octave = pitch / 12 - 1;
  return std::string(kNames[static_cast<std::size_t>(pitch % 12)]) + std::to_string(octave);
}

std::string format_beats(double value) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  std::string s(buf.data(), res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) {
    s += ".0";
  }
  return s;
}

std::string format_feature_matrix(const MelodySequence& sequence) {
  std::ostringstream os;
  int bar = -1;
  for (const FeatureRow& row : sequence.rows) {
    if (row.bar != bar) {
      bar = row.bar;
      os << "# bar " << bar << '\n';
    }
    os << '(' << pitch_name(row.pitch) << ", " << format_beats(row.position) << ", "
       << format_beats(row.duration) << ")\n";
  }
  return os.str();
}

double grid_occupancy(std::span<const double> onsets, double grid_step) {
  if (onsets.empty()) {
    return 0.0;
  }
  const auto hits = std::count_if(onsets.begin(), onsets.end(),
                                  [&](double v) { return on_grid(v, grid_step); });
  return static_cast<double>(hits) / static_cast<double>(onsets.size());
}

}  // namespace melodyclf
