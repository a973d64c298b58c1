/// @file
/// @brief Standard MIDI File (format 0/1) reading and writing.
///
/// Parsing resolves running status and rewrites note-on with velocity 0 as
/// an explicit note-off, so a parsed file is already in the canonical form
/// that write_smf emits. Meta and sysex payloads the library does not
/// interpret are kept as opaque bytes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "melodyclf/error.h"

namespace melodyclf {

inline constexpr std::uint8_t kMetaStatus = 0xFF;
inline constexpr std::uint8_t kSysexStatus = 0xF0;
inline constexpr std::uint8_t kSysexEscapeStatus = 0xF7;

inline constexpr std::uint8_t kMetaEndOfTrack = 0x2F;
inline constexpr std::uint8_t kMetaTempo = 0x51;
inline constexpr std::uint8_t kMetaTimeSignature = 0x58;

inline constexpr int kDefaultMicrosPerQuarter = 500000;
inline constexpr std::uint32_t kMaxVlq = (1u << 28) - 1;

/// One timed track event.
///
/// `status` is the full status byte: 0x8n..0xEn for channel messages,
/// kMetaStatus for meta events, 0xF0/0xF7 for sysex. For meta events
/// `meta_type` holds the type byte. `data` holds the channel data bytes or
/// the meta/sysex payload (without its length prefix).
struct MidiEvent {
  std::int64_t delta = 0;
  std::uint8_t status = 0;
  std::uint8_t meta_type = 0;
  std::vector<std::uint8_t> data;

  bool is_meta() const { return status == kMetaStatus; }
  bool is_meta(std::uint8_t type) const { return is_meta() && meta_type == type; }
  bool is_channel() const { return status >= 0x80 && status < 0xF0; }
  int channel() const { return status & 0x0F; }
  int kind() const { return status & 0xF0; }
  bool is_note_on() const { return kind() == 0x90 && data.size() == 2 && data[1] > 0; }
  bool is_note_off() const {
    return kind() == 0x80 || (kind() == 0x90 && data.size() == 2 && data[1] == 0);
  }

  static MidiEvent note_on(std::int64_t delta, int channel, int pitch, int velocity);
  static MidiEvent note_off(std::int64_t delta, int channel, int pitch);
  static MidiEvent tempo(std::int64_t delta, int micros_per_quarter);
  /// `denominator_pow2` is the SMF encoding: 2 means a quarter-note beat.
  static MidiEvent time_signature(std::int64_t delta, int numerator, int denominator_pow2);
  static MidiEvent end_of_track(std::int64_t delta);

  bool operator==(const MidiEvent&) const = default;
};

struct TrackChunk {
  std::vector<MidiEvent> events;

  bool operator==(const TrackChunk&) const = default;
};

struct MidiFile {
  int format = 0;
  int ppq = 480;
  std::vector<TrackChunk> tracks;

  bool operator==(const MidiFile&) const = default;
};

struct NoteEvent {
  int pitch = 60;
  std::int64_t onset_ticks = 0;
  std::int64_t duration_ticks = 1;
  int channel = 0;

  bool operator==(const NoteEvent&) const = default;
};

/// Tempo changes keyed by tick; lookups before the first entry fall back to
/// 120 BPM.
class TempoMap {
 public:
  struct Entry {
    std::int64_t tick = 0;
    int micros_per_quarter = kDefaultMicrosPerQuarter;

    bool operator==(const Entry&) const = default;
  };

  TempoMap() : entries_{{0, kDefaultMicrosPerQuarter}} {}
  /// Entries must have strictly increasing ticks and positive tempi.
  explicit TempoMap(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const { return entries_; }
  int micros_per_quarter_at(std::int64_t tick) const;
  double bpm_at(std::int64_t tick) const { return 60'000'000.0 / micros_per_quarter_at(tick); }

  bool operator==(const TempoMap&) const = default;

 private:
  std::vector<Entry> entries_;
};

struct TimeSignature {
  std::int64_t tick = 0;
  int numerator = 4;
  int denominator_pow2 = 2;

  /// Bar length in quarter notes (6/8 -> 3.0).
  double beats_per_bar() const;

  bool operator==(const TimeSignature&) const = default;
};

struct ExtractedNotes {
  std::vector<NoteEvent> notes;
  TempoMap tempo;
  std::vector<TimeSignature> time_signatures;
};

struct Vlq {
  std::uint32_t value = 0;
  std::size_t next_offset = 0;
};

Vlq read_vlq(std::span<const std::uint8_t> bytes, std::size_t offset);
/// Minimal-length encoding; value must be <= kMaxVlq.
void write_vlq(std::uint32_t value, std::vector<std::uint8_t>& out);

/// Dangling note-ons are closed at their track's End-of-Track and reported
/// through `diag`; a track missing End-of-Track gets one appended.
MidiFile parse_smf(std::span<const std::uint8_t> bytes, Diagnostics* diag = nullptr);

std::vector<std::uint8_t> write_smf(const MidiFile& file);

ExtractedNotes extract_notes(const MidiFile& file, Diagnostics* diag = nullptr);

/// Builds a melody file from tick-domain notes. Format 0 puts tempo, meter
/// and notes in one track; format 1 puts tempo and meter in a conductor
/// track followed by one note track.
struct MelodyFileSpec {
  int format = 0;
  int ppq = 480;
  int micros_per_quarter = kDefaultMicrosPerQuarter;
  int numerator = 4;
  int denominator_pow2 = 2;
  int velocity = 100;
};

MidiFile build_melody_file(std::span<const NoteEvent> notes, const MelodyFileSpec& spec);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace melodyclf
