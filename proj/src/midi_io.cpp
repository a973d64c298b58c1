/// @file
/// @brief SMF parser and canonical writer.

#include "melodyclf/midi_io.h"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

namespace melodyclf {

// ---------------------------------------------------------------------------
// Events, tempo map, meter
// ---------------------------------------------------------------------------

MidiEvent MidiEvent::note_on(std::int64_t delta, int channel, int pitch, int velocity) {
  return {delta, static_cast<std::uint8_t>(0x90 | (channel & 0x0F)), 0,
          {static_cast<std::uint8_t>(pitch), static_cast<std::uint8_t>(velocity)}};
}

MidiEvent MidiEvent::note_off(std::int64_t delta, int channel, int pitch) {
  return {delta, static_cast<std::uint8_t>(0x80 | (channel & 0x0F)), 0,
          {static_cast<std::uint8_t>(pitch), 0}};
}

MidiEvent MidiEvent::tempo(std::int64_t delta, int micros_per_quarter) {
  const auto v = static_cast<std::uint32_t>(micros_per_quarter);
  return {delta, kMetaStatus, kMetaTempo,
          {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
           static_cast<std::uint8_t>(v)}};
}

MidiEvent MidiEvent::time_signature(std::int64_t delta, int numerator, int denominator_pow2) {
  return {delta, kMetaStatus, kMetaTimeSignature,
          {static_cast<std::uint8_t>(numerator), static_cast<std::uint8_t>(denominator_pow2), 24,
           8}};
}

MidiEvent MidiEvent::end_of_track(std::int64_t delta) {
  return {delta, kMetaStatus, kMetaEndOfTrack, {}};
}

TempoMap::TempoMap(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) {
    entries_.push_back({0, kDefaultMicrosPerQuarter});
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].micros_per_quarter <= 0) {
      throw Error(ErrorCode::InvariantViolation, "tempo must be positive");
    }
    if (i > 0 && entries_[i].tick <= entries_[i - 1].tick) {
      throw Error(ErrorCode::InvariantViolation, "tempo ticks must be strictly increasing");
    }
  }
}

int TempoMap::micros_per_quarter_at(std::int64_t tick) const {
  auto it = std::upper_bound(entries_.begin(), entries_.end(), tick,
                             [](std::int64_t t, const Entry& e) { return t < e.tick; });
  if (it == entries_.begin()) {
    return kDefaultMicrosPerQuarter;
  }
  return std::prev(it)->micros_per_quarter;
}

double TimeSignature::beats_per_bar() const {
  return numerator * 4.0 / static_cast<double>(1 << denominator_pow2);
}

// ---------------------------------------------------------------------------
// VLQ
// ---------------------------------------------------------------------------

Vlq read_vlq(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    if (offset >= bytes.size()) {
      throw Error(ErrorCode::TruncatedInput, "input ends inside a variable-length quantity");
    }
    const std::uint8_t b = bytes[offset++];
    value = (value << 7) | (b & 0x7F);
    if ((b & 0x80) == 0) {
      return {value, offset};
    }
  }
  throw Error(ErrorCode::UnterminatedVlq, "variable-length quantity longer than 4 bytes");
}

void write_vlq(std::uint32_t value, std::vector<std::uint8_t>& out) {
  if (value > kMaxVlq) {
    throw Error(ErrorCode::InvariantViolation, "value exceeds 28-bit VLQ range");
  }
  std::array<std::uint8_t, 4> buf{};
  int n = 0;
  do {
    buf[n++] = static_cast<std::uint8_t>(value & 0x7F);
    value >>= 7;
  } while (value != 0);
  for (int i = n - 1; i >= 0; --i) {
    out.push_back(static_cast<std::uint8_t>(buf[i] | (i > 0 ? 0x80 : 0x00)));
  }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint32_t v = 0;
  for (int i = 0; i < width; ++i) {
    v = (v << 8) | bytes[offset + i];
  }
  return v;
}

bool has_tag(std::span<const std::uint8_t> bytes, std::size_t offset, const char* tag) {
  return offset + 4 <= bytes.size() &&
         std::equal(tag, tag + 4, bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
}

int channel_data_length(std::uint8_t status) {
  const int kind = status & 0xF0;
  return (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
}

std::vector<std::uint8_t> take(std::span<const std::uint8_t> chunk, std::size_t& pos,
                               std::size_t n) {
  if (pos + n > chunk.size()) {
    throw Error(ErrorCode::TruncatedChunk, "event payload runs past the end of its track");
  }
  std::vector<std::uint8_t> out(chunk.begin() + static_cast<std::ptrdiff_t>(pos),
                                chunk.begin() + static_cast<std::ptrdiff_t>(pos + n));
  pos += n;
  return out;
}

Vlq read_vlq_in_chunk(std::span<const std::uint8_t> chunk, std::size_t pos) {
  try {
    return read_vlq(chunk, pos);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TruncatedInput) {
      throw Error(ErrorCode::TruncatedChunk, "track ends inside a variable-length quantity");
    }
    throw;
  }
}

TrackChunk parse_track(std::span<const std::uint8_t> chunk, int track_index, Diagnostics* diag) {
  TrackChunk track;
  std::size_t pos = 0;
  std::uint8_t running = 0;
  // Open note count per (channel, pitch) so dangling note-ons can be closed.
  std::map<std::pair<int, int>, int> open;
  bool ended = false;

  while (pos < chunk.size()) {
    const Vlq delta = read_vlq_in_chunk(chunk, pos);
    pos = delta.next_offset;
    if (pos >= chunk.size()) {
      throw Error(ErrorCode::TruncatedChunk, "track ends after a delta-time");
    }

    MidiEvent ev;
    ev.delta = delta.value;
    std::uint8_t status = chunk[pos];
    if (status < 0x80) {
      if (running == 0) {
        throw Error(ErrorCode::MalformedEvent, "data byte without running status");
      }
      status = running;
    } else {
      ++pos;
    }
    ev.status = status;

    if (status == kMetaStatus) {
      if (pos >= chunk.size()) {
        throw Error(ErrorCode::TruncatedChunk, "meta event without type");
      }
      ev.meta_type = chunk[pos++];
      const Vlq len = read_vlq_in_chunk(chunk, pos);
      pos = len.next_offset;
      ev.data = take(chunk, pos, len.value);
      if (ev.meta_type == kMetaEndOfTrack) {
        ended = true;
        track.events.push_back(std::move(ev));
        break;
      }
    } else if (status == kSysexStatus || status == kSysexEscapeStatus) {
      const Vlq len = read_vlq_in_chunk(chunk, pos);
      pos = len.next_offset;
      ev.data = take(chunk, pos, len.value);
    } else if (status >= 0xF0) {
      throw Error(ErrorCode::MalformedEvent, "system message inside a track");
    } else {
      running = status;
      ev.data = take(chunk, pos, static_cast<std::size_t>(channel_data_length(status)));
      for (std::uint8_t b : ev.data) {
        if (b >= 0x80) {
          throw Error(ErrorCode::MalformedEvent, "channel data byte has its high bit set");
        }
      }
      if (ev.kind() == 0x90 && ev.data[1] == 0) {
        ev.status = static_cast<std::uint8_t>(0x80 | ev.channel());
      }
      const std::pair<int, int> key{ev.channel(), ev.data[0]};
      if (ev.is_note_on()) {
        ++open[key];
      } else if (ev.kind() == 0x80) {
        auto it = open.find(key);
        if (it != open.end() && --it->second == 0) {
          open.erase(it);
        }
      }
    }
    track.events.push_back(std::move(ev));
  }

  if (!ended) {
    warn(diag, "MissingEndOfTrack",
         "track " + std::to_string(track_index) + " has no End-of-Track; appended");
    track.events.push_back(MidiEvent::end_of_track(0));
  }

  if (!open.empty()) {
    MidiEvent eot = std::move(track.events.back());
    track.events.pop_back();
    std::int64_t delta = eot.delta;
    for (const auto& [key, count] : open) {
      for (int i = 0; i < count; ++i) {
        warn(diag, "DanglingNoteOn",
             "track " + std::to_string(track_index) + " channel " + std::to_string(key.first) +
                 " pitch " + std::to_string(key.second) + " closed at End-of-Track");
        track.events.push_back(MidiEvent::note_off(delta, key.first, key.second));
        delta = 0;
      }
    }
    eot.delta = delta;
    track.events.push_back(std::move(eot));
  }
  return track;
}

}  // namespace

MidiFile parse_smf(std::span<const std::uint8_t> bytes, Diagnostics* diag) {
  if (!has_tag(bytes, 0, "MThd")) {
    throw Error(ErrorCode::BadMagic, "missing MThd header");
  }
  if (bytes.size() < 14) {
    throw Error(ErrorCode::TruncatedChunk, "header chunk shorter than 14 bytes");
  }
  const std::uint32_t header_len = read_be(bytes, 4, 4);
  if (header_len < 6 || 8 + static_cast<std::uint64_t>(header_len) > bytes.size()) {
    throw Error(ErrorCode::TruncatedChunk, "header chunk length is invalid");
  }

  MidiFile file;
  file.format = static_cast<int>(read_be(bytes, 8, 2));
  const std::uint32_t ntracks = read_be(bytes, 10, 2);
  const std::uint32_t division = read_be(bytes, 12, 2);
  if (file.format == 2) {
    throw Error(ErrorCode::UnsupportedFormat, "format 2 files are not supported");
  }
  if (file.format != 0 && file.format != 1) {
    throw Error(ErrorCode::UnsupportedFormat, "unknown SMF format " + std::to_string(file.format));
  }
  if ((division & 0x8000) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, "SMPTE time division is not supported");
  }
  if (division == 0) {
    throw Error(ErrorCode::UnsupportedFormat, "ticks per quarter note must be positive");
  }
  file.ppq = static_cast<int>(division);

  std::size_t pos = 8 + header_len;
  while (file.tracks.size() < ntracks && pos < bytes.size()) {
    if (pos + 8 > bytes.size()) {
      throw Error(ErrorCode::TruncatedChunk, "chunk header cut short");
    }
    const std::uint64_t len = read_be(bytes, pos + 4, 4);
    if (pos + 8 + len > bytes.size()) {
      throw Error(ErrorCode::TruncatedChunk, "chunk length exceeds file size");
    }
    const auto body = bytes.subspan(pos + 8, static_cast<std::size_t>(len));
    if (has_tag(bytes, pos, "MTrk")) {
      file.tracks.push_back(parse_track(body, static_cast<int>(file.tracks.size()), diag));
    }
    pos += 8 + static_cast<std::size_t>(len);
  }
  if (file.tracks.size() < ntracks) {
    throw Error(ErrorCode::TruncatedChunk, "header declares " + std::to_string(ntracks) +
                                               " tracks but " +
                                               std::to_string(file.tracks.size()) + " present");
  }
  return file;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int width) {
  for (int i = width - 1; i >= 0; --i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

void write_event(const MidiEvent& ev, std::vector<std::uint8_t>& out) {
  if (ev.delta < 0 || ev.delta > kMaxVlq) {
    throw Error(ErrorCode::InvariantViolation, "delta-time out of range");
  }
  write_vlq(static_cast<std::uint32_t>(ev.delta), out);
  if (ev.is_meta()) {
    out.push_back(kMetaStatus);
    out.push_back(ev.meta_type);
    write_vlq(static_cast<std::uint32_t>(ev.data.size()), out);
    out.insert(out.end(), ev.data.begin(), ev.data.end());
  } else if (ev.status == kSysexStatus || ev.status == kSysexEscapeStatus) {
    out.push_back(ev.status);
    write_vlq(static_cast<std::uint32_t>(ev.data.size()), out);
    out.insert(out.end(), ev.data.begin(), ev.data.end());
  } else if (ev.is_channel()) {
    if (ev.data.size() != static_cast<std::size_t>(channel_data_length(ev.status)) ||
        std::any_of(ev.data.begin(), ev.data.end(), [](std::uint8_t b) { return b >= 0x80; })) {
      throw Error(ErrorCode::InvariantViolation, "malformed channel message");
    }
    std::uint8_t status = ev.status;
    if (ev.kind() == 0x90 && ev.data[1] == 0) {
      status = static_cast<std::uint8_t>(0x80 | ev.channel());
    }
    out.push_back(status);
    out.insert(out.end(), ev.data.begin(), ev.data.end());
  } else {
    throw Error(ErrorCode::InvariantViolation, "unsupported status byte");
  }
}

}  // namespace

std::vector<std::uint8_t> write_smf(const MidiFile& file) {
  if (file.ppq <= 0 || file.ppq > 0x7FFF) {
    throw Error(ErrorCode::InvariantViolation, "ppq must be in 1..32767");
  }
  if (file.format != 0 && file.format != 1) {
    throw Error(ErrorCode::InvariantViolation, "format must be 0 or 1");
  }
  if (file.tracks.size() > 0xFFFF) {
    throw Error(ErrorCode::InvariantViolation, "too many tracks");
  }

  std::vector<std::uint8_t> out;
  put_tag(out, "MThd");
  put_be(out, 6, 4);
  put_be(out, static_cast<std::uint32_t>(file.format), 2);
  put_be(out, static_cast<std::uint32_t>(file.tracks.size()), 2);
  put_be(out, static_cast<std::uint32_t>(file.ppq), 2);

  for (const TrackChunk& track : file.tracks) {
    if (track.events.empty() || !track.events.back().is_meta(kMetaEndOfTrack)) {
      throw Error(ErrorCode::InvariantViolation, "track must end with End-of-Track");
    }
    std::vector<std::uint8_t> body;
    for (std::size_t i = 0; i < track.events.size(); ++i) {
      if (i + 1 < track.events.size() && track.events[i].is_meta(kMetaEndOfTrack)) {
        throw Error(ErrorCode::InvariantViolation, "End-of-Track before the last event");
      }
      write_event(track.events[i], body);
    }
    put_tag(out, "MTrk");
    put_be(out, static_cast<std::uint32_t>(body.size()), 4);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Note extraction
// ---------------------------------------------------------------------------

ExtractedNotes extract_notes(const MidiFile& file, Diagnostics* diag) {
  ExtractedNotes result;
  std::vector<TempoMap::Entry> tempi;

  for (std::size_t ti = 0; ti < file.tracks.size(); ++ti) {
    std::map<std::pair<int, int>, std::deque<std::int64_t>> open;
    std::int64_t tick = 0;
    auto close = [&](int channel, int pitch, std::int64_t onset, std::int64_t end) {
      if (end - onset <= 0) {
        warn(diag, "ZeroLengthNote",
             "dropped pitch " + std::to_string(pitch) + " at tick " + std::to_string(onset));
        return;
      }
      result.notes.push_back({pitch, onset, end - onset, channel});
    };

    for (const MidiEvent& ev : file.tracks[ti].events) {
      tick += ev.delta;
      if (ev.is_note_on()) {
        open[{ev.channel(), ev.data[0]}].push_back(tick);
      } else if (ev.is_channel() && ev.is_note_off()) {
        auto it = open.find({ev.channel(), ev.data[0]});
        if (it == open.end() || it->second.empty()) {
          warn(diag, "OrphanNoteOff",
               "note-off without note-on for pitch " + std::to_string(ev.data[0]));
          continue;
        }
        close(ev.channel(), ev.data[0], it->second.front(), tick);
        it->second.pop_front();
      } else if (ev.is_meta(kMetaTempo) && ev.data.size() >= 3) {
        const auto us = static_cast<int>((ev.data[0] << 16) | (ev.data[1] << 8) | ev.data[2]);
        if (us <= 0) {
          warn(diag, "BadTempo", "zero tempo ignored");
          continue;
        }
        tempi.push_back({tick, us});
      } else if (ev.is_meta(kMetaTimeSignature) && ev.data.size() >= 2) {
        result.time_signatures.push_back({tick, ev.data[0], ev.data[1]});
      }
    }
    for (auto& [key, onsets] : open) {
      for (std::int64_t onset : onsets) {
        warn(diag, "DanglingNoteOn",
             "pitch " + std::to_string(key.second) + " closed at end of track");
        close(key.first, key.second, onset, tick);
      }
    }
  }

  if (result.notes.empty()) {
    throw Error(ErrorCode::NoNotes, "file contains no notes");
  }
  std::stable_sort(result.notes.begin(), result.notes.end(),
                   [](const NoteEvent& a, const NoteEvent& b) {
                     if (a.onset_ticks != b.onset_ticks) return a.onset_ticks < b.onset_ticks;
                     if (a.pitch != b.pitch) return a.pitch < b.pitch;
                     return a.channel < b.channel;
                   });

  // Same-tick tempo events: the later one (in track order) wins.
  std::stable_sort(tempi.begin(), tempi.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  std::vector<TempoMap::Entry> merged;
  for (const auto& e : tempi) {
    if (!merged.empty() && merged.back().tick == e.tick) {
      merged.back() = e;
    } else {
      merged.push_back(e);
    }
  }
  if (merged.empty() || merged.front().tick > 0) {
    merged.insert(merged.begin(), {0, kDefaultMicrosPerQuarter});
  }
  result.tempo = TempoMap(std::move(merged));

  std::stable_sort(result.time_signatures.begin(), result.time_signatures.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  return result;
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

MidiFile build_melody_file(std::span<const NoteEvent> notes, const MelodyFileSpec& spec) {
  struct Timed {
    std::int64_t tick;
    int order;  // note-offs before note-ons at the same tick
    MidiEvent ev;
  };
  std::vector<Timed> timed;
  timed.reserve(notes.size() * 2);
  for (const NoteEvent& n : notes) {
    timed.push_back({n.onset_ticks, 1, MidiEvent::note_on(0, n.channel, n.pitch, spec.velocity)});
    timed.push_back({n.onset_ticks + n.duration_ticks, 0, MidiEvent::note_off(0, n.channel, n.pitch)});
  }
  std::stable_sort(timed.begin(), timed.end(), [](const Timed& a, const Timed& b) {
    return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
  });

  TrackChunk conductor;
  conductor.events.push_back(MidiEvent::tempo(0, spec.micros_per_quarter));
  conductor.events.push_back(
      MidiEvent::time_signature(0, spec.numerator, spec.denominator_pow2));

  TrackChunk melody;
  std::int64_t last = 0;
  for (Timed& t : timed) {
    t.ev.delta = t.tick - last;
    last = t.tick;
    melody.events.push_back(std::move(t.ev));
  }

  MidiFile file;
  file.format = spec.format;
  file.ppq = spec.ppq;
  if (spec.format == 0) {
    TrackChunk single = std::move(conductor);
    single.events.insert(single.events.end(), melody.events.begin(), melody.events.end());
    single.events.push_back(MidiEvent::end_of_track(0));
    file.tracks.push_back(std::move(single));
  } else {
    conductor.events.push_back(MidiEvent::end_of_track(0));
    melody.events.push_back(MidiEvent::end_of_track(0));
    file.tracks.push_back(std::move(conductor));
    file.tracks.push_back(std::move(melody));
  }
  return file;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot open " + path);
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::Io, "cannot write " + path);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::Io, "write failed for " + path);
  }
}

}  // namespace melodyclf
