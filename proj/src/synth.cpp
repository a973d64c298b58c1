#include "melodyclf/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "melodyclf/rng.h"

namespace melodyclf {

void SynthConfig::validate() const {
  if (n_label0 < 0 || n_label1 < 0 || jitter_beats < 0.0 || bars <= 0 || ppq <= 0 ||
      bpm_min <= 0 || bpm_max < bpm_min || scale.empty() || label1_durations.empty() ||
      label1_durations.size() != label1_duration_weights.size() ||
      !(label0_min_duration > 0.0) || label0_max_duration < label0_min_duration ||
      label1_low > label1_high || label0_low > label0_high) {
    throw Error(ErrorCode::InvariantViolation, "invalid synth configuration");
  }
}

int synth_bpm(const SynthConfig& config, int label, int index) {
  Rng rng(derive_seed(config.seed, label == 1 ? "bpm.label1" : "bpm.label0",
                      static_cast<std::uint64_t>(index)));
  return rng.range(config.bpm_min, config.bpm_max);
}

namespace {

MelodyFileSpec file_spec(const SynthConfig& config, int label, int index) {
  MelodyFileSpec spec;
  spec.format = label == 1 ? 0 : 1;
  spec.ppq = config.ppq;
  spec.micros_per_quarter =
      static_cast<int>(std::lround(60'000'000.0 / synth_bpm(config, label, index)));
  return spec;
}

std::int64_t to_ticks(double beats, int ppq) { return std::llround(beats * ppq); }

int reflect(int value, int lo, int hi) {
  while (value < lo || value > hi) {
    value = value < lo ? 2 * lo - value : 2 * hi - value;
  }
  return value;
}

std::size_t weighted_pick(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double r = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    r -= weights[i];
    if (r < 0.0) return i;
  }
  return weights.size() - 1;
}

}  // namespace

MidiFile gen_label1(const SynthConfig& config, int index) {
  config.validate();
  Rng rng(derive_seed(config.seed, "label1", static_cast<std::uint64_t>(index)));
  std::vector<int> allowed;
  for (int p = config.label1_low; p <= config.label1_high; ++p) {
    if (std::find(config.scale.begin(), config.scale.end(), p % 12) != config.scale.end()) {
      allowed.push_back(p);
    }
  }
  const int top = static_cast<int>(allowed.size()) - 1;
  int degree = rng.range(top / 3, 2 * top / 3);

  const double total = config.bars * 4.0;
  const double shortest = *std::min_element(config.label1_durations.begin(),
                                            config.label1_durations.end());
  std::vector<NoteEvent> notes;
  double t = 0.0;
  while (total - t >= shortest) {
    if (t > 0.0 && rng.bernoulli(config.label1_rest_probability)) {
      t += shortest;
      continue;
    }
    double d = config.label1_durations[weighted_pick(rng, config.label1_duration_weights)];
    if (t + d > total) {
      d = shortest;
      for (double c : config.label1_durations) {
        if (c > d && t + c <= total) d = c;
      }
    }
    notes.push_back({allowed[static_cast<std::size_t>(degree)], to_ticks(t, config.ppq),
                     to_ticks(d, config.ppq), 0});
    degree = reflect(degree + rng.range(-2, 2), 0, top);
    t += d;
  }
  return build_melody_file(notes, file_spec(config, 1, index));
}

MidiFile gen_label0(const SynthConfig& config, int index) {
  config.validate();
  Rng rng(derive_seed(config.seed, "label0", static_cast<std::uint64_t>(index)));
  const double total = config.bars * 4.0;
  const std::int64_t end_tick = to_ticks(total, config.ppq);
  const double j = config.jitter_beats;

  struct Raw {
    int pitch;
    double onset;
    double duration;
  };
  std::vector<Raw> raw;
  int pitch = rng.range(std::max(config.label0_low, 60), std::min(config.label0_high, 72));
  double t = 0.0;
  while (t < total - config.label0_min_duration) {
    const double d = rng.uniform(config.label0_min_duration, config.label0_max_duration);
    const double onset = t == 0.0 ? rng.uniform(0.0, j) : t + rng.uniform(-j, j);
    raw.push_back({pitch, onset, d});
    pitch = reflect(pitch + rng.range(-config.label0_max_step, config.label0_max_step),
                    config.label0_low, config.label0_high);
    t += d;
  }

  std::vector<NoteEvent> notes;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::int64_t on = to_ticks(raw[i].onset, config.ppq);
    if (!notes.empty() && on <= notes.back().onset_ticks) {
      continue;
    }
    const std::int64_t next = i + 1 < raw.size() ? to_ticks(raw[i + 1].onset, config.ppq) : end_tick;
    const std::int64_t dur =
        std::min({to_ticks(raw[i].duration, config.ppq), next - on, end_tick - on});
    if (dur <= 0) {
      continue;
    }
    notes.push_back({raw[i].pitch, on, dur, 0});
  }
  return build_melody_file(notes, file_spec(config, 0, index));
}

MidiFile gen_piece(const SynthConfig& config, int label, int index) {
  return label == 1 ? gen_label1(config, index) : gen_label0(config, index);
}

std::vector<ManifestEntry> write_synth_corpus(const SynthConfig& config, const std::string& dir) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "label0");
  fs::create_directories(root / "label1");

  std::vector<ManifestEntry> entries;
  std::ofstream manifest(root / "manifest.jsonl", std::ios::trunc);
  if (!manifest) {
    throw Error(ErrorCode::Io, "cannot write manifest in " + dir);
  }
  for (int label = 0; label <= 1; ++label) {
    const int count = label == 0 ? config.n_label0 : config.n_label1;
    for (int i = 0; i < count; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "label%d/label%d_%05d.mid", label, label, i);
      const auto bytes = write_smf(gen_piece(config, label, i));
      write_file_bytes((root / name).string(), bytes);
      ManifestEntry e{name, label, config.seed, i, synth_bpm(config, label, i)};
      nlohmann::ordered_json j;
      j["path"] = e.path;
      j["label"] = e.label;
      j["seed"] = e.seed;
      j["index"] = e.index;
      j["bpm"] = e.bpm;
      manifest << j.dump() << '\n';
      entries.push_back(std::move(e));
    }
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& dir) {
  const std::filesystem::path path = std::filesystem::path(dir) / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot read " + path.string());
  }
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries.push_back({j.at("path").get<std::string>(), j.at("label").get<int>(),
                         j.value("seed", std::uint64_t{0}), j.value("index", 0),
                         j.value("bpm", 120)});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Io, "bad manifest line: " + std::string(e.what()));
    }
  }
  return entries;
}

}  // namespace melodyclf
