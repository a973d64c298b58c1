#include "melodyclf/harness.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "melodyclf/rng.h"

namespace melodyclf {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot read " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) {
    throw Error(ErrorCode::Io, "cannot write " + path);
  }
}

// ---------------------------------------------------------------------------
// Split and metrics
// ---------------------------------------------------------------------------

SplitResult split(std::span<const int> labels, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::TooFewItems, "validation fraction must lie strictly between 0 and 1");
  }
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    strata[labels[i]].push_back(i);
  }
  if (strata.empty()) {
    throw Error(ErrorCode::TooFewItems, "nothing to split");
  }
  Rng rng(seed);
  SplitResult out;
  for (auto& [label, idx] : strata) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    const auto n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(idx.size()) * val_fraction));
    if (n_val == 0 || n_val == idx.size()) {
      throw Error(ErrorCode::TooFewItems,
                  "label " + std::to_string(label) + " would leave an empty partition");
    }
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

Metrics evaluate(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "predictions and labels differ in length");
  }
  if (preds.empty()) {
    throw Error(ErrorCode::LengthMismatch, "nothing to evaluate");
  }
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == 1;
    const bool y = labels[i] == 1;
    if (p && y) ++m.tp;
    else if (p && !y) ++m.fp;
    else if (!p && y) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  if (m.tp + m.fp > 0) {
    m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  } else {
    m.degenerate = true;
  }
  if (m.tp + m.fn > 0) {
    m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  } else {
    m.degenerate = true;
  }
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

std::string Metrics::to_json() const {
  ordered_json j;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["tp"] = tp;
  j["fp"] = fp;
  j["tn"] = tn;
  j["fn"] = fn;
  j["total"] = total();
  j["degenerate"] = degenerate;
  return j.dump();
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

namespace {

struct InputFile {
  std::string path;       // absolute or data_dir-relative, as opened
  std::string source_id;  // relative name
  int label = 0;
};

std::vector<InputFile> discover_inputs(const std::string& data_dir) {
  std::vector<InputFile> files;
  const fs::path root(data_dir);
  if (fs::exists(root / "manifest.jsonl")) {
    for (const ManifestEntry& e : read_manifest(data_dir)) {
      files.push_back({(root / e.path).string(), e.path, e.label});
    }
    return files;
  }
  for (int label = 0; label <= 1; ++label) {
    const fs::path sub = root / ("label" + std::to_string(label));
    if (!fs::is_directory(sub)) {
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(sub)) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".mid" || ext == ".midi")) {
        found.push_back(entry.path());
      }
    }
    std::sort(found.begin(), found.end());
    for (const fs::path& p : found) {
      files.push_back({p.string(), fs::relative(p, root).generic_string(), label});
    }
  }
  if (files.empty()) {
    throw Error(ErrorCode::Io, "no MIDI files found under " + data_dir);
  }
  return files;
}

ordered_json occupancy_json(const GridOccupancy& o) {
  ordered_json j;
  j["label0"] = o.label0;
  j["label1"] = o.label1;
  j["disparity"] = o.disparity;
  return j;
}

GridOccupancy occupancy_from_json(const ordered_json& j) {
  return {j.at("label0").get<double>(), j.at("label1").get<double>(),
          j.at("disparity").get<bool>()};
}

}  // namespace

std::string PrepareReport::to_json() const {
  ordered_json j;
  j["files"] = files;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  j["warnings"] = warnings;
  j["train"] = train;
  j["val"] = val;
  j["label0"] = label0;
  j["label1"] = label1;
  j["grid_step"] = grid_step;
  j["quantize"] = quantize;
  j["grid_occupancy"] = occupancy_json(occupancy);
  j["vocab_digest"] = vocab_digest;
  j["messages"] = messages;
  return j.dump(2);
}

PrepareReport PrepareReport::from_json(const std::string& text) {
  PrepareReport r;
  try {
    const ordered_json j = ordered_json::parse(text);
    r.files = j.at("files").get<int>();
    r.accepted = j.at("accepted").get<int>();
    r.rejected = j.at("rejected").get<int>();
    r.warnings = j.at("warnings").get<int>();
    r.train = j.at("train").get<int>();
    r.val = j.at("val").get<int>();
    r.label0 = j.at("label0").get<int>();
    r.label1 = j.at("label1").get<int>();
    r.grid_step = j.at("grid_step").get<double>();
    r.quantize = j.at("quantize").get<bool>();
    r.occupancy = occupancy_from_json(j.at("grid_occupancy"));
    r.vocab_digest = j.at("vocab_digest").get<std::string>();
    r.messages = j.value("messages", std::vector<std::string>{});
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad prepare report: ") + e.what());
  }
  return r;
}

PrepareReport run_prepare(const PrepareOptions& options) {
  const auto inputs = discover_inputs(options.data_dir);
  PrepareReport report;
  report.files = static_cast<int>(inputs.size());
  report.quantize = options.quantize;

  PreprocessOptions pre;
  pre.grid_step = options.grid_step;
  pre.quantize = options.quantize;

  std::vector<FeatureRecord> records;
  std::vector<int> labels;
  std::array<std::vector<double>, 2> onsets;
  std::optional<double> grid;
  std::optional<double> beats_per_bar;

  for (const InputFile& in : inputs) {
    Diagnostics diag;
    try {
      const MidiFile file = parse_smf(read_file_bytes(in.path), &diag);
      PreparedMelody m = preprocess_file(file, pre, in.source_id, &diag);
      if (!grid) grid = m.grid_step;
      if (!beats_per_bar) beats_per_bar = m.sequence.beats_per_bar;
      if (std::abs(*grid - m.grid_step) > kGridTolerance) {
        throw Error(ErrorCode::InvariantViolation, "tick resolution differs from earlier files");
      }
      if (std::abs(*beats_per_bar - m.sequence.beats_per_bar) > kGridTolerance) {
        throw Error(ErrorCode::MixedMeter, "bar length differs from earlier files");
      }
      auto& bucket = onsets[static_cast<std::size_t>(in.label)];
      bucket.insert(bucket.end(), m.onsets.begin(), m.onsets.end());
      records.push_back({std::move(m.sequence), in.label, {}});
      labels.push_back(in.label);
      (in.label == 1 ? report.label1 : report.label0) += 1;
    } catch (const Error& e) {
      ++report.rejected;
      report.messages.push_back(in.source_id + ": " + e.what());
    }
    report.warnings += static_cast<int>(diag.size());
    for (const Warning& w : diag) {
      report.messages.push_back(in.source_id + ": " + w.kind + ": " + w.message);
    }
  }
  report.accepted = static_cast<int>(records.size());
  if (records.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "no usable files under " + options.data_dir);
  }
  report.grid_step = *grid;
  report.occupancy.label0 = grid_occupancy(onsets[0], kOccupancyGrid);
  report.occupancy.label1 = grid_occupancy(onsets[1], kOccupancyGrid);
  report.occupancy.disparity =
      !onsets[0].empty() && !onsets[1].empty() &&
      std::abs(report.occupancy.label0 - report.occupancy.label1) > kGridDisparityThreshold;

  const SplitResult parts = split(labels, options.val_fraction, derive_seed(options.seed, "split"));
  std::vector<MelodySequence> train_corpus;
  for (std::size_t i : parts.train) {
    records[i].split = "train";
    train_corpus.push_back(records[i].sequence);
  }
  for (std::size_t i : parts.val) {
    records[i].split = "val";
  }
  report.train = static_cast<int>(parts.train.size());
  report.val = static_cast<int>(parts.val.size());

  const Vocabularies vocab = build_vocab(train_corpus, *grid, *beats_per_bar);
  report.vocab_digest = vocab.digest();

  fs::create_directories(options.out_dir);
  const fs::path out(options.out_dir);
  write_text_file((out / "vocab.json").string(), vocab.to_json() + "\n");
  std::string features;
  std::string encoded;
  for (const FeatureRecord& r : records) {
    features += to_feature_line(r) + "\n";
    encoded += to_encoded_line(encode_sequence(r.sequence, vocab, r.label)) + "\n";
  }
  write_text_file((out / "features.jsonl").string(), features);
  write_text_file((out / "encoded.jsonl").string(), encoded);
  write_text_file((out / "prepare_report.json").string(), report.to_json() + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// train / eval / predict
// ---------------------------------------------------------------------------

Vocabularies load_vocab(const std::string& path) {
  return Vocabularies::from_json(read_text_file(path));
}

std::vector<EncodedSequence> load_prepared_split(const std::string& data_dir,
                                                 const std::string& split_name,
                                                 const Vocabularies& vocab) {
  std::ifstream in(fs::path(data_dir) / "features.jsonl");
  if (!in) {
    throw Error(ErrorCode::Io, "cannot read features.jsonl in " + data_dir);
  }
  std::vector<EncodedSequence> seqs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const FeatureRecord r = parse_feature_line(line);
    if (split_name != "all" && r.split != split_name) {
      continue;
    }
    seqs.push_back(encode_sequence(r.sequence, vocab, r.label));
  }
  return pad_batch(std::move(seqs), vocab.max_len).sequences;
}

TrainReport run_train(const TrainOptions& options) {
  const fs::path data(options.data_dir);
  const Vocabularies vocab = load_vocab((data / "vocab.json").string());
  const auto train_set = load_prepared_split(options.data_dir, "train", vocab);
  const auto val_set = load_prepared_split(options.data_dir, "val", vocab);

  TrainReport report;
  if (fs::exists(data / "prepare_report.json")) {
    report.occupancy =
        PrepareReport::from_json(read_text_file((data / "prepare_report.json").string()))
            .occupancy;
  }

  fs::create_directories(options.out_dir);
  const fs::path out(options.out_dir);
  report.checkpoint_path = (out / "checkpoint.json").string();
  report.history_path = (out / "history.csv").string();

  auto on_epoch = [&](const EpochRecord& r) {
    if (options.verbose) {
      std::cerr << "epoch " << r.epoch << " train_loss " << r.train_loss << " train_acc "
                << r.train_acc << " val_loss " << r.val_loss << " val_acc " << r.val_acc << '\n';
    }
  };

  try {
    report.result = train(train_set, val_set, options.config, on_epoch);
  } catch (const TrainingDiverged& e) {
    write_text_file(report.checkpoint_path,
                    save_checkpoint(e.last_good().params, vocab.digest()) + "\n");
    write_text_file(report.history_path, history_csv(e.last_good().history));
    throw;
  }
  for (const EpochRecord& r : report.result.history) {
    if (r.epoch == report.result.best_epoch) {
      report.best_val_acc = r.val_acc;
    }
  }

  write_text_file(report.checkpoint_path,
                  save_checkpoint(report.result.params, vocab.digest()) + "\n");
  write_text_file(report.history_path, history_csv(report.result.history));

  ordered_json j;
  j["epochs_run"] = report.result.history.size();
  j["best_epoch"] = report.result.best_epoch;
  j["best_val_acc"] = report.best_val_acc;
  j["class_weights"] = report.result.class_weights;
  j["train_size"] = train_set.size();
  j["val_size"] = val_set.size();
  if (report.occupancy) {
    j["grid_occupancy"] = occupancy_json(*report.occupancy);
    if (report.occupancy->disparity) {
      j["warning"] =
          "onset grid occupancy differs between labels; the model can separate them by "
          "timing alone";
    }
  }
  write_text_file((out / "train_report.json").string(), j.dump(2) + "\n");
  return report;
}

Metrics run_eval(const EvalOptions& options) {
  const fs::path data(options.data_dir);
  const Vocabularies vocab = load_vocab((data / "vocab.json").string());
  const ModelParams params = load_checkpoint(read_text_file(options.checkpoint), vocab.digest());
  const auto seqs = load_prepared_split(options.data_dir, options.split, vocab);
  const auto preds = predict(params, seqs, options.threshold);
  std::vector<int> p;
  std::vector<int> y;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    p.push_back(preds[i].label);
    y.push_back(seqs[i].label.value_or(0));
  }
  return evaluate(p, y);
}

std::string FilePrediction::to_json() const {
  ordered_json j;
  j["path"] = path;
  if (prediction) {
    j["label"] = prediction->label;
    j["prob"] = prediction->prob;
  } else {
    j["error"] = error;
  }
  return j.dump();
}

std::vector<FilePrediction> run_predict(const PredictOptions& options) {
  const Vocabularies vocab = load_vocab(options.vocab);
  const ModelParams params = load_checkpoint(read_text_file(options.checkpoint), vocab.digest());
  PreprocessOptions pre;
  pre.grid_step = vocab.grid_step;
  pre.quantize = true;

  std::vector<FilePrediction> out;
  for (const std::string& path : options.inputs) {
    FilePrediction fp{path, std::nullopt, {}};
    try {
      const MidiFile file = parse_smf(read_file_bytes(path));
      const PreparedMelody m = preprocess_file(file, pre, path);
      if (std::abs(m.sequence.beats_per_bar - vocab.beats_per_bar) > kGridTolerance) {
        throw Error(ErrorCode::VocabMismatch, "bar length differs from the training data");
      }
      std::vector<EncodedSequence> one;
      one.push_back(encode_sequence(m.sequence, vocab));
      const Batch batch = pad_batch(std::move(one), vocab.max_len);
      fp.prediction = predict(params, batch.sequences, options.threshold).front();
    } catch (const Error& e) {
      fp.error = e.what();
    }
    out.push_back(std::move(fp));
  }
  return out;
}

std::string run_inspect(const std::string& path, const PreprocessOptions& options) {
  const MidiFile file = parse_smf(read_file_bytes(path));
  const PreparedMelody m = preprocess_file(file, options, path);
  std::ostringstream os;
  os << "# source " << path << '\n';
  os << "# ppq " << file.ppq << ", bpm " << format_beats(std::round(m.bpm * 1000.0) / 1000.0) << ", grid "
     << format_beats(m.grid_step) << ", " << format_beats(m.sequence.beats_per_bar)
     << " beats per bar\n";
  os << format_feature_matrix(m.sequence);
  return os.str();
}

}  // namespace melodyclf
