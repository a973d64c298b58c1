/// @file
/// @brief Dataset splitting, metrics and the end-to-end pipeline stages
/// behind the command-line tool.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melodyclf/encode.h"
#include "melodyclf/model.h"
#include "melodyclf/preprocess.h"
#include "melodyclf/synth.h"

namespace melodyclf {

// ---------------------------------------------------------------------------
// Split and metrics
// ---------------------------------------------------------------------------

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified by label; each index list is ascending.
SplitResult split(std::span<const int> labels, double val_fraction, std::uint64_t seed);

/// Label 1 is the positive class. Precision and recall are 0 when their
/// denominator is 0, and `degenerate` records that it happened.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;
  bool degenerate = false;

  long total() const { return tp + fp + tn + fn; }
  std::string to_json() const;
};

Metrics evaluate(std::span<const int> preds, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDiverged = 3 };

struct GridOccupancy {
  double label0 = 0.0;
  double label1 = 0.0;
  /// Set when the labels differ by more than kGridDisparityThreshold, i.e.
  /// onset grid alignment alone separates the classes.
  bool disparity = false;
};

inline constexpr double kGridDisparityThreshold = 0.05;
/// Grid used to measure occupancy, independent of the encoding grid.
inline constexpr double kOccupancyGrid = 0.25;

struct PrepareOptions {
  std::string data_dir;
  std::string out_dir;
  std::uint64_t seed = 42;
  double grid_step = kDefaultGridStep;
  bool quantize = true;
  double val_fraction = 0.4;
};

struct PrepareReport {
  int files = 0;
  int accepted = 0;
  int rejected = 0;
  int warnings = 0;
  int train = 0;
  int val = 0;
  int label0 = 0;
  int label1 = 0;
  GridOccupancy occupancy;
  double grid_step = kDefaultGridStep;
  bool quantize = true;
  std::string vocab_digest;
  std::vector<std::string> messages;

  std::string to_json() const;
  static PrepareReport from_json(const std::string& text);
};

/// Parses every file under data_dir (manifest.jsonl, or label0/ and label1/
/// subdirectories), preprocesses, splits, builds the vocabulary on the
/// training split and writes vocab.json, features.jsonl, encoded.jsonl and
/// prepare_report.json to out_dir.
PrepareReport run_prepare(const PrepareOptions& options);

struct TrainOptions {
  std::string data_dir;  // output of run_prepare
  std::string out_dir;
  TrainConfig config;
  bool verbose = false;
};

struct TrainReport {
  TrainResult result;
  double best_val_acc = 0.0;
  std::optional<GridOccupancy> occupancy;
  std::string checkpoint_path;
  std::string history_path;
};

/// Writes checkpoint.json, history.csv and train_report.json. Throws
/// TrainingDiverged after writing the last good checkpoint.
TrainReport run_train(const TrainOptions& options);

/// Loads the prepared split ("train", "val" or "all") as encoded sequences.
std::vector<EncodedSequence> load_prepared_split(const std::string& data_dir,
                                                 const std::string& split,
                                                 const Vocabularies& vocab);
Vocabularies load_vocab(const std::string& path);

struct EvalOptions {
  std::string data_dir;
  std::string checkpoint;
  std::string split = "val";
  double threshold = 0.5;
};

Metrics run_eval(const EvalOptions& options);

struct PredictOptions {
  std::string checkpoint;
  std::string vocab;
  std::vector<std::string> inputs;
  double threshold = 0.5;
};

struct FilePrediction {
  std::string path;
  std::optional<Prediction> prediction;
  std::string error;

  std::string to_json() const;
};

/// One result per input, in input order. A file that fails to load gets an
/// `error` instead of a prediction.
std::vector<FilePrediction> run_predict(const PredictOptions& options);

/// Per-bar feature matrix of one MIDI file, as printed by `inspect`.
std::string run_inspect(const std::string& path, const PreprocessOptions& options);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace melodyclf
