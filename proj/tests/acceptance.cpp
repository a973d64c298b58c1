// Acceptance suite: one [PASS]/[FAIL] line per criterion, exit status 1 if
// any criterion fails. Pipeline criteria drive the real command-line tool.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "melodyclf/harness.h"
#include "test_support.h"

using namespace melodyclf;
using namespace melodyclf::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

const fs::path& work_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "melodyclf_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

void cli_or_throw(const std::string& args) {
  const CliResult r = run_cli(args, true);
  if (r.status != 0) {
    throw std::runtime_error("melodyclf " + args + " exited " + std::to_string(r.status) +
                             ": " + r.out);
  }
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text_file(p.string())); }

/// synth corpus shared by criteria 6 and 9.
fs::path balanced_corpus() {
  static const fs::path dir = [] {
    const fs::path d = work_root() / "corpus_300_300";
    cli_or_throw("synth --out-dir " + d.string() + " --seed 42 --n-label0 300 --n-label1 300");
    return d;
  }();
  return dir;
}

struct PipelineRun {
  double val_acc = 0.0;
  double seconds = 0.0;
  fs::path prep;
  fs::path run;
};

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  for (bool bi : {false, true}) {
    const ModelShape shape{10, 6, 3, bi, 0.4};
    const ModelParams p = random_params(shape, bi ? 202 : 101, 0.5);
    Rng rng(bi ? 12 : 11);
    std::vector<EncodedSequence> seqs;
    for (int e = 0; e < 4; ++e) seqs.push_back(random_dense_sequence(rng, 10, 7, 7, e % 2));
    const Batch b = pad_batch(std::move(seqs), 7);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      const GradCheckResult r = gradient_check(p, b, mode, 7, {1.0, 1.0}, 1e-5);
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = std::string(bi ? "bidirectional " : "unidirectional ") + r.worst_block;
      }
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 10.0,
          "max rel error " + fmt(worst) + " at " + where + " (limit 1e-4), " + fmt(secs, 3) +
              " s (limit 10 s)"};
}

Outcome parser_fidelity() {
  const auto start = Clock::now();
  int mismatches = 0;
  SynthConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const MidiFile f = gen_piece(cfg, i % 2, i / 2);
    if (!(parse_smf(write_smf(f)) == f)) ++mismatches;
  }
  int vlq_failures = 0;
  for (std::uint32_t v : {0u, 127u, 128u, 16383u, 16384u, kMaxVlq}) {
    std::vector<std::uint8_t> bytes;
    write_vlq(v, bytes);
    const Vlq back = read_vlq(bytes, 0);
    if (back.value != v || back.next_offset != bytes.size()) ++vlq_failures;
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && vlq_failures == 0 && secs < 5.0,
          std::to_string(1000 - mismatches) + "/1000 files identical, " +
              std::to_string(6 - vlq_failures) + "/6 VLQ boundaries, " + fmt(secs, 3) +
              " s (limit 5 s)"};
}

Outcome feature_matrix_reproduction() {
  const fs::path file = work_root() / "four_notes.mid";
  write_file_bytes(file.string(), write_smf(four_note_bar()));
  const CliResult r = run_cli("inspect " + file.string());
  std::string rows;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '(') rows += line + "\n";
  }
  const std::string expected = "(C4, 0.0, 1.0)\n(E4, 1.0, 0.5)\n(G4, 1.5, 0.5)\n(C5, 2.0, 2.0)\n";
  std::string shown = rows;
  std::replace(shown.begin(), shown.end(), '\n', ' ');
  return {r.status == 0 && rows == expected, "inspect exit " + std::to_string(r.status) + ": " + shown};
}

Outcome encoding_invariants() {
  SynthConfig cfg;
  std::vector<MelodySequence> corpus;
  for (int i = 0; i < 40; ++i) corpus.push_back(preprocess_file(gen_piece(cfg, i % 2, i), {}, "").sequence);
  const Vocabularies v = build_vocab(corpus, kDefaultGridStep, kDefaultBeatsPerBar);
  const int P = v.pitch_size();
  const int B = v.position_size();

  // 10,000 random in-vocabulary rows, 40 per sequence, padded to 48.
  Rng rng(2024);
  std::vector<MelodySequence> sources(250);
  for (MelodySequence& src : sources) {
    for (int t = 0; t < 40; ++t) {
      src.rows.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(P))),
                          v.position_tokens[rng.below(static_cast<std::uint64_t>(B))],
                          v.duration_tokens[rng.below(v.duration_tokens.size())], 0});
    }
  }
  std::vector<EncodedSequence> seqs;
  for (const MelodySequence& src : sources) seqs.push_back(encode_sequence(src, v, 0));
  const Batch batch = pad_batch(std::move(seqs), 48);

  long steps = 0;
  long pads = 0;
  int bad_sums = 0;
  int bad_roundtrips = 0;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    const EncodedSequence& e = batch.sequences[s];
    for (std::size_t t = 0; t < e.steps.size(); ++t) {
      const auto dense = e.dense_step(t);
      double sums[3] = {0, 0, 0};
      for (int j = 0; j < e.dim; ++j) {
        sums[j < P ? 0 : j < P + B ? 1 : 2] += dense[static_cast<std::size_t>(j)];
      }
      if (static_cast<int>(t) >= e.length) {
        ++pads;
        if (sums[0] + sums[1] + sums[2] != 0.0) ++bad_sums;
        continue;
      }
      ++steps;
      if (sums[0] != 1.0 || sums[1] != 1.0 || sums[2] != 1.0) ++bad_sums;
      const auto back = decode_step(e.steps[t], v);
      if (!back || !(*back == sources[s].rows[t])) ++bad_roundtrips;
    }
  }
  return {bad_sums == 0 && bad_roundtrips == 0 && steps == 10000,
          std::to_string(steps) + " steps and " + std::to_string(pads) + " pad steps; " +
              std::to_string(bad_sums) + " bad block sums, " + std::to_string(bad_roundtrips) +
              " decode/encode mismatches"};
}

Outcome padding_invariance() {
  SynthConfig cfg;
  std::vector<MelodySequence> corpus;
  for (int i = 0; i < 24; ++i) corpus.push_back(preprocess_file(gen_piece(cfg, i % 2, i), {}, "").sequence);
  const Vocabularies v = build_vocab(corpus, kDefaultGridStep, kDefaultBeatsPerBar);
  std::vector<EncodedSequence> seqs;
  for (const auto& s : corpus) seqs.push_back(encode_sequence(s, v, 0));

  int changed = 0;
  for (bool bi : {false, true}) {
    const ModelParams p = init_params({v.dim(), 64, 8, bi, 0.4}, bi ? 5 : 4);
    const auto base = pad_batch(seqs, v.max_len).sequences;
    const auto ref = predict(p, base);
    for (int k : {1, 8, 32}) {
      const auto padded = pad_batch(seqs, v.max_len + k).sequences;
      const auto got = predict(p, padded);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        if (got[i].prob != ref[i].prob || got[i].label != ref[i].label) ++changed;
      }
    }
  }
  return {changed == 0, std::to_string(changed) + " of " + std::to_string(seqs.size() * 6) +
                            " predictions changed (uni + bi, k = 1, 8, 32)"};
}

std::vector<PipelineRun> g_separability_runs;

Outcome synthetic_separability() {
  const auto synth_start = Clock::now();
  const fs::path corpus = balanced_corpus();
  const double synth_secs = seconds_since(synth_start);
  int passing = 0;
  double slowest = 0.0;
  std::string accs;
  for (std::uint64_t seed = 41; seed <= 45; ++seed) {
    const auto start = Clock::now();
    const fs::path base = work_root() / ("separability_" + std::to_string(seed));
    PipelineRun r;
    r.prep = base / "prep";
    r.run = base / "run";
    cli_or_throw("prepare --data-dir " + corpus.string() + " --out-dir " + r.prep.string() +
                 " --seed " + std::to_string(seed));
    cli_or_throw("train --data-dir " + r.prep.string() + " --out-dir " + r.run.string() +
                 " --seed " + std::to_string(seed) + " --epochs 50");
    cli_or_throw("eval --data-dir " + r.prep.string() + " --checkpoint " +
                 (r.run / "checkpoint.json").string() + " --split val --out-dir " + r.run.string());
    r.val_acc = read_json(r.run / "metrics.json")["accuracy"].get<double>();
    r.seconds = seconds_since(start) + synth_secs;
    g_separability_runs.push_back(r);
    slowest = std::max(slowest, r.seconds);
    const bool ok = r.val_acc >= 0.95 && r.seconds < 300.0;
    passing += ok ? 1 : 0;
    accs += (accs.empty() ? "" : ", ") + std::to_string(seed) + ":" + fmt(r.val_acc);
  }
  return {passing >= 4, std::to_string(passing) + "/5 seeds reach val acc >= 0.95 (" + accs +
                            "); slowest pipeline " + fmt(slowest, 3) + " s (limit 300 s)"};
}

Outcome overfit_capacity() {
  SynthConfig cfg;
  std::vector<MelodySequence> corpus;
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) {
    corpus.push_back(preprocess_file(gen_piece(cfg, i % 2, 1000 + i), {}, "").sequence);
    labels.push_back(i % 2);
  }
  const Vocabularies v = build_vocab(corpus, kDefaultGridStep, kDefaultBeatsPerBar);
  std::vector<EncodedSequence> seqs;
  for (std::size_t i = 0; i < corpus.size(); ++i) seqs.push_back(encode_sequence(corpus[i], v, labels[i]));
  seqs = pad_batch(std::move(seqs), v.max_len).sequences;

  TrainConfig tc;
  tc.epochs = 200;
  tc.early_stop_patience = 0;
  const TrainResult r = train(seqs, seqs, tc);
  const double final_acc = r.history.back().train_acc;
  return {final_acc == 1.0, "training accuracy after " + std::to_string(r.history.size()) +
                                " epochs: " + fmt(final_acc)};
}

Outcome determinism() {
  if (g_separability_runs.empty()) return {false, "criterion 6 did not run"};
  const PipelineRun& first = g_separability_runs.front();
  const fs::path again = work_root() / "determinism";
  cli_or_throw("prepare --data-dir " + balanced_corpus().string() + " --out-dir " +
               (again / "prep").string() + " --seed 41");
  cli_or_throw("train --data-dir " + (again / "prep").string() + " --out-dir " +
               (again / "run").string() + " --seed 41 --epochs 50");
  const std::string a = read_text_file((first.run / "history.csv").string());
  const std::string b = read_text_file((again / "run" / "history.csv").string());
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  return {a == b && !a.empty(), std::string(a == b ? "identical" : "different") +
                                    " history.csv across two seed-41 runs (" +
                                    std::to_string(rows) + " epochs)"};
}

Outcome shortcut_ablation() {
  const fs::path corpus = balanced_corpus();
  const fs::path base = work_root() / "ablation";
  cli_or_throw("prepare --data-dir " + corpus.string() + " --out-dir " + (base / "raw_prep").string() +
               " --seed 42 --no-quantize");
  cli_or_throw("train --data-dir " + (base / "raw_prep").string() + " --out-dir " +
               (base / "raw_run").string() + " --seed 42 --epochs 50");
  cli_or_throw("eval --data-dir " + (base / "raw_prep").string() + " --checkpoint " +
               (base / "raw_run" / "checkpoint.json").string() + " --split val --out-dir " +
               (base / "raw_run").string());
  const double raw_acc = read_json(base / "raw_run" / "metrics.json")["accuracy"].get<double>();
  const auto raw_prep = read_json(base / "raw_prep" / "prepare_report.json");
  const auto raw_train = read_json(base / "raw_run" / "train_report.json");
  const bool flagged = raw_prep["grid_occupancy"]["disparity"].get<bool>() &&
                       raw_train.contains("warning") &&
                       raw_train["grid_occupancy"]["disparity"].get<bool>();

  cli_or_throw("prepare --data-dir " + corpus.string() + " --out-dir " + (base / "q_prep").string() +
               " --seed 42");
  const auto q = read_json(base / "q_prep" / "prepare_report.json")["grid_occupancy"];
  const double q0 = q["label0"].get<double>();
  const double q1 = q["label1"].get<double>();
  const auto& raw_occ = raw_prep["grid_occupancy"];
  return {raw_acc >= 0.99 && flagged && q0 == 1.0 && q1 == 1.0 && !q["disparity"].get<bool>(),
          "unquantized val acc " + fmt(raw_acc) + " (limit 0.99), occupancy label0 " +
              fmt(raw_occ["label0"].get<double>()) + " / label1 " +
              fmt(raw_occ["label1"].get<double>()) + ", disparity " +
              (flagged ? "flagged" : "NOT flagged") + "; quantized occupancy " + fmt(q0) + " / " +
              fmt(q1)};
}

Outcome imbalance_handling() {
  const fs::path corpus = work_root() / "corpus_600_100";
  cli_or_throw("synth --out-dir " + corpus.string() + " --seed 42 --n-label0 600 --n-label1 100");
  int passing = 0;
  std::string recalls;
  for (std::uint64_t seed = 41; seed <= 45; ++seed) {
    const fs::path base = work_root() / ("imbalance_" + std::to_string(seed));
    cli_or_throw("prepare --data-dir " + corpus.string() + " --out-dir " + (base / "prep").string() +
                 " --seed " + std::to_string(seed));
    cli_or_throw("train --data-dir " + (base / "prep").string() + " --out-dir " +
                 (base / "run").string() + " --seed " + std::to_string(seed) + " --epochs 50");
    cli_or_throw("eval --data-dir " + (base / "prep").string() + " --checkpoint " +
                 (base / "run" / "checkpoint.json").string() + " --split val --out-dir " +
                 (base / "run").string());
    const double recall = read_json(base / "run" / "metrics.json")["recall"].get<double>();
    passing += recall >= 0.85 ? 1 : 0;
    recalls += (recalls.empty() ? "" : ", ") + std::to_string(seed) + ":" + fmt(recall);
  }
  return {passing >= 4, std::to_string(passing) + "/5 seeds reach minority (label 1) recall >= 0.85 (" +
                            recalls + "), inverse-frequency weights"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient correctness", gradient_correctness},
      {"2 parser fidelity", parser_fidelity},
      {"3 feature matrix via inspect", feature_matrix_reproduction},
      {"4 encoding invariants", encoding_invariants},
      {"5 padding invariance", padding_invariance},
      {"6 synthetic separability", synthetic_separability},
      {"7 overfit capacity", overfit_capacity},
      {"8 determinism", determinism},
      {"9 shortcut ablation", shortcut_ablation},
      {"10 imbalance handling", imbalance_handling},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << " ["
              << fmt(seconds_since(start), 3) << " s]" << std::endl;
  }
  std::cout << (10 - failures) << "/10 criteria passed" << std::endl;
  fs::remove_all(work_root());
  return failures == 0 ? 0 : 1;
}
