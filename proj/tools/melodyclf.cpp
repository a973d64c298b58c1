/// @file
/// @brief Command-line front end: synth, prepare, train, eval, predict, inspect.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "melodyclf/harness.h"

namespace {

using namespace melodyclf;

void dump_config(const CLI::App& app, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(std::filesystem::path(out_dir) / "run_config.ini", std::ios::trunc);
  out << app.config_to_str(true, false);
}

std::array<double, 2> parse_weights(const std::string& text) {
  std::array<double, 2> w{};
  char comma = 0;
  std::istringstream ss(text);
  if (!(ss >> w[0] >> comma >> w[1]) || comma != ',' || w[0] <= 0.0 || w[1] <= 0.0) {
    throw CLI::ValidationError("--class-weights", "expected two positive numbers as W0,W1");
  }
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classify 8-bar monophonic MIDI melodies as human (1) or machine (0)."};
  app.set_config("--config", "", "Key-value config file mirroring the command-line flags");
  app.require_subcommand(1);

  // synth
  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic MIDI corpus");
  synth->add_option("--out-dir", synth_out, "Corpus directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "Random seed")->capture_default_str();
  synth->add_option("--n-label0", synth_cfg.n_label0, "Machine-style pieces")->capture_default_str();
  synth->add_option("--n-label1", synth_cfg.n_label1, "Human-style pieces")->capture_default_str();
  synth->add_option("--jitter", synth_cfg.jitter_beats, "Label-0 onset jitter in beats")
      ->capture_default_str();

  // prepare
  PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare", "Parse, preprocess, split, build vocabulary");
  prepare->add_option("--data-dir", prep.data_dir, "Corpus directory")->required();
  prepare->add_option("--out-dir", prep.out_dir, "Output directory")->required();
  prepare->add_option("--seed", prep.seed, "Split seed")->capture_default_str();
  prepare->add_option("--grid", prep.grid_step, "Quantization grid in quarter notes")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  prepare->add_option("--val-fraction", prep.val_fraction, "Validation share")
      ->capture_default_str();
  bool no_quantize = false;
  prepare->add_flag("--no-quantize", no_quantize,
                    "Keep events at tick resolution (grid-shortcut experiment)");

  // train
  TrainOptions tr;
  std::string class_weights;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier on prepared features");
  train_cmd->add_option("--data-dir", tr.data_dir, "Output of prepare")->required();
  train_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", tr.config.seed, "Training seed")->capture_default_str();
  train_cmd->add_option("--epochs", tr.config.epochs, "Maximum epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.config.batch_size, "Mini-batch size")
      ->capture_default_str();
  train_cmd->add_option("--lr", tr.config.learning_rate, "Adam learning rate")
      ->capture_default_str();
  train_cmd->add_option("--patience", tr.config.early_stop_patience,
                        "Early-stopping patience in epochs (0 disables)")
      ->capture_default_str();
  train_cmd->add_option("--dropout", tr.config.dropout_rate, "Dropout rate")
      ->capture_default_str();
  train_cmd->add_flag("--bidirectional", tr.config.bidirectional, "Bidirectional first layer");
  train_cmd->add_option("--class-weights", class_weights,
                        "W0,W1 (default: inverse class frequency)");
  train_cmd->add_flag("--verbose", tr.verbose, "Print per-epoch progress to stderr");

  // eval
  EvalOptions ev;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Print metrics JSON for a prepared split");
  eval->add_option("--data-dir", ev.data_dir, "Output of prepare")->required();
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ev.split, "train, val or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "all"}));
  eval->add_option("--threshold", ev.threshold, "Decision threshold")->capture_default_str();
  eval->add_option("--out-dir", eval_out, "Also write metrics.json here");

  // predict
  PredictOptions pr;
  std::string predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "Label MIDI files, one JSON line each");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--vocab", pr.vocab, "vocab.json from prepare")->required();
  predict_cmd->add_option("--threshold", pr.threshold, "Decision threshold")
      ->capture_default_str();
  predict_cmd->add_option("--out-dir", predict_out, "Also write predictions.jsonl here");
  predict_cmd->add_option("files", pr.inputs, "MIDI files")->required();

  // inspect
  std::string inspect_path;
  PreprocessOptions inspect_opts;
  bool inspect_no_quantize = false;
  auto* inspect = app.add_subcommand("inspect", "Print the per-bar feature matrix of a file");
  inspect->add_option("file", inspect_path, "MIDI file")->required();
  inspect->add_option("--grid", inspect_opts.grid_step, "Quantization grid")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  inspect->add_flag("--no-quantize", inspect_no_quantize, "Keep tick resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      dump_config(app, synth_out);
      const auto entries = write_synth_corpus(synth_cfg, synth_out);
      std::cout << "wrote " << entries.size() << " files to " << synth_out << '\n';
    } else if (prepare->parsed()) {
      prep.quantize = !no_quantize;
      dump_config(app, prep.out_dir);
      const PrepareReport report = run_prepare(prep);
      std::cout << report.to_json() << '\n';
      if (report.occupancy.disparity) {
        std::cerr << "warning: onset grid occupancy differs between labels (label0 "
                  << report.occupancy.label0 << ", label1 " << report.occupancy.label1 << ")\n";
      }
    } else if (train_cmd->parsed()) {
      if (!class_weights.empty()) {
        tr.config.class_weights = parse_weights(class_weights);
      }
      dump_config(app, tr.out_dir);
      const TrainReport report = run_train(tr);
      std::cout << "best epoch " << report.result.best_epoch << ", val accuracy "
                << report.best_val_acc << '\n';
      if (report.occupancy && report.occupancy->disparity) {
        std::cerr << "warning: onset grid occupancy differs between labels; accuracy may "
                     "reflect timing alone\n";
      }
    } else if (eval->parsed()) {
      const Metrics m = run_eval(ev);
      std::cout << m.to_json() << '\n';
      if (!eval_out.empty()) {
        std::filesystem::create_directories(eval_out);
        write_text_file((std::filesystem::path(eval_out) / "metrics.json").string(),
                        m.to_json() + "\n");
      }
    } else if (predict_cmd->parsed()) {
      const auto results = run_predict(pr);
      std::string lines;
      bool failed = false;
      for (const FilePrediction& r : results) {
        lines += r.to_json() + "\n";
        failed = failed || !r.prediction;
      }
      std::cout << lines;
      if (!predict_out.empty()) {
        std::filesystem::create_directories(predict_out);
        write_text_file((std::filesystem::path(predict_out) / "predictions.jsonl").string(),
                        lines);
      }
      return failed ? kExitData : kExitOk;
    } else if (inspect->parsed()) {
      inspect_opts.quantize = !inspect_no_quantize;
      std::cout << run_inspect(inspect_path, inspect_opts);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << " (last good checkpoint written)\n";
    return kExitDiverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
