/// @file
/// @brief Stacked-LSTM binary classifier with exact backpropagation through time.
///
/// Topology: LSTM(64, every step) -> dropout -> LSTM(8, last real step)
/// -> dropout -> dense -> sigmoid, giving P(label = 1). Layer 1 may run in
/// both directions, in which case layer 2 sees [h_fwd ++ h_bwd] per step.
///
/// Gate blocks inside every 4H-sized array are ordered (input, forget, cell
/// candidate, output):
///
///   i = sigmoid(a_i)   f = sigmoid(a_f)   g = tanh(a_g)   o = sigmoid(a_o)
///   c' = f * c + i * g
///   h' = o * tanh(c')
///
/// where a = W_x x + W_h h + b.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melodyclf/encode.h"
#include "melodyclf/error.h"

namespace melodyclf {

enum class Gate : int { Input = 0, Forget = 1, Cell = 2, Output = 3 };

/// Weights of one LSTM layer. Both weight matrices are stored column-major:
/// wx[j * 4H + r] is W_x(r, j) and wh[k * 4H + r] is W_h(r, k), so the
/// column touched by one input coordinate is contiguous.
struct LstmLayerParams {
  int input_dim = 0;
  int hidden = 0;
  std::vector<double> wx;
  std::vector<double> wh;
  std::vector<double> b;

  static LstmLayerParams zeros(int input_dim, int hidden);

  double& w_x(int row, int col) { return wx[static_cast<std::size_t>(col) * 4 * hidden + row]; }
  double w_x(int row, int col) const { return wx[static_cast<std::size_t>(col) * 4 * hidden + row]; }
  double& w_h(int row, int col) { return wh[static_cast<std::size_t>(col) * 4 * hidden + row]; }
  double w_h(int row, int col) const { return wh[static_cast<std::size_t>(col) * 4 * hidden + row]; }
  /// Bias of unit `unit` in gate `gate`.
  double& bias(Gate gate, int unit) { return b[static_cast<std::size_t>(gate) * hidden + unit]; }

  bool empty() const { return hidden == 0; }
  bool operator==(const LstmLayerParams&) const = default;
};

struct ModelShape {
  int input_dim = 0;
  int hidden1 = 64;
  int hidden2 = 8;
  bool bidirectional = false;
  double dropout_rate = 0.4;
};

struct ModelParams {
  LstmLayerParams layer1;
  /// Reverse-direction layer 1; empty unless bidirectional.
  LstmLayerParams layer1_reverse;
  LstmLayerParams layer2;
  std::vector<double> dense_w;
  double dense_b = 0.0;
  double dropout_rate = 0.4;
  bool bidirectional = false;

  static ModelParams zeros(const ModelShape& shape);

  int input_dim() const { return layer1.input_dim; }
  ModelShape shape() const {
    return {layer1.input_dim, layer1.hidden, layer2.hidden, bidirectional, dropout_rate};
  }
  /// Throws DimensionMismatch when the blocks do not fit together.
  void validate() const;

  bool operator==(const ModelParams&) const = default;
};

/// Calls fn(name, span) for every trainable array in a fixed order.
template <class Params, class Fn>
void visit_blocks(Params& p, Fn&& fn) {
  auto layer = [&](auto& l, std::string_view prefix) {
    if (l.empty()) return;
    fn(std::string(prefix) + ".wx", std::span(l.wx));
    fn(std::string(prefix) + ".wh", std::span(l.wh));
    fn(std::string(prefix) + ".b", std::span(l.b));
  };
  layer(p.layer1, "layer1");
  layer(p.layer1_reverse, "layer1_reverse");
  layer(p.layer2, "layer2");
  fn(std::string("dense.w"), std::span(p.dense_w));
  fn(std::string("dense.b"), std::span(&p.dense_b, 1));
}

/// Input weights uniform in +-sqrt(6 / (D + 4H)), recurrent weights with
/// orthonormal columns, biases zero except the forget gate at 1.0.
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

LstmState lstm_cell(std::span<const double> x, std::span<const double> h,
                    std::span<const double> c, const LstmLayerParams& p);

double sigmoid(double z);

enum class Mode { Train, Eval };

/// Activations of one layer for one example, in processing order (reversed
/// time for the reverse direction). Gates hold activated values.
struct LayerTrace {
  std::vector<double> gates;   // T x 4H
  std::vector<double> c;       // T x H
  std::vector<double> tanh_c;  // T x H
  std::vector<double> h;       // T x H
};

struct ExampleCache {
  const EncodedSequence* input = nullptr;
  int length = 0;
  LayerTrace layer1;
  LayerTrace layer1_reverse;
  LayerTrace layer2;
  /// Per-unit dropout multipliers, 0 or 1/(1-rate); empty in eval mode.
  std::vector<double> mask1;  // T x D2
  std::vector<double> mask2;  // H2
  std::vector<double> x2;     // T x D2, layer-2 input after dropout
  std::vector<double> final_features;  // H2, dense input after dropout
  double logit = 0.0;
  double prob = 0.5;
};

/// Caches point into the batch they were computed from.
struct ForwardCache {
  std::vector<ExampleCache> examples;
};

struct ForwardResult {
  std::vector<double> probs;
  ForwardCache cache;
};

/// Dropout masks for example e are drawn from derive_seed(rng_seed,
/// "dropout", e), so a given seed always reproduces the same masks.
ForwardResult forward(const Batch& batch, const ModelParams& p, Mode mode,
                      std::uint64_t rng_seed);
ForwardResult forward_bidirectional(const Batch& batch, const ModelParams& p, Mode mode,
                                    std::uint64_t rng_seed);

/// Single example; fills `cache` when non-null.
double forward_example(const EncodedSequence& seq, const ModelParams& p, Mode mode,
                       std::uint64_t example_seed, ExampleCache* cache);

using ClassWeights = std::array<double, 2>;

inline constexpr double kProbClamp = 1e-12;

/// Weighted binary cross-entropy averaged over the batch size.
double loss(std::span<const double> probs, std::span<const int> labels,
            const ClassWeights& weights = {1.0, 1.0});

/// Gradient of `loss` for a forward pass; same shape as the parameters.
ModelParams backward(const ForwardCache& cache, std::span<const int> labels,
                     const ModelParams& p, const ClassWeights& weights = {1.0, 1.0});

/// Adds d(loss)/d(params) for one example into `grads`, where the example's
/// loss term is scaled by `scale` (class weight / batch size).
void backward_example(const ExampleCache& cache, int label, double scale, const ModelParams& p,
                      ModelParams& grads);

/// Keep-mask multipliers for inverted dropout: each entry is 0 with
/// probability `rate`, else 1/(1-rate).
std::vector<double> dropout_mask(std::size_t n, double rate, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 42;
  /// Inverse class frequency of the training set when unset.
  std::optional<ClassWeights> class_weights;
  double validation_fraction = 0.4;
  /// Epochs without a validation-accuracy improvement before stopping; 0
  /// disables early stopping.
  int early_stop_patience = 10;
  int hidden1 = 64;
  int hidden2 = 8;
  double dropout_rate = 0.4;
  bool bidirectional = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  ClassWeights class_weights{1.0, 1.0};
};

/// Thrown when the loss or an activation becomes non-finite; carries the
/// best parameters seen before the failure.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainResult last_good)
      : Error(ErrorCode::Diverged, message), last_good_(std::move(last_good)) {}

  const TrainResult& last_good() const { return last_good_; }

 private:
  TrainResult last_good_;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams& like, double lr, double beta1, double beta2, double epsilon);
  void step(ModelParams& params, ModelParams& grads);
  long steps() const { return t_; }

 private:
  ModelParams m_;
  ModelParams v_;
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long t_ = 0;
};

ClassWeights inverse_frequency_weights(std::span<const EncodedSequence> data);

/// Every sequence must carry a label. `on_epoch` sees each record as it is
/// produced.
TrainResult train(std::span<const EncodedSequence> train_set,
                  std::span<const EncodedSequence> val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> probs;
};

EvalSummary evaluate_loss(const ModelParams& p, std::span<const EncodedSequence> data,
                          const ClassWeights& weights);

/// "epoch,train_loss,train_acc,val_loss,val_acc" plus one row per epoch,
/// values printed with round-trip precision.
std::string history_csv(std::span<const EpochRecord> history);

struct Prediction {
  int label = 0;
  double prob = 0.5;
};

/// label = 1 iff prob >= threshold.
std::vector<Prediction> predict(const ModelParams& p, std::span<const EncodedSequence> sequences,
                                double threshold = 0.5);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::string vocab_digest;
};

std::string save_checkpoint(const ModelParams& p, const std::string& vocab_digest);
Checkpoint load_checkpoint(const std::string& text);
/// Also rejects a checkpoint trained against a different vocabulary.
ModelParams load_checkpoint(const std::string& text, const std::string& expected_vocab_digest);

}  // namespace melodyclf
