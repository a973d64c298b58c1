/// @file
/// @brief Stacked-LSTM forward pass, BPTT, Adam training and prediction.

#include "melodyclf/model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "melodyclf/rng.h"

namespace melodyclf {

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

LstmLayerParams LstmLayerParams::zeros(int input_dim, int hidden) {
  if (input_dim <= 0 || hidden <= 0) {
    throw Error(ErrorCode::DimensionMismatch, "layer dimensions must be positive");
  }
  LstmLayerParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  const auto g = static_cast<std::size_t>(4 * hidden);
  p.wx.assign(g * static_cast<std::size_t>(input_dim), 0.0);
  p.wh.assign(g * static_cast<std::size_t>(hidden), 0.0);
  p.b.assign(g, 0.0);
  return p;
}

ModelParams ModelParams::zeros(const ModelShape& shape) {
  if (!(shape.dropout_rate >= 0.0 && shape.dropout_rate < 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "dropout rate must lie in [0, 1)");
  }
  ModelParams p;
  p.bidirectional = shape.bidirectional;
  p.dropout_rate = shape.dropout_rate;
  p.layer1 = LstmLayerParams::zeros(shape.input_dim, shape.hidden1);
  if (shape.bidirectional) {
    p.layer1_reverse = LstmLayerParams::zeros(shape.input_dim, shape.hidden1);
  }
  p.layer2 =
      LstmLayerParams::zeros(shape.hidden1 * (shape.bidirectional ? 2 : 1), shape.hidden2);
  p.dense_w.assign(static_cast<std::size_t>(shape.hidden2), 0.0);
  return p;
}

namespace {

void check_layer(const LstmLayerParams& l, int input_dim, int hidden, const char* name) {
  const auto g = static_cast<std::size_t>(4 * hidden);
  if (l.input_dim != input_dim || l.hidden != hidden ||
      l.wx.size() != g * static_cast<std::size_t>(input_dim) ||
      l.wh.size() != g * static_cast<std::size_t>(hidden) || l.b.size() != g) {
    throw Error(ErrorCode::DimensionMismatch, std::string(name) + " has inconsistent shape");
  }
}

}  // namespace

void ModelParams::validate() const {
  const int h1 = layer1.hidden;
  if (layer1.input_dim <= 0 || h1 <= 0 || layer2.hidden <= 0) {
    throw Error(ErrorCode::DimensionMismatch, "empty model");
  }
  check_layer(layer1, layer1.input_dim, h1, "layer1");
  if (bidirectional) {
    check_layer(layer1_reverse, layer1.input_dim, h1, "layer1_reverse");
  } else if (!layer1_reverse.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "reverse layer present in a unidirectional model");
  }
  check_layer(layer2, h1 * (bidirectional ? 2 : 1), layer2.hidden, "layer2");
  if (dense_w.size() != static_cast<std::size_t>(layer2.hidden)) {
    throw Error(ErrorCode::DimensionMismatch, "dense layer does not match layer2");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "dropout rate must lie in [0, 1)");
  }
}

namespace {

std::vector<std::span<double>> blocks_of(ModelParams& p) {
  std::vector<std::span<double>> out;
  visit_blocks(p, [&](const std::string&, std::span<double> s) { out.push_back(s); });
  return out;
}

void fill_zero(ModelParams& p) {
  visit_blocks(p, [](const std::string&, std::span<double> s) {
    std::fill(s.begin(), s.end(), 0.0);
  });
}

bool all_finite(ModelParams& p) {
  bool ok = true;
  visit_blocks(p, [&](const std::string&, std::span<double> s) {
    for (double v : s) {
      ok = ok && std::isfinite(v);
    }
  });
  return ok;
}

void init_layer(LstmLayerParams& l, Rng& rng) {
  const int h = l.hidden;
  const int g = 4 * h;
  const double limit = std::sqrt(6.0 / (l.input_dim + g));
  for (double& w : l.wx) {
    w = rng.uniform(-limit, limit);
  }
  // Orthonormal columns of the 4H x H recurrent matrix via modified
  // Gram-Schmidt on Gaussian columns.
  for (int k = 0; k < h; ++k) {
    double* col = l.wh.data() + static_cast<std::size_t>(k) * g;
    for (int r = 0; r < g; ++r) {
      col[r] = rng.normal();
    }
    for (int prev = 0; prev < k; ++prev) {
      const double* q = l.wh.data() + static_cast<std::size_t>(prev) * g;
      const double dot = std::inner_product(col, col + g, q, 0.0);
      for (int r = 0; r < g; ++r) {
        col[r] -= dot * q[r];
      }
    }
    const double norm = std::sqrt(std::inner_product(col, col + g, col, 0.0));
    for (int r = 0; r < g; ++r) {
      col[r] /= norm;
    }
  }
  std::fill(l.b.begin(), l.b.end(), 0.0);
  for (int u = 0; u < h; ++u) {
    l.bias(Gate::Forget, u) = 1.0;
  }
}

}  // namespace

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(shape);
  Rng rng1(derive_seed(seed, "init.layer1"));
  init_layer(p.layer1, rng1);
  if (p.bidirectional) {
    Rng rng1r(derive_seed(seed, "init.layer1_reverse"));
    init_layer(p.layer1_reverse, rng1r);
  }
  Rng rng2(derive_seed(seed, "init.layer2"));
  init_layer(p.layer2, rng2);
  Rng rngd(derive_seed(seed, "init.dense"));
  const double limit = std::sqrt(6.0 / (static_cast<double>(p.dense_w.size()) + 1.0));
  for (double& w : p.dense_w) {
    w = rngd.uniform(-limit, limit);
  }
  p.dense_b = 0.0;
  return p;
}

// ---------------------------------------------------------------------------
// LSTM kernels
// ---------------------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

using DenseInput = std::span<const double>;

void add_input(double* pre, const LstmLayerParams& p, const SparseVector& x) {
  const int g = 4 * p.hidden;
  for (const SparseEntry& e : x) {
    const double* col = p.wx.data() + static_cast<std::size_t>(e.index) * g;
    for (int r = 0; r < g; ++r) {
      pre[r] += e.value * col[r];
    }
  }
}

void add_input(double* pre, const LstmLayerParams& p, DenseInput x) {
  const int g = 4 * p.hidden;
  for (int j = 0; j < p.input_dim; ++j) {
    const double v = x[static_cast<std::size_t>(j)];
    const double* col = p.wx.data() + static_cast<std::size_t>(j) * g;
    for (int r = 0; r < g; ++r) {
      pre[r] += v * col[r];
    }
  }
}

void add_input_grad(LstmLayerParams& grad, const SparseVector& x, const double* da) {
  const int g = 4 * grad.hidden;
  for (const SparseEntry& e : x) {
    double* col = grad.wx.data() + static_cast<std::size_t>(e.index) * g;
    for (int r = 0; r < g; ++r) {
      col[r] += e.value * da[r];
    }
  }
}

void add_input_grad(LstmLayerParams& grad, DenseInput x, const double* da) {
  const int g = 4 * grad.hidden;
  for (int j = 0; j < grad.input_dim; ++j) {
    const double v = x[static_cast<std::size_t>(j)];
    double* col = grad.wx.data() + static_cast<std::size_t>(j) * g;
    for (int r = 0; r < g; ++r) {
      col[r] += v * da[r];
    }
  }
}

/// One cell update. `h_prev`/`c_prev` may be null for a zero state. On
/// return `gates` holds the activated i, f, g, o blocks.
template <class Input>
void lstm_step(const LstmLayerParams& p, const Input& x, const double* h_prev,
               const double* c_prev, double* gates, double* c, double* tanh_c, double* h) {
  const int hs = p.hidden;
  const int g = 4 * hs;
  std::copy(p.b.begin(), p.b.end(), gates);
  add_input(gates, p, x);
  if (h_prev != nullptr) {
    for (int k = 0; k < hs; ++k) {
      const double v = h_prev[k];
      const double* col = p.wh.data() + static_cast<std::size_t>(k) * g;
      for (int r = 0; r < g; ++r) {
        gates[r] += v * col[r];
      }
    }
  }
  for (int u = 0; u < hs; ++u) {
    const double i = sigmoid(gates[u]);
    const double f = sigmoid(gates[hs + u]);
    const double cand = std::tanh(gates[2 * hs + u]);
    const double o = sigmoid(gates[3 * hs + u]);
    gates[u] = i;
    gates[hs + u] = f;
    gates[2 * hs + u] = cand;
    gates[3 * hs + u] = o;
    const double cp = c_prev != nullptr ? c_prev[u] : 0.0;
    c[u] = f * cp + i * cand;
    tanh_c[u] = std::tanh(c[u]);
    h[u] = o * tanh_c[u];
  }
}

template <class InputAt>
void run_layer(const LstmLayerParams& p, int steps, InputAt&& input_at, LayerTrace& tr) {
  const auto hs = static_cast<std::size_t>(p.hidden);
  const auto n = static_cast<std::size_t>(steps);
  tr.gates.assign(n * 4 * hs, 0.0);
  tr.c.assign(n * hs, 0.0);
  tr.tanh_c.assign(n * hs, 0.0);
  tr.h.assign(n * hs, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double* h_prev = s > 0 ? tr.h.data() + (s - 1) * hs : nullptr;
    const double* c_prev = s > 0 ? tr.c.data() + (s - 1) * hs : nullptr;
    lstm_step(p, input_at(s), h_prev, c_prev, tr.gates.data() + s * 4 * hs,
              tr.c.data() + s * hs, tr.tanh_c.data() + s * hs, tr.h.data() + s * hs);
  }
}

/// BPTT through one layer. `dh_out` is the upstream gradient on each step's
/// hidden output (processing order). Writes input gradients to `dx` when
/// non-null.
template <class InputAt>
void backprop_layer(const LstmLayerParams& p, const LayerTrace& tr, int steps,
                    InputAt&& input_at, const std::vector<double>& dh_out,
                    LstmLayerParams& grad, std::vector<double>* dx) {
  const int hs = p.hidden;
  const int g = 4 * hs;
  const auto H = static_cast<std::size_t>(hs);
  std::vector<double> dh_next(H, 0.0);
  std::vector<double> dc_next(H, 0.0);
  std::vector<double> da(static_cast<std::size_t>(g), 0.0);

  for (int s = steps - 1; s >= 0; --s) {
    const auto su = static_cast<std::size_t>(s);
    const double* gates = tr.gates.data() + su * 4 * H;
    const double* tc = tr.tanh_c.data() + su * H;
    const double* c_prev = s > 0 ? tr.c.data() + (su - 1) * H : nullptr;
    const double* h_prev = s > 0 ? tr.h.data() + (su - 1) * H : nullptr;

    for (int u = 0; u < hs; ++u) {
      const double i = gates[u];
      const double f = gates[hs + u];
      const double cand = gates[2 * hs + u];
      const double o = gates[3 * hs + u];
      const double dh = dh_out[su * H + static_cast<std::size_t>(u)] + dh_next[u];
      const double dc = dc_next[u] + dh * o * (1.0 - tc[u] * tc[u]);
      const double cp = c_prev != nullptr ? c_prev[u] : 0.0;
      da[u] = dc * cand * i * (1.0 - i);
      da[hs + u] = dc * cp * f * (1.0 - f);
      da[2 * hs + u] = dc * i * (1.0 - cand * cand);
      da[3 * hs + u] = dh * tc[u] * o * (1.0 - o);
      dc_next[u] = dc * f;
    }

    for (int r = 0; r < g; ++r) {
      grad.b[static_cast<std::size_t>(r)] += da[static_cast<std::size_t>(r)];
    }
    const auto& x = input_at(su);
    add_input_grad(grad, x, da.data());
    if (dx != nullptr) {
      double* out = dx->data() + su * static_cast<std::size_t>(p.input_dim);
      for (int j = 0; j < p.input_dim; ++j) {
        const double* col = p.wx.data() + static_cast<std::size_t>(j) * g;
        out[j] = std::inner_product(col, col + g, da.data(), 0.0);
      }
    }
    for (int k = 0; k < hs; ++k) {
      const double* col = p.wh.data() + static_cast<std::size_t>(k) * g;
      dh_next[static_cast<std::size_t>(k)] = std::inner_product(col, col + g, da.data(), 0.0);
      if (h_prev != nullptr) {
        double* gcol = grad.wh.data() + static_cast<std::size_t>(k) * g;
        const double v = h_prev[k];
        for (int r = 0; r < g; ++r) {
          gcol[r] += v * da[static_cast<std::size_t>(r)];
        }
      }
    }
  }
}

}  // namespace

LstmState lstm_cell(std::span<const double> x, std::span<const double> h,
                    std::span<const double> c, const LstmLayerParams& p) {
  const auto hs = static_cast<std::size_t>(p.hidden);
  if (x.size() != static_cast<std::size_t>(p.input_dim) || h.size() != hs || c.size() != hs ||
      p.wx.size() != 4 * hs * x.size() || p.wh.size() != 4 * hs * hs || p.b.size() != 4 * hs) {
    throw Error(ErrorCode::DimensionMismatch, "lstm_cell operand sizes disagree");
  }
  std::vector<double> gates(4 * hs);
  LstmState next{std::vector<double>(hs), std::vector<double>(hs)};
  std::vector<double> tanh_c(hs);
  lstm_step(p, x, h.data(), c.data(), gates.data(), next.c.data(), tanh_c.data(), next.h.data());
  for (std::size_t u = 0; u < hs; ++u) {
    if (!std::isfinite(next.h[u]) || !std::isfinite(next.c[u])) {
      throw Error(ErrorCode::NonFiniteActivation, "lstm_cell produced a non-finite state");
    }
  }
  return next;
}

std::vector<double> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
  Rng rng(seed);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  for (double& m : mask) {
    m = rng.uniform() >= rate ? scale : 0.0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

double forward_example(const EncodedSequence& seq, const ModelParams& p, Mode mode,
                       std::uint64_t example_seed, ExampleCache* cache) {
  if (seq.dim != p.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "sequence dimension " + std::to_string(seq.dim) + " != model input " +
                    std::to_string(p.input_dim()));
  }
  const int steps = seq.length;
  if (steps < 0 || static_cast<std::size_t>(steps) > seq.steps.size()) {
    throw Error(ErrorCode::DimensionMismatch, "sequence length exceeds stored steps");
  }
  for (int t = 0; t < steps; ++t) {
    for (const SparseEntry& e : seq.steps[static_cast<std::size_t>(t)]) {
      if (e.index < 0 || e.index >= seq.dim) {
        throw Error(ErrorCode::DimensionMismatch, "step index outside the input dimension");
      }
    }
  }

  ExampleCache local;
  ExampleCache& c = cache != nullptr ? *cache : local;
  c.input = &seq;
  c.length = steps;

  const int h1 = p.layer1.hidden;
  const int h2 = p.layer2.hidden;
  const int d2 = p.layer2.input_dim;
  const auto T = static_cast<std::size_t>(steps);
  const auto D2 = static_cast<std::size_t>(d2);
  const auto H1 = static_cast<std::size_t>(h1);
  const auto H2 = static_cast<std::size_t>(h2);

  run_layer(p.layer1, steps, [&](std::size_t s) -> const SparseVector& { return seq.steps[s]; },
            c.layer1);
  if (p.bidirectional) {
    run_layer(p.layer1_reverse, steps,
              [&](std::size_t s) -> const SparseVector& { return seq.steps[T - 1 - s]; },
              c.layer1_reverse);
  } else {
    c.layer1_reverse = {};
  }

  c.x2.assign(T * D2, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(c.layer1.h.data() + t * H1, H1, c.x2.data() + t * D2);
    if (p.bidirectional) {
      std::copy_n(c.layer1_reverse.h.data() + (T - 1 - t) * H1, H1, c.x2.data() + t * D2 + H1);
    }
  }
  if (mode == Mode::Train) {
    c.mask1 = dropout_mask(T * D2, p.dropout_rate, derive_seed(example_seed, "mask1"));
    c.mask2 = dropout_mask(H2, p.dropout_rate, derive_seed(example_seed, "mask2"));
    for (std::size_t k = 0; k < c.x2.size(); ++k) {
      c.x2[k] *= c.mask1[k];
    }
  } else {
    c.mask1.clear();
    c.mask2.clear();
  }

  run_layer(p.layer2, steps, [&](std::size_t s) { return DenseInput(c.x2.data() + s * D2, D2); },
            c.layer2);

  c.final_features.assign(H2, 0.0);
  if (steps > 0) {
    std::copy_n(c.layer2.h.data() + (T - 1) * H2, H2, c.final_features.data());
  }
  if (mode == Mode::Train) {
    for (std::size_t k = 0; k < H2; ++k) {
      c.final_features[k] *= c.mask2[k];
    }
  }
  c.logit = p.dense_b + std::inner_product(p.dense_w.begin(), p.dense_w.end(),
                                           c.final_features.begin(), 0.0);
  if (!std::isfinite(c.logit)) {
    throw Error(ErrorCode::NonFiniteActivation, "non-finite logit for " + seq.source_id);
  }
  c.prob = sigmoid(c.logit);
  return c.prob;
}

ForwardResult forward(const Batch& batch, const ModelParams& p, Mode mode,
                      std::uint64_t rng_seed) {
  ForwardResult out;
  out.probs.reserve(batch.sequences.size());
  out.cache.examples.resize(batch.sequences.size());
  for (std::size_t e = 0; e < batch.sequences.size(); ++e) {
    out.probs.push_back(forward_example(batch.sequences[e], p, mode,
                                        derive_seed(rng_seed, "dropout", e),
                                        &out.cache.examples[e]));
  }
  return out;
}

ForwardResult forward_bidirectional(const Batch& batch, const ModelParams& p, Mode mode,
                                    std::uint64_t rng_seed) {
  if (!p.bidirectional) {
    throw Error(ErrorCode::InvariantViolation, "model has no reverse layer");
  }
  return forward(batch, p, mode, rng_seed);
}

double loss(std::span<const double> probs, std::span<const int> labels,
            const ClassWeights& weights) {
  if (probs.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "probs and labels differ in length");
  }
  if (probs.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double prob = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    const int y = labels[i];
    total += weights[static_cast<std::size_t>(y)] *
             -(y == 1 ? std::log(prob) : std::log(1.0 - prob));
  }
  return total / static_cast<double>(probs.size());
}

void backward_example(const ExampleCache& c, int label, double scale, const ModelParams& p,
                      ModelParams& grads) {
  const int steps = c.length;
  const auto T = static_cast<std::size_t>(steps);
  const auto H1 = static_cast<std::size_t>(p.layer1.hidden);
  const auto H2 = static_cast<std::size_t>(p.layer2.hidden);
  const auto D2 = static_cast<std::size_t>(p.layer2.input_dim);

  const double dz = scale * (c.prob - static_cast<double>(label));
  grads.dense_b += dz;
  for (std::size_t k = 0; k < H2; ++k) {
    grads.dense_w[k] += dz * c.final_features[k];
  }
  if (steps == 0) {
    return;
  }

  std::vector<double> dh2(T * H2, 0.0);
  for (std::size_t k = 0; k < H2; ++k) {
    double d = dz * p.dense_w[k];
    if (!c.mask2.empty()) {
      d *= c.mask2[k];
    }
    dh2[(T - 1) * H2 + k] = d;
  }

  std::vector<double> dx2(T * D2, 0.0);
  backprop_layer(p.layer2, c.layer2, steps,
                 [&](std::size_t s) { return DenseInput(c.x2.data() + s * D2, D2); }, dh2,
                 grads.layer2, &dx2);
  if (!c.mask1.empty()) {
    for (std::size_t k = 0; k < dx2.size(); ++k) {
      dx2[k] *= c.mask1[k];
    }
  }

  const EncodedSequence& seq = *c.input;
  std::vector<double> dh1(T * H1, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(dx2.data() + t * D2, H1, dh1.data() + t * H1);
  }
  backprop_layer(p.layer1, c.layer1, steps,
                 [&](std::size_t s) -> const SparseVector& { return seq.steps[s]; }, dh1,
                 grads.layer1, nullptr);
  if (p.bidirectional) {
    for (std::size_t s = 0; s < T; ++s) {
      std::copy_n(dx2.data() + (T - 1 - s) * D2 + H1, H1, dh1.data() + s * H1);
    }
    backprop_layer(p.layer1_reverse, c.layer1_reverse, steps,
                   [&](std::size_t s) -> const SparseVector& { return seq.steps[T - 1 - s]; },
                   dh1, grads.layer1_reverse, nullptr);
  }
}

ModelParams backward(const ForwardCache& cache, std::span<const int> labels,
                     const ModelParams& p, const ClassWeights& weights) {
  if (cache.examples.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "cache and labels differ in length");
  }
  ModelParams grads = ModelParams::zeros(p.shape());
  const auto n = static_cast<double>(labels.size());
  for (std::size_t e = 0; e < labels.size(); ++e) {
    const int y = labels[e];
    backward_example(cache.examples[e], y, weights[static_cast<std::size_t>(y)] / n, p, grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const ModelParams& like, double lr, double beta1, double beta2,
                             double epsilon)
    : m_(ModelParams::zeros(like.shape())),
      v_(ModelParams::zeros(like.shape())),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {}

void AdamOptimizer::step(ModelParams& params, ModelParams& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto pb = blocks_of(params);
  auto gb = blocks_of(grads);
  auto mb = blocks_of(m_);
  auto vb = blocks_of(v_);
  for (std::size_t k = 0; k < pb.size(); ++k) {
    for (std::size_t i = 0; i < pb[k].size(); ++i) {
      const double g = gb[k][i];
      mb[k][i] = beta1_ * mb[k][i] + (1.0 - beta1_) * g;
      vb[k][i] = beta2_ * vb[k][i] + (1.0 - beta2_) * g * g;
      const double mhat = mb[k][i] / bc1;
      const double vhat = vb[k][i] / bc2;
      pb[k][i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

ClassWeights inverse_frequency_weights(std::span<const EncodedSequence> data) {
  std::array<double, 2> counts{0.0, 0.0};
  for (const EncodedSequence& s : data) {
    counts[static_cast<std::size_t>(s.label.value_or(0))] += 1.0;
  }
  const double n = counts[0] + counts[1];
  ClassWeights w{1.0, 1.0};
  for (std::size_t c = 0; c < 2; ++c) {
    if (counts[c] > 0.0) {
      w[c] = n / (2.0 * counts[c]);
    }
  }
  return w;
}

EvalSummary evaluate_loss(const ModelParams& p, std::span<const EncodedSequence> data,
                          const ClassWeights& weights) {
  EvalSummary out;
  std::vector<int> labels;
  labels.reserve(data.size());
  out.probs.reserve(data.size());
  int correct = 0;
  for (const EncodedSequence& s : data) {
    const double prob = forward_example(s, p, Mode::Eval, 0, nullptr);
    const int y = s.label.value_or(0);
    out.probs.push_back(prob);
    labels.push_back(y);
    correct += (prob >= 0.5 ? 1 : 0) == y ? 1 : 0;
  }
  out.loss = loss(out.probs, labels, weights);
  out.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

namespace {

void check_training_data(std::span<const EncodedSequence> data, int dim, const char* what) {
  for (const EncodedSequence& s : data) {
    if (!s.label || (*s.label != 0 && *s.label != 1)) {
      throw Error(ErrorCode::InvariantViolation, std::string(what) + " sequence without a 0/1 label");
    }
    if (s.dim != dim) {
      throw Error(ErrorCode::VocabMismatch, std::string(what) + " sequences disagree on dimension");
    }
  }
}

}  // namespace

TrainResult train(std::span<const EncodedSequence> train_set,
                  std::span<const EncodedSequence> val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorCode::TooFewItems, "training needs non-empty train and validation sets");
  }
  if (config.batch_size <= 0 || config.epochs < 0) {
    throw Error(ErrorCode::InvariantViolation, "batch size must be positive");
  }
  const int dim = train_set.front().dim;
  check_training_data(train_set, dim, "training");
  check_training_data(val_set, dim, "validation");

  TrainResult result;
  result.class_weights = config.class_weights.value_or(inverse_frequency_weights(train_set));
  const ModelShape shape{dim, config.hidden1, config.hidden2, config.bidirectional,
                         config.dropout_rate};
  ModelParams params = init_params(shape, derive_seed(config.seed, "init"));
  result.params = params;

  AdamOptimizer adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  ModelParams grads = ModelParams::zeros(shape);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  double best_acc = -1.0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        const auto n = static_cast<double>(end - start);
        const std::uint64_t step_seed =
            derive_seed(config.seed, "dropout", static_cast<std::uint64_t>(adam.steps()));
        fill_zero(grads);
        for (std::size_t k = start; k < end; ++k) {
          const EncodedSequence& seq = train_set[order[k]];
          ExampleCache cache;
          forward_example(seq, params, Mode::Train, derive_seed(step_seed, "example", k - start),
                          &cache);
          const int y = *seq.label;
          backward_example(cache, y, result.class_weights[static_cast<std::size_t>(y)] / n,
                           params, grads);
        }
        adam.step(params, grads);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteActivation) {
        throw;
      }
      throw TrainingDiverged(e.what(), result);
    }
    if (!all_finite(params)) {
      throw TrainingDiverged("non-finite parameters after epoch " + std::to_string(epoch), result);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    try {
      const EvalSummary tr = evaluate_loss(params, train_set, result.class_weights);
      const EvalSummary va = evaluate_loss(params, val_set, result.class_weights);
      rec.train_loss = tr.loss;
      rec.train_acc = tr.accuracy;
      rec.val_loss = va.loss;
      rec.val_acc = va.accuracy;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteActivation) {
        throw;
      }
      throw TrainingDiverged(e.what(), result);
    }
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch), result);
    }
    result.history.push_back(rec);
    if (on_epoch) {
      on_epoch(rec);
    }

    if (rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      result.best_epoch = epoch;
      result.params = params;
    } else if (config.early_stop_patience > 0 &&
               epoch - result.best_epoch >= config.early_stop_patience) {
      break;
    }
  }
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const EpochRecord& r : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out += line;
  }
  return out;
}

std::vector<Prediction> predict(const ModelParams& p, std::span<const EncodedSequence> sequences,
                                double threshold) {
  std::vector<Prediction> out;
  out.reserve(sequences.size());
  for (const EncodedSequence& s : sequences) {
    if (s.dim != p.input_dim()) {
      throw Error(ErrorCode::VocabMismatch,
                  s.source_id + ": input dimension " + std::to_string(s.dim) +
                      " does not match the model's " + std::to_string(p.input_dim()));
    }
    const double prob = forward_example(s, p, Mode::Eval, 0, nullptr);
    out.push_back({prob >= threshold ? 1 : 0, prob});
  }
  return out;
}

}  // namespace melodyclf
