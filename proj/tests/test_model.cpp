#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "melodyclf/model.h"
#include "test_support.h"

using namespace melodyclf;
using namespace melodyclf::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

Batch random_batch(Rng& rng, int dim, int n, int max_len) {
  std::vector<EncodedSequence> seqs;
  for (int e = 0; e < n; ++e) {
    const int len = static_cast<int>(rng.range(1, max_len));
    seqs.push_back(random_dense_sequence(rng, dim, len, len, e % 2));
  }
  return pad_batch(std::move(seqs), max_len);
}

std::vector<EncodedSequence> toy_task(int n, std::uint64_t seed) {
  // Label is whether token 0 or token 1 dominates the sequence.
  Rng rng(seed);
  std::vector<EncodedSequence> out;
  for (int i = 0; i < n; ++i) {
    EncodedSequence s;
    s.dim = 4;
    s.label = i % 2;
    s.length = 6;
    for (int t = 0; t < 6; ++t) {
      const int tok = rng.bernoulli(0.85) ? *s.label : 1 - *s.label;
      s.steps.push_back({{tok, 1.0}, {2 + static_cast<int>(rng.below(2)), 1.0}});
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("lstm_cell matches the gate equations") {
  const ModelShape shape{5, 3, 2, false, 0.0};
  const ModelParams p = random_params(shape, 1, 0.5);
  Rng rng(2);
  std::vector<double> x(5), h(3), c(3);
  for (double& v : x) v = rng.uniform(-1, 1);
  for (double& v : h) v = rng.uniform(-1, 1);
  for (double& v : c) v = rng.uniform(-1, 1);
  const LstmState out = lstm_cell(x, h, c, p.layer1);
  for (int u = 0; u < 3; ++u) {
    double a[4];
    for (int g = 0; g < 4; ++g) {
      const int r = g * 3 + u;
      a[g] = p.layer1.b[static_cast<std::size_t>(r)];
      for (int j = 0; j < 5; ++j) a[g] += p.layer1.w_x(r, j) * x[static_cast<std::size_t>(j)];
      for (int k = 0; k < 3; ++k) a[g] += p.layer1.w_h(r, k) * h[static_cast<std::size_t>(k)];
    }
    const double cn = sigmoid(a[1]) * c[static_cast<std::size_t>(u)] + sigmoid(a[0]) * std::tanh(a[2]);
    CHECK(out.c[static_cast<std::size_t>(u)] == doctest::Approx(cn).epsilon(1e-12));
    CHECK(out.h[static_cast<std::size_t>(u)] ==
          doctest::Approx(sigmoid(a[3]) * std::tanh(cn)).epsilon(1e-12));
  }
}

TEST_CASE("sigmoid is stable at the extremes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
}

TEST_CASE("forward agrees with the scalar reference") {
  for (bool bi : {false, true}) {
    const ModelShape shape{9, 5, 3, bi, 0.4};
    const ModelParams p = random_params(shape, 10 + (bi ? 1 : 0), 0.4);
    Rng rng(4);
    const Batch b = random_batch(rng, 9, 6, 7);
    const ForwardResult eval = forward(b, p, Mode::Eval, 0);
    const ForwardResult tr = forward(b, p, Mode::Train, 77);
    for (std::size_t e = 0; e < b.sequences.size(); ++e) {
      CHECK(eval.probs[e] == doctest::Approx(reference_forward(b.sequences[e], p)).epsilon(1e-12));
      CHECK(tr.probs[e] == doctest::Approx(reference_forward(b.sequences[e], p,
                                                             &tr.cache.examples[e]))
                               .epsilon(1e-12));
    }
  }
}

TEST_CASE("forward_bidirectional requires a reverse layer") {
  const ModelParams p = random_params({4, 3, 2, false, 0.4}, 1, 0.3);
  CHECK(code_of([&] { forward_bidirectional(Batch{}, p, Mode::Eval, 0); }) ==
        ErrorCode::InvariantViolation);
}

TEST_CASE("dimension mismatches are rejected") {
  const ModelParams p = random_params({4, 3, 2, false, 0.4}, 1, 0.3);
  Rng rng(1);
  const EncodedSequence s = random_dense_sequence(rng, 5, 2, 2, 0);
  CHECK(code_of([&] { forward_example(s, p, Mode::Eval, 0, nullptr); }) ==
        ErrorCode::DimensionMismatch);
  const std::vector<EncodedSequence> seqs = {s};
  CHECK(code_of([&] { predict(p, seqs); }) == ErrorCode::VocabMismatch);
}

TEST_CASE("gradients match central differences") {
  for (bool bi : {false, true}) {
    for (Mode mode : {Mode::Eval, Mode::Train}) {
      const ModelShape shape{6, 4, 3, bi, 0.4};
      const ModelParams p = random_params(shape, 20, 0.5);
      Rng rng(8);
      const Batch b = random_batch(rng, 6, 3, 5);
      const GradCheckResult r = gradient_check(p, b, mode, 99, {1.3, 0.7});
      INFO("bidirectional=" << bi << " worst " << r.worst_block);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("padding does not change outputs or gradients") {
  const ModelShape shape{6, 4, 3, true, 0.4};
  const ModelParams p = random_params(shape, 5, 0.5);
  Rng rng(6);
  std::vector<EncodedSequence> seqs;
  for (int e = 0; e < 3; ++e) seqs.push_back(random_dense_sequence(rng, 6, 4, 4, e % 2));
  const Batch tight = pad_batch(seqs, 4);
  const Batch loose = pad_batch(seqs, 12);
  const auto a = forward(tight, p, Mode::Train, 3);
  const auto b = forward(loose, p, Mode::Train, 3);
  CHECK(a.probs == b.probs);
  CHECK(backward(a.cache, tight.labels, p) == backward(b.cache, loose.labels, p));
}

TEST_CASE("dropout masks have the right statistics") {
  const double rate = 0.4;
  const std::size_t n = 200000;
  const auto mask = dropout_mask(n, rate, 123);
  std::size_t zeros = 0;
  double sum = 0.0;
  for (double m : mask) {
    REQUIRE((m == 0.0 || m == doctest::Approx(1.0 / (1.0 - rate))));
    zeros += m == 0.0 ? 1 : 0;
    sum += m;
  }
  const double nd = static_cast<double>(n);
  const double sigma_rate = std::sqrt(rate * (1 - rate) / nd);
  CHECK(std::abs(static_cast<double>(zeros) / nd - rate) < 3 * sigma_rate);
  const double sigma_mean = std::sqrt(rate / (1 - rate) / nd);
  CHECK(std::abs(sum / nd - 1.0) < 3 * sigma_mean);

  CHECK(dropout_mask(50, rate, 9) == dropout_mask(50, rate, 9));
  CHECK(dropout_mask(50, rate, 9) != dropout_mask(50, rate, 10));
  for (double m : dropout_mask(100, 0.0, 1)) CHECK(m == 1.0);
}

TEST_CASE("eval mode ignores the seed, train mode reproduces it") {
  const ModelParams p = random_params({6, 4, 3, false, 0.4}, 2, 0.5);
  Rng rng(3);
  const Batch b = random_batch(rng, 6, 5, 5);
  CHECK(forward(b, p, Mode::Eval, 1).probs == forward(b, p, Mode::Eval, 2).probs);
  CHECK(forward(b, p, Mode::Train, 1).probs == forward(b, p, Mode::Train, 1).probs);
  CHECK(forward(b, p, Mode::Train, 1).probs != forward(b, p, Mode::Train, 2).probs);
  CHECK(forward(b, p, Mode::Eval, 1).cache.examples[0].mask1.empty());
}

TEST_CASE("loss is weighted BCE averaged over the batch") {
  const std::vector<double> probs = {0.9, 0.2};
  const std::vector<int> labels = {1, 0};
  const double expected = (2.0 * -std::log(0.9) + 0.5 * -std::log(0.8)) / 2.0;
  CHECK(loss(probs, labels, {0.5, 2.0}) == doctest::Approx(expected).epsilon(1e-14));
  const std::vector<double> saturated = {1.0, 0.0};
  const std::vector<int> wrong = {0, 1};
  CHECK(loss(saturated, wrong) == doctest::Approx(-std::log(kProbClamp)));
  const std::vector<int> short_labels = {1};
  CHECK(code_of([&] { loss(probs, short_labels); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("init_params shapes and recurrent orthogonality") {
  const ModelShape shape{20, 8, 4, true, 0.4};
  const ModelParams p = init_params(shape, 5);
  CHECK_NOTHROW(p.validate());
  CHECK(p.layer1.wx.size() == 4 * 8 * 20);
  CHECK(p.layer2.input_dim == 16);
  CHECK(p.dense_w.size() == 4);
  CHECK(p.layer1.b[8] == 1.0);
  CHECK(p.layer1.b[0] == 0.0);
  const double bound = std::sqrt(6.0 / (20 + 32));
  CHECK(max_abs(p.layer1.wx) <= bound);
  // Columns of W_h are orthonormal.
  for (int a = 0; a < 8; ++a) {
    for (int b = 0; b < 8; ++b) {
      double dot = 0.0;
      for (int r = 0; r < 32; ++r) dot += p.layer1.w_h(r, a) * p.layer1.w_h(r, b);
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
    }
  }
  CHECK(init_params(shape, 5) == p);
  CHECK_FALSE(init_params(shape, 6) == p);
}

TEST_CASE("Adam first step moves each parameter by lr against the gradient sign") {
  ModelParams p = ModelParams::zeros({2, 1, 1, false, 0.0});
  ModelParams g = ModelParams::zeros({2, 1, 1, false, 0.0});
  g.dense_b = 3.0;
  g.dense_w[0] = -0.5;
  AdamOptimizer adam(p, 0.01, 0.9, 0.999, 1e-8);
  adam.step(p, g);
  CHECK(p.dense_b == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.dense_w[0] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p.layer1.wx[0] == 0.0);

  // Second step with the same gradient: m_hat = g, v_hat = g^2.
  adam.step(p, g);
  CHECK(p.dense_b == doctest::Approx(-0.02).epsilon(1e-6));
  CHECK(adam.steps() == 2);
}

TEST_CASE("inverse frequency weights") {
  std::vector<EncodedSequence> data(8);
  for (std::size_t i = 0; i < 8; ++i) data[i].label = i < 6 ? 0 : 1;
  const ClassWeights w = inverse_frequency_weights(data);
  CHECK(w[0] == doctest::Approx(8.0 / 12.0));
  CHECK(w[1] == doctest::Approx(2.0));
}

TEST_CASE("training learns a toy task deterministically") {
  const auto tr = toy_task(48, 1);
  const auto va = toy_task(24, 2);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.early_stop_patience = 0;
  int calls = 0;
  const TrainResult a = train(tr, va, cfg, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == 40);
  CHECK(a.history.size() == 40);
  const TrainResult b = train(tr, va, cfg);
  CHECK(a.history == b.history);
  CHECK(a.params == b.params);
  CHECK(a.history[static_cast<std::size_t>(a.best_epoch - 1)].val_acc >= 0.9);
  double best = 0.0;
  for (const auto& r : a.history) best = std::max(best, r.val_acc);
  CHECK(a.history[static_cast<std::size_t>(a.best_epoch - 1)].val_acc == best);
  CHECK(evaluate_loss(a.params, va, a.class_weights).accuracy == best);
  CHECK(a.history.back().train_loss < a.history.front().train_loss);

  const std::string csv = history_csv(a.history);
  CHECK(csv.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
}

TEST_CASE("early stopping honours patience") {
  const auto tr = toy_task(16, 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.hidden1 = 4;
  cfg.hidden2 = 2;
  cfg.early_stop_patience = 3;
  const TrainResult r = train(tr, tr, cfg);
  CHECK(static_cast<int>(r.history.size()) <= r.best_epoch + 3);
  CHECK(r.history.size() < 200);
}

TEST_CASE("divergence raises with the last good parameters") {
  const auto tr = toy_task(16, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden1 = 4;
  cfg.hidden2 = 2;
  cfg.learning_rate = 1e308;
  try {
    train(tr, tr, cfg);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.code() == ErrorCode::Diverged);
    CHECK_NOTHROW(e.last_good().params.validate());
  }
}

TEST_CASE("training rejects bad inputs") {
  const auto tr = toy_task(4, 5);
  CHECK(code_of([&] { train(tr, {}, TrainConfig{}); }) == ErrorCode::TooFewItems);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK(code_of([&] { train(tr, tr, bad); }) == ErrorCode::InvariantViolation);
}

TEST_CASE("predict applies the threshold") {
  ModelParams p = ModelParams::zeros({4, 2, 2, false, 0.4});
  p.dense_b = 0.5;  // every prob is sigmoid(0.5)
  const auto seqs = toy_task(3, 6);
  for (const auto& pr : predict(p, seqs)) {
    CHECK(pr.label == 1);
    CHECK(pr.prob == doctest::Approx(sigmoid(0.5)));
  }
  for (const auto& pr : predict(p, seqs, 0.7)) CHECK(pr.label == 0);
}

TEST_CASE("checkpoints restore every bit") {
  for (bool bi : {false, true}) {
    const ModelParams p = random_params({7, 5, 3, bi, 0.25}, 3, 1.0);
    const std::string text = save_checkpoint(p, "00112233aabbccdd");
    const Checkpoint ck = load_checkpoint(text);
    CHECK(ck.params == p);
    CHECK(ck.vocab_digest == "00112233aabbccdd");
    CHECK(load_checkpoint(text, "00112233aabbccdd") == p);
  }
}

TEST_CASE("checkpoint errors") {
  const ModelParams p = random_params({7, 5, 3, false, 0.4}, 3, 1.0);
  const std::string text = save_checkpoint(p, "d1");
  CHECK(code_of([&] { load_checkpoint(text, "d2"); }) == ErrorCode::DigestMismatch);
  CHECK(code_of([] { load_checkpoint("{not json"); }) == ErrorCode::CorruptCheckpoint);
  CHECK(code_of([] { load_checkpoint("{}"); }) == ErrorCode::CorruptCheckpoint);

  auto j = nlohmann::ordered_json::parse(text);
  auto edit = [&](auto&& fn) {
    auto copy = j;
    fn(copy);
    return copy.dump();
  };
  CHECK(code_of([&] { load_checkpoint(edit([](auto& c) { c["version"] = 99; })); }) ==
        ErrorCode::VersionMismatch);
  CHECK(code_of([&] {
          load_checkpoint(edit([](auto& c) { c["blocks"]["layer2.wh"]["data"].erase(0); }));
        }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] {
          load_checkpoint(edit([](auto& c) { c["blocks"]["dense.w"]["shape"] = {4}; }));
        }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { load_checkpoint(edit([](auto& c) { c["blocks"].erase("dense.b"); })); }) ==
        ErrorCode::CorruptCheckpoint);
  CHECK(code_of([&] {
          load_checkpoint(edit([](auto& c) { c["blocks"]["dense.b"]["data"][0] = "x"; }));
        }) == ErrorCode::CorruptCheckpoint);
  CHECK(code_of([&] { load_checkpoint(edit([](auto& c) { c.erase("hidden1"); })); }) ==
        ErrorCode::CorruptCheckpoint);
}
