/// @file
/// @brief Versioned JSON checkpoints.
///
/// Layout:
///   {"format": "melodyclf-checkpoint", "version": 1, "vocab_digest": "...",
///    "input_dim": D, "hidden1": H1, "hidden2": H2, "bidirectional": false,
///    "dropout_rate": 0.4,
///    "blocks": {"layer1.wx": {"shape": [4*H1, D], "data": [...]}, ...}}
/// Weight matrices are column-major (see LstmLayerParams). Doubles are
/// written in shortest round-trip form, so loading restores every bit.

#include <json.hpp>

#include "melodyclf/model.h"

namespace melodyclf {

using nlohmann::ordered_json;

namespace {

constexpr const char* kFormatTag = "melodyclf-checkpoint";

std::vector<int> block_shape(const ModelParams& p, const std::string& name) {
  auto layer = [](const LstmLayerParams& l, const std::string& part) -> std::vector<int> {
    if (part == "wx") return {4 * l.hidden, l.input_dim};
    if (part == "wh") return {4 * l.hidden, l.hidden};
    return {4 * l.hidden};
  };
  const auto dot = name.find('.');
  const std::string prefix = name.substr(0, dot);
  const std::string part = name.substr(dot + 1);
  if (prefix == "layer1") return layer(p.layer1, part);
  if (prefix == "layer1_reverse") return layer(p.layer1_reverse, part);
  if (prefix == "layer2") return layer(p.layer2, part);
  if (part == "w") return {static_cast<int>(p.dense_w.size())};
  return {1};
}

}  // namespace

std::string save_checkpoint(const ModelParams& p, const std::string& vocab_digest) {
  p.validate();
  ordered_json j;
  j["format"] = kFormatTag;
  j["version"] = kCheckpointVersion;
  j["vocab_digest"] = vocab_digest;
  j["input_dim"] = p.layer1.input_dim;
  j["hidden1"] = p.layer1.hidden;
  j["hidden2"] = p.layer2.hidden;
  j["bidirectional"] = p.bidirectional;
  j["dropout_rate"] = p.dropout_rate;
  ordered_json blocks = ordered_json::object();
  ModelParams copy = p;
  visit_blocks(copy, [&](const std::string& name, std::span<double> data) {
    ordered_json block;
    block["shape"] = block_shape(p, name);
    block["data"] = std::vector<double>(data.begin(), data.end());
    blocks[name] = std::move(block);
  });
  j["blocks"] = std::move(blocks);
  return j.dump();
}

Checkpoint load_checkpoint(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("unreadable checkpoint: ") + e.what());
  }

  Checkpoint out;
  try {
    if (!j.is_object() || j.value("format", std::string{}) != kFormatTag) {
      throw Error(ErrorCode::CorruptCheckpoint, "not a melodyclf checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error(ErrorCode::VersionMismatch,
                  "checkpoint version " + std::to_string(version) + " is not supported");
    }
    ModelShape shape;
    shape.input_dim = j.at("input_dim").get<int>();
    shape.hidden1 = j.at("hidden1").get<int>();
    shape.hidden2 = j.at("hidden2").get<int>();
    shape.bidirectional = j.at("bidirectional").get<bool>();
    shape.dropout_rate = j.at("dropout_rate").get<double>();
    out.vocab_digest = j.at("vocab_digest").get<std::string>();
    out.params = ModelParams::zeros(shape);

    const ordered_json& blocks = j.at("blocks");
    const ModelParams& ref = out.params;
    visit_blocks(out.params, [&](const std::string& name, std::span<double> data) {
      if (!blocks.contains(name)) {
        throw Error(ErrorCode::CorruptCheckpoint, "missing block " + name);
      }
      const ordered_json& block = blocks.at(name);
      if (block.at("shape").get<std::vector<int>>() != block_shape(ref, name)) {
        throw Error(ErrorCode::DimensionMismatch, "block " + name + " has an unexpected shape");
      }
      const ordered_json& values = block.at("data");
      if (!values.is_array() || values.size() != data.size()) {
        throw Error(ErrorCode::DimensionMismatch, "block " + name + " has the wrong size");
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (!values[i].is_number()) {
          throw Error(ErrorCode::CorruptCheckpoint, "non-numeric value in " + name);
        }
        data[i] = values[i].get<double>();
      }
    });
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("malformed checkpoint: ") + e.what());
  }
  out.params.validate();
  return out;
}

ModelParams load_checkpoint(const std::string& text, const std::string& expected_vocab_digest) {
  Checkpoint ck = load_checkpoint(text);
  if (ck.vocab_digest != expected_vocab_digest) {
    throw Error(ErrorCode::DigestMismatch, "checkpoint was trained with vocabulary " +
                                               ck.vocab_digest + ", not " +
                                               expected_vocab_digest);
  }
  return std::move(ck.params);
}

}  // namespace melodyclf
