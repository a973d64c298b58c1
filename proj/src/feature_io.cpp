#include <json.hpp>

#include "melodyclf/preprocess.h"

namespace melodyclf {

using nlohmann::json;

std::string to_feature_line(const FeatureRecord& record) {
  const MelodySequence& seq = record.sequence;
  json rows = json::array();
  json bars = json::array();
  for (const FeatureRow& r : seq.rows) {
    rows.push_back({r.pitch, r.position, r.duration});
    bars.push_back(r.bar);
  }
  json j;
  j["source_id"] = seq.source_id;
  j["bars"] = seq.bars;
  j["short"] = seq.is_short;
  j["beats_per_bar"] = seq.beats_per_bar;
  if (record.label) {
    j["label"] = *record.label;
  }
  if (!record.split.empty()) {
    j["split"] = record.split;
  }
  j["rows"] = std::move(rows);
  j["bar_index"] = std::move(bars);
  return j.dump();
}

FeatureRecord parse_feature_line(const std::string& line) {
  FeatureRecord record;
  try {
    const json j = json::parse(line);
    MelodySequence& seq = record.sequence;
    seq.source_id = j.at("source_id").get<std::string>();
    seq.bars = j.at("bars").get<int>();
    seq.is_short = j.value("short", false);
    seq.beats_per_bar = j.value("beats_per_bar", kDefaultBeatsPerBar);
    const json& rows = j.at("rows");
    const json& bars = j.at("bar_index");
    if (rows.size() != bars.size()) {
      throw Error(ErrorCode::LengthMismatch, "rows and bar_index differ in length");
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      seq.rows.push_back({rows[i].at(0).get<int>(), rows[i].at(1).get<double>(),
                          rows[i].at(2).get<double>(), bars[i].get<int>()});
    }
    if (j.contains("label")) {
      record.label = j["label"].get<int>();
    }
    record.split = j.value("split", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad features line: ") + e.what());
  }
  return record;
}

}  // namespace melodyclf
