#pragma once

#include <fstream>
#include <sstream>

#include "kineverse/ops.hpp"

namespace kineverse {

// kmodel: a model persisted as its build recipe. Loading replays the
// operations, so the file format never has to encode derived state.
//   {"version": 1, "history": [{"tag": ..., "kind": ..., "args": {...}}, ...]}

inline Json history_to_json(const std::vector<OperationHistory::Entry>& entries) {
  Json ops = Json::array();
  for (const auto& e : entries)
    ops.push_back(Json{{"tag", e.tag}, {"kind", e.op.kind}, {"args", e.op.args}});
  return Json{{"version", 1}, {"history", std::move(ops)}};
}

inline std::string save_kmodel(const std::vector<OperationHistory::Entry>& entries) {
  return history_to_json(entries).dump(2) + "\n";
}

inline std::string save_kmodel(const OperationHistory& history) {
  return save_kmodel(history.entries());
}

inline OperationHistory load_kmodel(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("$: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("$: kmodel must be a JSON object");
  if (!j.contains("version") || !j.at("version").is_number_integer() ||
      j.at("version").get<int>() != 1)
    throw FormatError("$.version: must be the integer 1");
  if (!j.contains("history") || !j.at("history").is_array())
    throw FormatError("$.history: missing or not an array");

  OperationHistory h;
  const Json& arr = j.at("history");
  for (size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "$.history[" + std::to_string(i) + "]";
    const Json& e = arr[i];
    if (!e.is_object()) throw FormatError(where + ": must be an object");
    if (!e.contains("tag") || !e.at("tag").is_string())
      throw FormatError(where + ".tag: missing or not a string");
    if (!e.contains("kind") || !e.at("kind").is_string())
      throw FormatError(where + ".kind: missing or not a string");
    Json args = e.contains("args") ? e.at("args") : Json::object();
    if (!args.is_object()) throw FormatError(where + ".args: must be an object");
    h.apply_operation(e.at("tag").get<std::string>(),
                      Operation{e.at("kind").get<std::string>(), std::move(args)});
  }
  return h;
}

inline void save_kmodel_file(const std::string& file, const OperationHistory& history) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + file);
  out << save_kmodel(history);
  if (!out.flush()) throw Error("write failed: " + file);
}

inline OperationHistory load_kmodel_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open: " + file);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_kmodel(buf.str());
}

}  // namespace kineverse
