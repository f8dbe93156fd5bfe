#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pica/trajectory.hpp"

namespace pica {

using Json = nlohmann::ordered_json;

inline Json to_json(const Question& q) {
  return Json{{"task_id", q.task_id}, {"start", q.start}, {"relations", q.relations}, {"golds", q.golds}};
}

inline Json to_json(const Turn& t) {
  Json j;
  j["think"] = t.think;
  j["search"] = t.search ? Json::array({t.search->entity, t.search->relation}) : Json(nullptr);
  if (t.info) {
    Json docs = Json::array();
    for (const auto& f : *t.info) docs.push_back({f.subject, f.relation, f.object});
    j["info"] = std::move(docs);
  } else {
    j["info"] = nullptr;
  }
  j["answer"] = t.answer ? Json(*t.answer) : Json(nullptr);
  return j;
}

inline Json to_json(const Trajectory& traj) {
  Json turns = Json::array();
  for (const auto& t : traj.turns) turns.push_back(to_json(t));
  Json z = Json::array();
  for (bool b : traj.pivot_labels) z.push_back(b);
  return Json{{"question", to_json(traj.question)}, {"turns", std::move(turns)}, {"label", traj.label},
              {"pivot_labels", std::move(z)}};
}

namespace detail {

[[noreturn]] inline void bad_field(const std::string& path, const std::string& what) {
  throw FormatError("field '" + path + "': " + what);
}

inline const Json& require(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) bad_field(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) bad_field(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

inline std::string as_string(const Json& j, const std::string& path) {
  if (!j.is_string()) bad_field(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<std::string> as_strings(const Json& j, const std::string& path) {
  if (!j.is_array()) bad_field(path, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_string(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace detail

inline Question question_from_json(const Json& j, const std::string& path = "question") {
  using namespace detail;
  Question q;
  const auto& id = require(j, "task_id", path);
  if (!id.is_number_unsigned() && !(id.is_number_integer() && id.get<long long>() >= 0))
    bad_field(path + ".task_id", "expected a non-negative integer");
  q.task_id = id.get<std::uint64_t>();
  q.start = as_string(require(j, "start", path), path + ".start");
  q.relations = as_strings(require(j, "relations", path), path + ".relations");
  q.golds = as_strings(require(j, "golds", path), path + ".golds");
  return q;
}

inline Turn turn_from_json(const Json& j, const std::string& path) {
  using namespace detail;
  Turn t;
  if (!j.is_object()) bad_field(path, "expected an object");
  if (auto it = j.find("think"); it != j.end() && !it->is_null()) t.think = as_strings(*it, path + ".think");
  if (auto it = j.find("search"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_string() || !(*it)[1].is_string())
      bad_field(path + ".search", "expected [entity, relation]");
    t.search = Query{(*it)[0].get<std::string>(), (*it)[1].get<std::string>()};
  }
  if (auto it = j.find("info"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) bad_field(path + ".info", "expected an array of [s, r, o]");
    std::vector<Fact> docs;
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& d = (*it)[i];
      const auto p = path + ".info[" + std::to_string(i) + "]";
      if (!d.is_array() || d.size() != 3) bad_field(p, "expected [s, r, o]");
      docs.push_back({as_string(d[0], p), as_string(d[1], p), as_string(d[2], p)});
    }
    t.info = std::move(docs);
  }
  if (auto it = j.find("answer"); it != j.end() && !it->is_null()) t.answer = as_string(*it, path + ".answer");
  return t;
}

// Parses one trajectory record. Unlabeled records (label and pivot_labels
// absent) are accepted only when `require_labels` is false.
inline Trajectory trajectory_from_json(const Json& j, bool require_labels = true, const std::string& path = "") {
  using namespace detail;
  auto sub = [&](const std::string& k) { return path.empty() ? k : path + "." + k; };
  if (!j.is_object()) bad_field(path.empty() ? "record" : path, "expected an object");
  Trajectory traj;
  traj.question = question_from_json(require(j, "question", path), sub("question"));
  const auto& turns = require(j, "turns", path);
  if (!turns.is_array()) bad_field(sub("turns"), "expected an array");
  for (std::size_t i = 0; i < turns.size(); ++i)
    traj.turns.push_back(turn_from_json(turns[i], sub("turns") + "[" + std::to_string(i) + "]"));
  if (require_labels || j.contains("label")) {
    const auto& l = require(j, "label", path);
    if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) bad_field(sub("label"), "expected 0 or 1");
    traj.label = l.get<int>();
  }
  if (require_labels || j.contains("pivot_labels")) {
    const auto& z = require(j, "pivot_labels", path);
    if (!z.is_array()) bad_field(sub("pivot_labels"), "expected an array of booleans");
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!z[i].is_boolean()) bad_field(sub("pivot_labels") + "[" + std::to_string(i) + "]", "expected a boolean");
      traj.pivot_labels.push_back(z[i].get<bool>());
    }
  }
  return traj;
}

// One trajectory per line.
inline void persist(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& t : data.trajectories) out << to_json(t).dump() << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline Dataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open dataset " + path);
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      data.trajectories.push_back(trajectory_from_json(Json::parse(line)));
    } catch (const Json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace pica
