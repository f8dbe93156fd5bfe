#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pica/policy.hpp"
#include "pica/reward_model.hpp"
#include "pica/trajectory_io.hpp"
#include "pica/world.hpp"

namespace pica {

inline Json to_json(const KnowledgeWorld& w) {
  Json edges = Json::array();
  for (const auto& e : w.edges()) edges.push_back({e.subject, e.relation, e.object});
  return Json{{"format", "pica-world/1"},
              {"seed", w.seed()},
              {"entities", w.entities()},
              {"relations", w.relations()},
              {"edges", std::move(edges)}};
}

inline KnowledgeWorld world_from_json(const Json& j) {
  try {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
    return KnowledgeWorld(j.at("entities").get<std::vector<std::string>>(),
                          j.at("relations").get<std::vector<std::string>>(), std::move(edges),
                          j.at("seed").get<std::uint64_t>());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed world file: ") + e.what());
  } catch (const ConstructionError& e) {
    throw FormatError(std::string("malformed world file: ") + e.what());
  }
}

inline Json to_json(const Task& t) { return Json{{"id", t.id}, {"start", t.start}, {"relations", t.relations}}; }

// Tasks are stored by (start, relations) and rebuilt against the world.
inline Task task_from_json(const KnowledgeWorld& w, const Json& j) {
  try {
    return make_task(w, j.at("start").get<std::string>(), j.at("relations").get<std::vector<std::string>>(),
                     j.at("id").get<std::uint64_t>());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed task record: ") + e.what());
  } catch (const ConstructionError& e) {
    throw FormatError(std::string("task does not fit the world: ") + e.what());
  }
}

inline Json to_json(const PolicyParams& p) {
  return Json{{"format", "pica-policy/1"}, {"theta", p.theta}, {"critic", p.critic}};
}

inline PolicyParams policy_from_json(const Json& j) {
  PolicyParams p;
  try {
    p.theta = j.at("theta").get<std::vector<double>>();
    p.critic = j.at("critic").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed policy checkpoint: ") + e.what());
  }
  if (p.theta.size() != policy_layout::kPolicyDim || p.critic.size() != policy_layout::kCritic)
    throw FormatError("policy checkpoint dimensions do not match this build");
  return p;
}

inline std::string read_text(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing " + what + ": " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json(const std::filesystem::path& path, const std::string& what) {
  auto text = read_text(path, what);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError(what + " " + path.string() + " is not valid JSON");
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline void write_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks) {
  std::string text;
  for (const auto& t : tasks) text += to_json(t).dump() + "\n";
  write_text(path, text);
}

inline std::vector<Task> read_tasks(const std::filesystem::path& path, const KnowledgeWorld& w) {
  std::istringstream in(read_text(path, "task file"));
  std::vector<Task> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError("task file " + path.string() + " has invalid JSON");
    out.push_back(task_from_json(w, j));
  }
  return out;
}

// Minimal CSV writer; numbers use a fixed 9-significant-digit format.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : width_(header.size()) { line(header); }

  Csv& row(std::initializer_list<std::string> cells) {
    if (cells.size() != width_) throw Error("csv row width mismatch");
    line(std::vector<std::string>(cells));
    return *this;
  }
  Csv& row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw Error("csv row width mismatch");
    line(cells);
    return *this;
  }

  const std::string& str() const { return text_; }

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }
  static std::string num(long long v) { return std::to_string(v); }
  static std::string num(int v) { return std::to_string(v); }
  static std::string num(std::size_t v) { return std::to_string(v); }

 private:
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }
  std::size_t width_;
  std::string text_;
};

// Reads a CSV with a header row into string cells.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path, "csv file"));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto& r = rows.emplace_back();
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) r.push_back(cell);
    if (!line.empty() && line.back() == ',') r.emplace_back();
  }
  return rows;
}

}  // namespace pica
