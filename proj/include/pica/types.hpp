#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pica {

// A (subject, relation, object) fact, as seen by the agent.
struct Fact {
  std::string subject;
  std::string relation;
  std::string object;
  auto operator<=>(const Fact&) const = default;
};

// A search action: look up `relation` of `entity`.
struct Query {
  std::string entity;
  std::string relation;
  auto operator<=>(const Query&) const = default;
};

// What the agent is told about a task: start entity plus relation path.
// Intermediate entities are never part of the question.
struct Question {
  std::uint64_t task_id = 0;
  std::string start;
  std::vector<std::string> relations;
  std::vector<std::string> golds;
  int hops() const { return static_cast<int>(relations.size()); }
  bool operator==(const Question&) const = default;
};

// One interaction block: think + search + info, or think + answer.
struct Turn {
  std::vector<std::string> think;
  std::optional<Query> search;
  std::optional<std::vector<Fact>> info;
  std::optional<std::string> answer;
  bool operator==(const Turn&) const = default;
};

inline bool contains_fact(const std::vector<Fact>& docs, const Fact& f) {
  for (const auto& d : docs)
    if (d == f) return true;
  return false;
}

}  // namespace pica
