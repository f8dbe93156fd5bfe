#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include "pica/trajectory.hpp"

namespace pica {

// Follows the relation path of a question using only what the agent has
// seen: the question and retrieved facts. `current` is the entity the next
// hop should start from; `hop` counts resolved hops.
class ChainTracker {
 public:
  explicit ChainTracker(const Question& q) : question_(&q), current_(q.start) { note_entity(q.start); }

  struct Signals {
    bool is_search = false;
    bool is_answer = false;
    bool on_frontier = false;   // query == (current, next relation)
    bool frontier_hit = false;  // ... and the observation answers it
    bool repeated_query = false;
    bool off_chain_relation = false;
    bool wrong_entity = false;
    bool new_entity = false;
    bool answer_match = false;  // chain resolved and answer == resolved entity
    bool answer_incomplete = false;
    bool answer_mismatch = false;
  };

  // Describes `turn` relative to the state before it is applied.
  Signals inspect(const Turn& turn) const {
    Signals s;
    const int k = hops();
    if (turn.search) {
      const auto& q = *turn.search;
      s.is_search = true;
      s.on_frontier = hop_ < k && q.entity == current_ && q.relation == question_->relations[hop_index()];
      s.frontier_hit = s.on_frontier && turn.info && frontier_object(*turn.info).has_value();
      s.repeated_query = queries_.count(q) > 0;
      s.off_chain_relation =
          std::find(question_->relations.begin(), question_->relations.end(), q.relation) == question_->relations.end();
      s.wrong_entity = q.entity != current_;
    }
    if (turn.info) {
      for (const auto& f : *turn.info)
        if (!is_seen(f.subject) || !is_seen(f.object)) s.new_entity = true;
    }
    if (turn.answer) {
      s.is_answer = true;
      if (hop_ < k)
        s.answer_incomplete = true;
      else if (*turn.answer == current_)
        s.answer_match = true;
      else
        s.answer_mismatch = true;
    }
    return s;
  }

  void apply(const Turn& turn) {
    if (turn.search) {
      const bool frontier =
          hop_ < hops() && turn.search->entity == current_ && turn.search->relation == question_->relations[hop_index()];
      std::optional<std::string> next;
      if (frontier && turn.info) next = frontier_object(*turn.info);
      queries_.insert(*turn.search);
      last_query_ = *turn.search;
      last_on_frontier_ = frontier;
      last_hit_ = next.has_value();
      if (next) {
        current_ = *next;
        ++hop_;
      }
    }
    if (turn.info) {
      last_info_ = *turn.info;
      for (const auto& f : *turn.info) {
        note_entity(f.subject);
        note_entity(f.object);
      }
    }
    ++turns_;
  }

  int hops() const { return question_->hops(); }
  int hop() const { return hop_; }
  bool complete() const { return hop_ >= hops(); }
  int turns_taken() const { return turns_; }
  const std::string& current() const { return current_; }
  const Question& question() const { return *question_; }
  const std::vector<std::string>& seen() const { return seen_; }
  bool is_seen(const std::string& e) const { return seen_set_.count(e) > 0; }
  const std::optional<Query>& last_query() const { return last_query_; }
  bool last_on_frontier() const { return last_on_frontier_; }
  bool last_hit() const { return last_hit_; }
  const std::vector<Fact>& last_info() const { return last_info_; }
  // Relation of the next unresolved hop, if any.
  const std::string* next_relation() const { return complete() ? nullptr : &question_->relations[hop_index()]; }

 private:
  std::size_t hop_index() const { return static_cast<std::size_t>(hop_); }

  std::optional<std::string> frontier_object(const std::vector<Fact>& docs) const {
    const auto& rel = question_->relations[hop_index()];
    for (const auto& f : docs)
      if (f.subject == current_ && f.relation == rel) return f.object;
    return std::nullopt;
  }

  void note_entity(const std::string& e) {
    if (seen_set_.insert(e).second) seen_.push_back(e);
  }

  const Question* question_;
  std::string current_;
  int hop_ = 0;
  int turns_ = 0;
  std::vector<std::string> seen_;
  std::set<std::string> seen_set_;
  std::set<Query> queries_;
  std::optional<Query> last_query_;
  bool last_on_frontier_ = false;
  bool last_hit_ = false;
  std::vector<Fact> last_info_;
};

// Reward-model features. Question features drive the prior h_0; turn
// features drive the per-turn logit increment.
namespace rm_features {

inline const std::vector<std::string>& question_names() {
  static const std::vector<std::string> names{"bias", "hops_2", "hops_3", "hops_4", "hops_5plus"};
  return names;
}

inline const std::vector<std::string>& turn_names() {
  static const std::vector<std::string> names{
      "is_search",        "is_answer",       "on_frontier",      "frontier_hit",   "frontier_miss",
      "repeated_query",   "off_chain_rel",   "wrong_entity",     "new_entity",     "answer_match",
      "answer_incomplete", "answer_mismatch", "progress_before", "turn_position"};
  return names;
}

inline std::vector<double> question(const Question& q) {
  const int k = q.hops();
  return {1.0, k == 2 ? 1.0 : 0.0, k == 3 ? 1.0 : 0.0, k == 4 ? 1.0 : 0.0, k >= 5 ? 1.0 : 0.0};
}

inline std::vector<double> turn(const ChainTracker& tracker, const Turn& t, int max_turns) {
  const auto s = tracker.inspect(t);
  auto b = [](bool v) { return v ? 1.0 : 0.0; };
  const double k = std::max(tracker.hops(), 1);
  return {b(s.is_search),
          b(s.is_answer),
          b(s.on_frontier),
          b(s.frontier_hit),
          b(s.on_frontier && !s.frontier_hit),
          b(s.repeated_query),
          b(s.off_chain_relation),
          b(s.wrong_entity),
          b(s.new_entity),
          b(s.answer_match),
          b(s.answer_incomplete),
          b(s.answer_mismatch),
          tracker.hop() / k,
          static_cast<double>(tracker.turns_taken() + 1) / std::max(max_turns, 1)};
}

// Turn feature rows for every turn of a trajectory, in order.
inline std::vector<std::vector<double>> turns(const Trajectory& traj, int max_turns) {
  ChainTracker tracker(traj.question);
  std::vector<std::vector<double>> rows;
  rows.reserve(traj.turns.size());
  for (const auto& t : traj.turns) {
    rows.push_back(turn(tracker, t, max_turns));
    tracker.apply(t);
  }
  return rows;
}

}  // namespace rm_features

}  // namespace pica
