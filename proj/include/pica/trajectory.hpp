#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "pica/metrics.hpp"
#include "pica/types.hpp"

namespace pica {

struct Trajectory {
  Question question;
  std::vector<Turn> turns;
  int label = 0;                   // outcome l: EM of the final answer
  std::vector<bool> pivot_labels;  // z: one per search turn

  int num_turns() const { return static_cast<int>(turns.size()); }
  int num_searches() const {
    int n = 0;
    for (const auto& t : turns) n += t.search.has_value();
    return n;
  }
  const std::string* final_answer() const {
    if (turns.empty() || !turns.back().answer) return nullptr;
    return &*turns.back().answer;
  }
  bool operator==(const Trajectory&) const = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  bool operator==(const Dataset&) const = default;
};

enum class Source { Model, Env };

struct Token {
  int id;
  Source source;
  bool operator==(const Token&) const = default;
};

// Interns symbols. Ids 0..7 are the block delimiters.
class SymbolTable {
 public:
  enum Marker : int { ThinkOpen, ThinkClose, SearchOpen, SearchClose, InfoOpen, InfoClose, AnswerOpen, AnswerClose };

  SymbolTable() {
    for (const char* m : {"<think>", "</think>", "<search>", "</search>", "<information>", "</information>",
                          "<answer>", "</answer>"})
      intern(m);
  }

  int intern(const std::string& symbol) {
    auto [it, fresh] = ids_.emplace(symbol, static_cast<int>(symbols_.size()));
    if (fresh) symbols_.push_back(symbol);
    return it->second;
  }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return symbols_.size(); }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> symbols_;
};

struct TokenizedTrajectory {
  std::vector<Token> tokens;
  std::vector<int> mask;        // I(y): 1 for model tokens, 0 for env tokens
  std::vector<int> turn_of;     // 0-based turn index of each token
  std::vector<std::size_t> anchors;  // per turn: index of its last model token
};

// Flattens turns into a symbol stream. Info blocks (delimiters included)
// come from the environment; everything else is model-generated.
inline TokenizedTrajectory tokenize_with_mask(const Trajectory& traj, SymbolTable& table) {
  TokenizedTrajectory out;
  int turn_index = 0;
  auto push = [&](int id, Source src) {
    out.tokens.push_back({id, src});
    out.mask.push_back(src == Source::Model ? 1 : 0);
    out.turn_of.push_back(turn_index);
  };
  using M = SymbolTable::Marker;
  for (const auto& turn : traj.turns) {
    std::size_t anchor = out.tokens.size();
    if (!turn.think.empty()) {
      push(M::ThinkOpen, Source::Model);
      for (const auto& s : turn.think) push(table.intern(s), Source::Model);
      push(M::ThinkClose, Source::Model);
      anchor = out.tokens.size() - 1;
    }
    if (turn.search) {
      push(M::SearchOpen, Source::Model);
      push(table.intern(turn.search->entity), Source::Model);
      push(table.intern(turn.search->relation), Source::Model);
      push(M::SearchClose, Source::Model);
      anchor = out.tokens.size() - 1;
    }
    if (turn.info) {
      push(M::InfoOpen, Source::Env);
      for (const auto& f : *turn.info) {
        push(table.intern(f.subject), Source::Env);
        push(table.intern(f.relation), Source::Env);
        push(table.intern(f.object), Source::Env);
      }
      push(M::InfoClose, Source::Env);
    }
    if (turn.answer) {
      push(M::AnswerOpen, Source::Model);
      push(table.intern(*turn.answer), Source::Model);
      push(M::AnswerClose, Source::Model);
      anchor = out.tokens.size() - 1;
    }
    out.anchors.push_back(anchor);
    ++turn_index;
  }
  return out;
}

enum class ViolationKind {
  EmptyTrajectory,
  LabelCountMismatch,
  AnswerNotInFinalTurn,
  TurnBudgetExceeded,
  EmptySearchAction,
  DuplicateAnswer,
  SearchAndAnswer,
  EmptyTurn,
  OutcomeLabelMismatch,
};

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::EmptyTrajectory: return "empty trajectory";
    case ViolationKind::LabelCountMismatch: return "label-count mismatch";
    case ViolationKind::AnswerNotInFinalTurn: return "answer not in final turn";
    case ViolationKind::TurnBudgetExceeded: return "turn budget exceeded";
    case ViolationKind::EmptySearchAction: return "empty search action";
    case ViolationKind::DuplicateAnswer: return "duplicate answer spans";
    case ViolationKind::SearchAndAnswer: return "search and answer in one turn";
    case ViolationKind::EmptyTurn: return "turn has neither search nor answer";
    case ViolationKind::OutcomeLabelMismatch: return "outcome label mismatch";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  int turn;  // 1-based, 0 when not turn-specific
  std::string message;
};

struct ValidateOptions {
  int max_turns = 5;
  bool check_labels = true;  // off for unlabeled policy rollouts
};

inline std::vector<Violation> validate_trajectory(const Trajectory& traj, const ValidateOptions& opts = {}) {
  std::vector<Violation> out;
  auto flag = [&](ViolationKind k, int turn, std::string detail) {
    std::string msg = to_string(k);
    if (turn > 0) msg += " at turn " + std::to_string(turn);
    if (!detail.empty()) msg += ": " + detail;
    out.push_back({k, turn, std::move(msg)});
  };
  if (traj.turns.empty()) {
    flag(ViolationKind::EmptyTrajectory, 0, "");
    return out;
  }
  if (traj.num_turns() > opts.max_turns)
    flag(ViolationKind::TurnBudgetExceeded, 0,
         std::to_string(traj.num_turns()) + " turns, max_turns=" + std::to_string(opts.max_turns));
  int answers = 0;
  for (std::size_t i = 0; i < traj.turns.size(); ++i) {
    const auto& t = traj.turns[i];
    const int n = static_cast<int>(i) + 1;
    if (t.search && t.answer) flag(ViolationKind::SearchAndAnswer, n, "");
    if (!t.search && !t.answer) flag(ViolationKind::EmptyTurn, n, "");
    if (t.search && (t.search->entity.empty() || t.search->relation.empty()))
      flag(ViolationKind::EmptySearchAction, n, "");
    if (t.answer) ++answers;
  }
  if (answers > 1) flag(ViolationKind::DuplicateAnswer, 0, std::to_string(answers) + " answer spans");
  if (!traj.turns.back().answer) flag(ViolationKind::AnswerNotInFinalTurn, 0, "");
  if (opts.check_labels) {
    const int searches = traj.num_searches();
    if (static_cast<int>(traj.pivot_labels.size()) != searches)
      flag(ViolationKind::LabelCountMismatch, 0,
           std::to_string(traj.pivot_labels.size()) + " labels for " + std::to_string(searches) + " search turns");
    if (const auto* ans = traj.final_answer(); ans && !traj.question.golds.empty()) {
      if (score_answer(*ans, traj.question.golds).em != traj.label)
        flag(ViolationKind::OutcomeLabelMismatch, 0, "label " + std::to_string(traj.label) + " disagrees with EM");
    }
  }
  return out;
}

}  // namespace pica
