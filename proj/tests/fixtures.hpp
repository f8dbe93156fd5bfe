#pragma once

#include <string>
#include <vector>

#include "pica/pica.hpp"

namespace fixtures {

using namespace pica;

// Alma-mater world: who studied where, and when that school began issuing
// engineering degrees. Distractors share relations with the golden chain.
inline KnowledgeWorld perry_world() {
  return KnowledgeWorld::from_facts({
      {"William C. Perry", "alma mater", "University of Kansas"},
      {"University of Kansas", "engineering degrees since", "1873"},
      {"University of Kansas", "engineering school", "KU School of Engineering"},
      {"KU School of Engineering", "first degree year", "1873"},
      {"Perry Belmont", "alma mater", "Columbia University"},
      {"Columbia University", "engineering degrees since", "1864"},
      {"William Perry", "alma mater", "Stanford University"},
      {"Stanford University", "engineering degrees since", "1891"},
      {"Stanford University", "engineering school", "Stanford Engineering"},
      {"Stanford Engineering", "first degree year", "1893"},
  });
}

inline Task perry_task(const KnowledgeWorld& w) {
  return make_task(w, "William C. Perry", {"alma mater", "engineering degrees since"}, 7);
}

inline Task perry_task3(const KnowledgeWorld& w) {
  return make_task(w, "William C. Perry", {"alma mater", "engineering school", "first degree year"}, 8);
}

// Golden fact for hop i plus two distractors with the same relation.
inline std::vector<Fact> observation(const KnowledgeWorld& w, const Task& t, std::size_t i, bool with_hit = true) {
  std::vector<Fact> docs;
  const auto& rel = t.golden_sub_queries[i].relation;
  const auto golden = golden_fact(t, i);
  for (const auto& e : w.edges()) {
    const auto f = w.fact(e);
    if (f.relation == rel && f != golden && docs.size() < 2) docs.push_back(f);
  }
  if (with_hit) docs.insert(docs.begin() + 1, golden);
  return docs;
}

// Searches every golden hop in order, then answers.
inline Trajectory golden_trajectory(const KnowledgeWorld& w, const Task& t, const std::string& answer = "") {
  Trajectory traj;
  traj.question = t.question();
  for (std::size_t i = 0; i < static_cast<std::size_t>(t.hop_count); ++i) {
    Turn turn;
    turn.think = {t.golden_sub_queries[i].entity, t.golden_sub_queries[i].relation};
    turn.search = t.golden_sub_queries[i];
    turn.info = observation(w, t, i);
    traj.pivot_labels.push_back(true);
    traj.turns.push_back(turn);
  }
  Turn last;
  last.answer = answer.empty() ? t.gold_answer : answer;
  traj.turns.push_back(last);
  traj.label = score_answer(*last.answer, traj.question.golds).em;
  return traj;
}

// Behavior-policy rollouts on a generated world; a realistic mix of labels.
inline std::vector<Trajectory> behavior_corpus(std::uint64_t seed, int tasks, int per_task = 2) {
  DatagenConfig cfg;
  cfg.seed = seed;
  cfg.world.seed = seed;
  cfg.task_count = tasks;
  cfg.rollouts_per_task = per_task;
  return build_dataset(cfg).dataset.trajectories;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline RewardModelParams random_params(Rng& rng, double scale = 0.7) {
  RewardModelParams p;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::normal_distribution<double>(0.0, scale)(rng);
  return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

}  // namespace fixtures
