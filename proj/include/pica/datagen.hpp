#pragma once

#include <map>
#include <string>
#include <vector>

#include "pica/features.hpp"
#include "pica/trajectory.hpp"
#include "pica/world.hpp"

namespace pica {

// Relative weights of the scripted behaviors. Weights of behaviors that do
// not apply in the current state are dropped and the rest renormalized.
struct BehaviorMix {
  double golden_next_hop = 0.75;
  double random_relation = 0.09;
  double repeat_last = 0.05;
  double premature_answer = 0.07;
  double correct_answer_when_complete = 0.04;
};

struct RolloutOptions {
  RetrievalConfig retrieval;
  int max_turns = 5;
  int think_cap = 4;
  bool lenient_pivots = false;
};

enum class Behavior { GoldenNextHop, RandomRelation, RepeatLast, PrematureAnswer, CorrectAnswer };

namespace detail {

inline Behavior pick_behavior(const BehaviorMix& mix, const ChainTracker& tracker, Rng& rng) {
  const bool complete = tracker.complete();
  const std::pair<Behavior, double> options[] = {
      {Behavior::GoldenNextHop, mix.golden_next_hop},
      {Behavior::RandomRelation, mix.random_relation},
      {Behavior::RepeatLast, tracker.last_query() ? mix.repeat_last : 0.0},
      {Behavior::PrematureAnswer, complete ? 0.0 : mix.premature_answer},
      {Behavior::CorrectAnswer, complete ? mix.correct_answer_when_complete : 0.0},
  };
  double total = 0;
  for (const auto& [b, w] : options) total += std::max(w, 0.0);
  if (total <= 0) return Behavior::GoldenNextHop;
  double u = uniform01(rng) * total;
  for (const auto& [b, w] : options) {
    u -= std::max(w, 0.0);
    if (u < 0) return b;
  }
  return Behavior::GoldenNextHop;
}

inline std::string random_seen(const ChainTracker& tracker, Rng& rng) {
  const auto& seen = tracker.seen();
  return seen[uniform_index(rng, seen.size())];
}

}  // namespace detail

// Rolls out the scripted behavior policy on one task and annotates every
// search turn with the pivot oracle and the outcome with EM.
inline Trajectory rollout_behavior(const KnowledgeWorld& world, const Task& task, const BehaviorMix& mix, Rng& rng,
                                   const RolloutOptions& opts = {}) {
  Trajectory traj;
  traj.question = task.question();
  ChainTracker tracker(traj.question);
  for (int t = 1; t <= opts.max_turns; ++t) {
    Turn turn;
    std::optional<Query> query;
    if (t == opts.max_turns) {
      // Out of budget: best guess.
      turn.answer = tracker.complete() ? tracker.current() : detail::random_seen(tracker, rng);
    } else {
      switch (detail::pick_behavior(mix, tracker, rng)) {
        case Behavior::GoldenNextHop:
          if (tracker.complete())
            turn.answer = tracker.current();
          else
            query = Query{tracker.current(), *tracker.next_relation()};
          break;
        case Behavior::RandomRelation: {
          std::vector<std::string> rels;
          for (const auto& r : world.relations())
            if (!tracker.next_relation() || r != *tracker.next_relation()) rels.push_back(r);
          if (rels.empty()) rels = world.relations();
          query = Query{tracker.current(), rels[uniform_index(rng, rels.size())]};
          break;
        }
        case Behavior::RepeatLast:
          query = *tracker.last_query();
          break;
        case Behavior::PrematureAnswer:
          turn.answer = detail::random_seen(tracker, rng);
          break;
        case Behavior::CorrectAnswer:
          turn.answer = tracker.current();
          break;
      }
    }
    if (query) {
      turn.think = {tracker.current(), query->relation};
      if (static_cast<int>(turn.think.size()) > opts.think_cap) turn.think.resize(static_cast<std::size_t>(opts.think_cap));
      auto obs = retrieve(world, *query, rng, opts.retrieval);
      traj.pivot_labels.push_back(pivot_oracle(traj.turns, *query, obs.docs, task, opts.lenient_pivots));
      turn.search = std::move(*query);
      turn.info = std::move(obs.docs);
    }
    const bool done = turn.answer.has_value();
    tracker.apply(turn);
    traj.turns.push_back(std::move(turn));
    if (done) break;
  }
  traj.label = score_answer(*traj.final_answer(), traj.question.golds).em;
  return traj;
}

struct DatagenConfig {
  WorldConfig world;
  std::vector<int> hops{2, 3, 4};
  int task_count = 1000;
  int rollouts_per_task = 5;
  BehaviorMix mix;
  RolloutOptions rollout;
  bool filter = true;
  std::uint64_t seed = 1;
};

struct DatagenReport {
  std::size_t generated = 0;
  std::size_t filtered = 0;
  std::size_t successes = 0;
  std::size_t pivot_steps = 0;
  std::size_t non_pivot_steps = 0;
  std::map<int, std::size_t> per_hop;
};

// Drops trajectories with structural violations; returns how many.
inline std::size_t filter_trajectories(std::vector<Trajectory>& trajs, const ValidateOptions& opts) {
  const auto before = trajs.size();
  std::erase_if(trajs, [&](const Trajectory& t) { return !validate_trajectory(t, opts).empty(); });
  return before - trajs.size();
}

inline DatagenReport summarize(const Dataset& data) {
  DatagenReport r;
  for (const auto& t : data.trajectories) {
    r.successes += t.label == 1;
    ++r.per_hop[t.question.hops()];
    for (bool z : t.pivot_labels) (z ? r.pivot_steps : r.non_pivot_steps)++;
  }
  return r;
}

struct DatagenResult {
  KnowledgeWorld world;
  std::vector<Task> tasks;
  Dataset dataset;
  DatagenReport report;
};

// Tasks cycle through the hop list; every task and rollout has its own
// random stream, so output order and content depend only on the seeds.
inline DatagenResult build_dataset(const DatagenConfig& cfg) {
  if (cfg.hops.empty()) throw ConfigError("tasks.hops is empty");
  DatagenResult res;
  res.world = generate_world(cfg.world);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < cfg.task_count; ++i) {
    auto task_rng = make_rng(cfg.seed, {1, static_cast<std::uint64_t>(i)});
    const int hops = cfg.hops[static_cast<std::size_t>(i) % cfg.hops.size()];
    res.tasks.push_back(sample_task(res.world, hops, task_rng, static_cast<std::uint64_t>(i)));
    for (int j = 0; j < cfg.rollouts_per_task; ++j) {
      auto rng = make_rng(cfg.seed, {2, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
      trajs.push_back(rollout_behavior(res.world, res.tasks.back(), cfg.mix, rng, cfg.rollout));
    }
  }
  const auto generated = trajs.size();
  std::size_t filtered = 0;
  if (cfg.filter) filtered = filter_trajectories(trajs, {cfg.rollout.max_turns, true});
  if (trajs.empty()) throw Error("datagen: no trajectories survived filtering");
  res.dataset.trajectories = std::move(trajs);
  res.report = summarize(res.dataset);
  res.report.generated = generated;
  res.report.filtered = filtered;
  return res;
}

}  // namespace pica
