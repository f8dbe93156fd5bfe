#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "pica/policy.hpp"
#include "pica/reward_model.hpp"
#include "pica/shaping.hpp"
#include "pica/world.hpp"

namespace pica {

// Reward arms of the ablation.
enum class Arm { Outcome, Penalty, Pica };

inline const char* arm_name(Arm a) {
  switch (a) {
    case Arm::Outcome: return "outcome";
    case Arm::Penalty: return "penalty";
    case Arm::Pica: return "pica";
  }
  return "?";
}

inline Arm parse_arm(const std::string& s) {
  if (s == "outcome" || s == "f1") return Arm::Outcome;
  if (s == "penalty" || s == "f1+penalty") return Arm::Penalty;
  if (s == "pica" || s == "f1+penalty+pica") return Arm::Pica;
  throw ConfigError("unknown arm '" + s + "' (expected outcome, penalty or pica)");
}

inline ShapingConfig shaping_for(Arm arm, ShapingConfig base) {
  base.use_penalty = arm != Arm::Outcome;
  base.use_step_reward = arm == Arm::Pica;
  return base;
}

// Source of deployed PiCA step rewards, one list per trajectory.
class StepRewardSource {
 public:
  virtual ~StepRewardSource() = default;
  virtual std::vector<std::vector<StepReward>> rewards(std::span<const Trajectory> trajs) = 0;
};

class InProcessRewards : public StepRewardSource {
 public:
  InProcessRewards(RewardModelParams params, RewardScaling scaling = {})
      : params_(std::move(params)), scaling_(scaling) {
    params_.check();
  }
  std::vector<std::vector<StepReward>> rewards(std::span<const Trajectory> trajs) override {
    std::vector<std::vector<StepReward>> out;
    for (const auto& t : trajs) out.push_back(step_rewards(params_, t, scaling_));
    return out;
  }

 private:
  RewardModelParams params_;
  RewardScaling scaling_;
};

struct EpisodeOptions {
  RetrievalConfig retrieval;
  int max_turns = 5;
  double temperature = 1.0;
  bool greedy = false;
};

struct Episode {
  Trajectory trajectory;
  std::vector<TokenStep> tokens;  // same order as tokenize_with_mask
  std::vector<int> turn_of;
  std::vector<double> values;  // V(s_t) at the start of each turn
  std::vector<std::vector<double>> critic_features;
  double f1 = 0;
};

namespace detail {

inline TokenStep choose(const PolicyParams& p, CandidateSet cands, Rng& rng, const EpisodeOptions& o,
                        std::size_t* chosen) {
  TokenStep tok;
  tok.mask = 1;
  const auto lp = log_softmax(p.theta, cands, o.temperature);
  PolicyInput in{std::move(cands), {}};
  const auto pick = policy_step(p, in, rng, o.temperature, o.greedy);
  tok.candidates = std::move(in.candidates);
  tok.chosen = pick.action;
  tok.old_log_prob = pick.log_prob;
  tok.old_log_probs = lp;
  *chosen = pick.action;
  return tok;
}

inline TokenStep fixed_token(int mask) {
  TokenStep t;
  t.mask = mask;
  return t;
}

}  // namespace detail

// Generates one trajectory token by token. Delimiters after a decision are
// forced; info blocks come from the retriever and are masked out.
inline Episode rollout_policy(const PolicyParams& p, const KnowledgeWorld& world, const Task& task, Rng& rng,
                              const EpisodeOptions& o = {}) {
  Episode ep;
  ep.trajectory.question = task.question();
  ChainTracker tracker(ep.trajectory.question);
  auto emit = [&](TokenStep tok, int turn) {
    ep.tokens.push_back(std::move(tok));
    ep.turn_of.push_back(turn);
  };
  for (int t = 1; t <= o.max_turns; ++t) {
    const int ti = t - 1;
    ep.critic_features.push_back(policy_features::critic_state(tracker, t, o.max_turns));
    ep.values.push_back(critic_value(p, ep.critic_features.back()));
    const bool can_search = t < o.max_turns;
    std::size_t decision = 0;
    emit(detail::choose(p, policy_features::decision(tracker, t, o.max_turns, can_search), rng, o, &decision), ti);
    Turn turn;
    if (can_search && decision == 0) {
      std::size_t e = 0, r = 0;
      const auto ents = tracker.seen();
      emit(detail::choose(p, policy_features::search_entity(tracker), rng, o, &e), ti);
      emit(detail::choose(p, policy_features::relation(tracker, world.relations()), rng, o, &r), ti);
      emit(detail::fixed_token(1), ti);
      Query q{ents[e], world.relations()[r]};
      auto obs = retrieve(world, q, rng, o.retrieval);
      ep.trajectory.pivot_labels.push_back(pivot_oracle(ep.trajectory.turns, q, obs.docs, task));
      emit(detail::fixed_token(0), ti);
      for (std::size_t k = 0; k < obs.docs.size() * 3; ++k) emit(detail::fixed_token(0), ti);
      emit(detail::fixed_token(0), ti);
      turn.search = q;
      turn.info = std::move(obs.docs);
    } else {
      std::size_t e = 0;
      const auto ents = tracker.seen();
      emit(detail::choose(p, policy_features::answer_entity(tracker), rng, o, &e), ti);
      emit(detail::fixed_token(1), ti);
      turn.answer = ents[e];
    }
    const bool done = turn.answer.has_value();
    tracker.apply(turn);
    ep.trajectory.turns.push_back(std::move(turn));
    if (done) break;
  }
  const auto score = score_answer(*ep.trajectory.final_answer(), ep.trajectory.question.golds);
  ep.trajectory.label = score.em;
  ep.f1 = score.f1;
  return ep;
}

struct PolicyTrainConfig {
  int updates = 200;
  int prompts_per_update = 16;
  int n_agent = 5;
  PPOConfig ppo;
  ShapingConfig shaping;
  double penalty_lambda = 0.1;
  double penalty_alpha = 1.2;
  RetrievalConfig retrieval;
  int max_turns = 5;
  std::uint64_t seed = 1;
  double divergence_bound = 100.0;  // abort when mean |A~| exceeds this
};

struct CurvePoint {
  int step = 0;
  std::string arm;
  double success_rate = 0;
  double f1 = 0;
  double mean_turns = 0;
  double mean_reward = 0;
  double kl = 0;
  double clip_fraction = 0;
};

struct PolicyTrainResult {
  PolicyParams params;
  std::vector<CurvePoint> curve;
};

inline PolicyTrainResult train_policy(const KnowledgeWorld& world, const std::vector<Task>& tasks, Arm arm,
                                      StepRewardSource* rewards, const PolicyTrainConfig& cfg,
                                      PolicyParams init = {}) {
  if (arm == Arm::Pica && rewards == nullptr) throw MissingArtifactError("missing reward model for the pica arm");
  if (tasks.empty()) throw Error("train_policy: no training tasks");
  const PenaltySchedule penalty(cfg.penalty_lambda, cfg.penalty_alpha);
  auto shaping = shaping_for(arm, cfg.shaping);
  shaping.max_turns = cfg.max_turns;
  EpisodeOptions eo{cfg.retrieval, cfg.max_turns, cfg.ppo.temperature, false};

  PolicyTrainResult res;
  res.params = std::move(init);
  for (int step = 1; step <= cfg.updates; ++step) {
    auto prompt_rng = make_rng(cfg.seed, {4, static_cast<std::uint64_t>(step)});
    std::vector<Episode> episodes;
    for (int i = 0; i < cfg.prompts_per_update; ++i) {
      const auto& task = tasks[uniform_index(prompt_rng, tasks.size())];
      for (int j = 0; j < cfg.n_agent; ++j) {
        auto rng = make_rng(cfg.seed, {3, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(j)});
        episodes.push_back(rollout_policy(res.params, world, task, rng, eo));
      }
    }

    std::vector<std::vector<StepReward>> step_r;
    if (arm == Arm::Pica) {
      std::vector<Trajectory> trajs;
      for (const auto& e : episodes) trajs.push_back(e.trajectory);
      step_r = rewards->rewards(trajs);
      if (step_r.size() != trajs.size()) throw Error("reward source returned the wrong number of trajectories");
    }

    PpoBatch batch;
    CurvePoint pt;
    pt.step = step;
    pt.arm = arm_name(arm);
    double abs_adv = 0;
    std::size_t n_turns = 0;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      auto& ep = episodes[i];
      std::vector<double> deployed;
      if (arm == Arm::Pica)
        for (const auto& r : step_r[i]) deployed.push_back(r.deployed);
      const auto sched = assemble_turn_rewards(ep.trajectory, deployed, penalty, shaping);
      auto trace = advantage_trace(sched.rewards, ep.values, cfg.ppo.gamma, cfg.ppo.lambda_gae);
      broadcast_to_tokens(trace, ep.turn_of);
      const auto targets = reward_to_go(sched.rewards, cfg.ppo.gamma);
      for (std::size_t k = 0; k < ep.tokens.size(); ++k) {
        ep.tokens[k].advantage = trace.token_advantages[k];
        batch.tokens.push_back(std::move(ep.tokens[k]));
      }
      for (std::size_t t = 0; t < targets.size(); ++t) batch.critic.push_back({ep.critic_features[t], targets[t]});
      for (double a : trace.discounted) abs_adv += std::abs(a);
      n_turns += trace.discounted.size();
      pt.success_rate += ep.trajectory.label;
      pt.f1 += ep.f1;
      pt.mean_turns += ep.trajectory.num_turns();
      for (double r : sched.rewards) pt.mean_reward += r;
    }
    const double n = static_cast<double>(episodes.size());
    pt.success_rate /= n;
    pt.f1 /= n;
    pt.mean_turns /= n;
    pt.mean_reward /= n;
    if (abs_adv / static_cast<double>(n_turns) > cfg.divergence_bound)
      throw DivergenceError("mean |advantage| " + std::to_string(abs_adv / static_cast<double>(n_turns)) +
                            " exceeds bound at update " + std::to_string(step));

    PpoStats stats;
    res.params = ppo_update(res.params, batch, cfg.ppo, &stats);
    pt.kl = stats.kl;
    pt.clip_fraction = stats.clip_fraction;
    res.curve.push_back(pt);
  }
  return res;
}

struct EvalRow {
  int hops = 0;  // 0 = all
  std::size_t tasks = 0;
  double em = 0;
  double f1 = 0;
  double mean_turns = 0;
};

// Greedy decoding on each task; retrieval noise is seeded per task.
inline std::vector<EvalRow> evaluate_policy(const PolicyParams& p, const KnowledgeWorld& world,
                                            const std::vector<Task>& tasks, const EpisodeOptions& base,
                                            std::uint64_t seed) {
  std::map<int, EvalRow> rows;
  EvalRow all;
  auto o = base;
  o.greedy = true;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto rng = make_rng(seed, {5, static_cast<std::uint64_t>(i)});
    const auto ep = rollout_policy(p, world, tasks[i], rng, o);
    for (auto* r : {&rows[tasks[i].hop_count], &all}) {
      ++r->tasks;
      r->em += ep.trajectory.label;
      r->f1 += ep.f1;
      r->mean_turns += ep.trajectory.num_turns();
    }
  }
  std::vector<EvalRow> out;
  auto finish = [](EvalRow r, int hops) {
    r.hops = hops;
    if (r.tasks) {
      const double n = static_cast<double>(r.tasks);
      r.em /= n;
      r.f1 /= n;
      r.mean_turns /= n;
    }
    return r;
  };
  for (const auto& [h, r] : rows) out.push_back(finish(r, h));
  out.push_back(finish(all, 0));
  return out;
}

struct TaskSplit {
  std::vector<Task> train;
  std::vector<Task> held_out;
};

// Disjoint train / held-out task pools (keyed by start entity + path).
inline TaskSplit make_task_split(const KnowledgeWorld& world, const std::vector<int>& hops, int train_count,
                                 int eval_count, std::uint64_t seed) {
  if (hops.empty()) throw ConfigError("tasks.hops is empty");
  TaskSplit split;
  std::set<std::pair<std::string, std::vector<std::string>>> used;
  auto rng = make_rng(seed, {6});
  const int total = train_count + eval_count;
  int attempts = 0;
  while (static_cast<int>(split.train.size() + split.held_out.size()) < total) {
    if (++attempts > 200 * std::max(total, 1)) throw SamplingError("world too small for the requested task split");
    const int idx = static_cast<int>(split.train.size() + split.held_out.size());
    const int h = hops[static_cast<std::size_t>(idx) % hops.size()];
    auto task = sample_task(world, h, rng, static_cast<std::uint64_t>(idx));
    if (!used.insert({task.start, task.relations}).second) continue;
    (idx < train_count ? split.train : split.held_out).push_back(std::move(task));
  }
  return split;
}

}  // namespace pica
