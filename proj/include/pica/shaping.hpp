#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pica/metrics.hpp"
#include "pica/reward_model.hpp"
#include "pica/trajectory.hpp"

namespace pica {

// Exponentially growing per-turn cost from turn 3 on.
class PenaltySchedule {
 public:
  PenaltySchedule(double lambda = 0.1, double alpha = 1.2) : lambda_(lambda), alpha_(alpha) {
    if (!(lambda >= 0.0 && lambda <= 0.5))
      throw ConfigError("penalty.lambda = " + std::to_string(lambda) + " out of range [0, 0.5]");
    if (!(alpha >= 1.0 && alpha <= 1.5))
      throw ConfigError("penalty.alpha = " + std::to_string(alpha) + " out of range [1, 1.5]");
  }
  double lambda() const { return lambda_; }
  double alpha() const { return alpha_; }

 private:
  double lambda_;
  double alpha_;
};

inline double step_penalty(int t, const PenaltySchedule& s) {
  if (t < 1) throw Error("step_penalty: turn index must be >= 1");
  if (t < 3) return 0.0;
  return s.lambda() * std::pow(s.alpha(), t - 3);
}

struct OutcomeConfig {
  double outcome_reward_scale = 1.5;
  double malformed_format_reward = -1.0;
};

inline double outcome_reward(const std::string& prediction, const std::vector<std::string>& golds, bool format_valid,
                             const OutcomeConfig& cfg = {}) {
  if (golds.empty()) throw FormatError("outcome_reward: empty gold set");
  if (!format_valid) return cfg.malformed_format_reward;
  return cfg.outcome_reward_scale * score_answer(prediction, golds).f1;
}

struct TurnComponents {
  double pica_deployed = 0;
  double penalty = 0;
  double outcome = 0;
};

struct TurnRewardSchedule {
  std::vector<double> rewards;       // R_t, t = 1..T
  std::vector<std::size_t> anchors;  // token index of each turn's last model token
  std::vector<TurnComponents> components;
};

// Which reward terms are switched on; the three ablation arms differ only here.
struct ShapingConfig {
  bool use_step_reward = true;
  bool use_penalty = true;
  OutcomeConfig outcome;
  RewardScaling scaling;
  int max_turns = 5;
};

// R_t = step_t - penalty(t) for t < T; the final turn also gets the outcome.
inline TurnRewardSchedule assemble_turn_rewards(const Trajectory& traj, std::span<const double> step_deployed,
                                                const PenaltySchedule& penalty, const ShapingConfig& cfg) {
  const auto* answer = traj.final_answer();
  if (!answer) throw Error("assemble_turn_rewards: trajectory has no final answer turn");
  const auto T = traj.turns.size();
  if (cfg.use_step_reward && step_deployed.size() != T)
    throw Error("assemble_turn_rewards: step reward count does not match turn count");
  SymbolTable table;
  const auto tokens = tokenize_with_mask(traj, table);
  const bool format_valid = validate_trajectory(traj, {cfg.max_turns, false}).empty();

  TurnRewardSchedule out;
  out.anchors = tokens.anchors;
  for (std::size_t i = 0; i < T; ++i) {
    TurnComponents c;
    if (cfg.use_step_reward) c.pica_deployed = step_deployed[i];
    if (cfg.use_penalty) c.penalty = step_penalty(static_cast<int>(i) + 1, penalty);
    if (i + 1 == T) c.outcome = outcome_reward(*answer, traj.question.golds, format_valid, cfg.outcome);
    out.components.push_back(c);
    out.rewards.push_back(c.pica_deployed - c.penalty + c.outcome);
  }
  return out;
}

inline TurnRewardSchedule assemble_turn_rewards(const Trajectory& traj, const RewardModelParams& params,
                                                const PenaltySchedule& penalty, const ShapingConfig& cfg) {
  std::vector<double> deployed;
  if (cfg.use_step_reward)
    for (const auto& r : step_rewards(params, traj, cfg.scaling)) deployed.push_back(r.deployed);
  return assemble_turn_rewards(traj, deployed, penalty, cfg);
}

}  // namespace pica
