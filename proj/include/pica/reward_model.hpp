#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pica/common.hpp"
#include "pica/features.hpp"
#include "pica/trajectory.hpp"

namespace pica {

struct EpochLog {
  int epoch = 0;
  double gold_loss = 0;
  double final_loss = 0;
  double total = 0;
};

// Linear-logit success model:
//   f(t) = sigmoid(h_0 + sum_{k<=t} delta_k),
//   h_0 = question_weights . q,  delta_k = step_weights . x_k.
struct RewardModelParams {
  std::vector<std::string> question_features = rm_features::question_names();
  std::vector<std::string> turn_features = rm_features::turn_names();
  int max_turns = 5;
  std::vector<double> question_weights = std::vector<double>(rm_features::question_names().size(), 0.0);
  std::vector<double> step_weights = std::vector<double>(rm_features::turn_names().size(), 0.0);

  std::uint64_t seed = 0;
  double lambda_g = 1.0;
  std::vector<EpochLog> loss_history;

  std::size_t size() const { return question_weights.size() + step_weights.size(); }
  // Flat view: question weights first, then step weights.
  double& operator[](std::size_t i) {
    return i < question_weights.size() ? question_weights[i] : step_weights[i - question_weights.size()];
  }
  double operator[](std::size_t i) const {
    return i < question_weights.size() ? question_weights[i] : step_weights[i - question_weights.size()];
  }

  void check() const {
    if (question_features != rm_features::question_names() || turn_features != rm_features::turn_names())
      throw FormatError("reward model feature config does not match this build's feature set");
    if (question_weights.size() != question_features.size() || step_weights.size() != turn_features.size())
      throw FormatError("reward model weight dimensions do not match the feature config");
    for (std::size_t i = 0; i < size(); ++i)
      if (!std::isfinite((*this)[i])) throw FormatError("reward model has non-finite weights");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Features of one trajectory, computed once and reused across epochs.
struct RmExample {
  std::vector<double> question;
  std::vector<std::vector<double>> turns;
  std::vector<int> pivot_turns;  // 1-based turn indices with z = true
  int label = 0;
};

inline RmExample make_example(const Trajectory& traj, int max_turns) {
  RmExample ex;
  ex.question = rm_features::question(traj.question);
  ex.turns = rm_features::turns(traj, max_turns);
  ex.label = traj.label;
  std::size_t search_idx = 0;
  for (std::size_t i = 0; i < traj.turns.size(); ++i) {
    if (!traj.turns[i].search) continue;
    if (search_idx < traj.pivot_labels.size() && traj.pivot_labels[search_idx]) ex.pivot_turns.push_back(static_cast<int>(i) + 1);
    ++search_idx;
  }
  return ex;
}

struct SuccessCurve {
  std::vector<double> logits;  // h(0..T)
  std::vector<double> f;       // f(0..T)
  std::vector<double> g;       // g(1..T), stored at index t-1
  std::vector<double> phi;     // Phi(0..T) = log f

  int turns() const { return static_cast<int>(g.size()); }
  double gain(int t) const { return g.at(static_cast<std::size_t>(t - 1)); }
};

inline SuccessCurve success_curve(const RewardModelParams& p, const RmExample& ex) {
  SuccessCurve c;
  double h = dot(p.question_weights, ex.question);
  c.logits.push_back(h);
  for (const auto& x : ex.turns) {
    h += dot(p.step_weights, x);
    c.logits.push_back(h);
  }
  for (double v : c.logits) {
    c.f.push_back(sigmoid(v));
    c.phi.push_back(log_sigmoid(v));
  }
  for (std::size_t t = 1; t < c.f.size(); ++t) c.g.push_back((c.f[t] - c.f[t - 1]) / c.f[t - 1]);
  return c;
}

inline SuccessCurve success_curve(const RewardModelParams& p, const Trajectory& traj) {
  p.check();
  return success_curve(p, make_example(traj, p.max_turns));
}

struct LossConfig {
  double lambda_g = 1.0;
  double g_min = 1e-4;  // below this the gold term switches to the hinge
  double margin = 0.1;
};

struct LossBreakdown {
  double gold_loss = 0;
  double final_loss = 0;
  double total = 0;
  double lambda_g = 1.0;
};

// Losses for one example; if `grad` is non-empty, adds d(total)/d(params)
// into it (flat layout, see RewardModelParams::operator[]).
inline LossBreakdown example_losses(const RewardModelParams& p, const RmExample& ex, const LossConfig& cfg,
                                    std::span<double> grad = {}) {
  const auto c = success_curve(p, ex);
  const std::size_t T = ex.turns.size();
  std::vector<double> dh(T + 1, 0.0);  // d(total)/d h_t

  LossBreakdown lb;
  lb.lambda_g = cfg.lambda_g;
  for (int t : ex.pivot_turns) {
    const auto ti = static_cast<std::size_t>(t);
    const double g = c.g[ti - 1];
    if (g > cfg.g_min) {
      lb.gold_loss += -std::log(g);
      const double a = c.f[ti], b = c.f[ti - 1];
      dh[ti] += cfg.lambda_g * (-(a * (1 - a) / b) / g);
      dh[ti - 1] += cfg.lambda_g * ((a * (1 - b) / b) / g);
    } else {
      const double slack = cfg.margin - (c.logits[ti] - c.logits[ti - 1]);
      if (slack > 0) {
        lb.gold_loss += slack;
        dh[ti] -= cfg.lambda_g;
        dh[ti - 1] += cfg.lambda_g;
      }
    }
  }
  const double hT = c.logits[T];
  if (ex.label == 1) {
    lb.final_loss = -log_sigmoid(hT);
    dh[T] += sigmoid(hT) - 1.0;
  } else {
    lb.final_loss = -log_sigmoid(-hT);
    dh[T] += sigmoid(hT);
  }
  lb.total = lb.final_loss + cfg.lambda_g * lb.gold_loss;

  if (!grad.empty()) {
    // h_t = h_0 + sum_{k<=t} delta_k, so dL/dh_0 collects every dh and
    // dL/d delta_k collects the suffix sum from k.
    double suffix = 0;
    const std::size_t nq = p.question_weights.size();
    for (std::size_t k = T; k >= 1; --k) {
      suffix += dh[k];
      for (std::size_t i = 0; i < ex.turns[k - 1].size(); ++i) grad[nq + i] += suffix * ex.turns[k - 1][i];
    }
    suffix += dh[0];
    for (std::size_t i = 0; i < nq; ++i) grad[i] += suffix * ex.question[i];
  }
  return lb;
}

inline LossBreakdown reward_model_losses(const RewardModelParams& p, const Trajectory& traj, const LossConfig& cfg = {}) {
  p.check();
  return example_losses(p, make_example(traj, p.max_turns), cfg);
}

// Mean losses over a set of examples, plus 0.5 * l2 * |w|^2 in `total`.
inline LossBreakdown mean_losses(const RewardModelParams& p, std::span<const RmExample> examples, const LossConfig& cfg,
                                 double l2 = 0.0, std::span<double> grad = {}) {
  LossBreakdown sum;
  sum.lambda_g = cfg.lambda_g;
  if (examples.empty()) return sum;
  std::vector<double> g(grad.empty() ? 0 : p.size(), 0.0);
  for (const auto& ex : examples) {
    auto lb = example_losses(p, ex, cfg, g);
    sum.gold_loss += lb.gold_loss;
    sum.final_loss += lb.final_loss;
    sum.total += lb.total;
  }
  const double n = static_cast<double>(examples.size());
  sum.gold_loss /= n;
  sum.final_loss /= n;
  sum.total /= n;
  double sq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += p[i] * p[i];
  sum.total += 0.5 * l2 * sq;
  if (!grad.empty())
    for (std::size_t i = 0; i < p.size(); ++i) grad[i] = g[i] / n + l2 * p[i];
  return sum;
}

struct RmTrainConfig {
  LossConfig loss;
  double learning_rate = 0.05;
  int batch_size = 64;
  int epochs = 20;
  double l2 = 0.1;
  double grad_clip = 5.0;  // max gradient L2 norm per step; <= 0 disables
  int max_turns = 5;
  std::uint64_t seed = 1;
};

struct RmTrainResult {
  RewardModelParams params;
  std::vector<std::string> warnings;
};

// Mini-batch gradient descent on mean(final + lambda_g * gold).
inline RmTrainResult train_reward_model(const Dataset& data, const RmTrainConfig& cfg) {
  if (data.trajectories.empty()) throw Error("train_reward_model: empty dataset");
  RmTrainResult res;
  auto& p = res.params;
  p.max_turns = cfg.max_turns;
  p.seed = cfg.seed;
  p.lambda_g = cfg.loss.lambda_g;

  std::vector<RmExample> examples;
  examples.reserve(data.trajectories.size());
  int positives = 0;
  for (const auto& t : data.trajectories) {
    examples.push_back(make_example(t, cfg.max_turns));
    positives += t.label;
  }
  if (positives == 0 || positives == static_cast<int>(examples.size()))
    res.warnings.push_back("dataset has a single outcome class; final loss is degenerate");

  auto log_epoch = [&](int epoch) {
    auto lb = mean_losses(p, examples, cfg.loss);
    p.loss_history.push_back({epoch, lb.gold_loss, lb.final_loss, lb.total});
  };
  log_epoch(0);

  Rng rng = make_rng(cfg.seed, {0x726d});
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(p.size());
  std::vector<RmExample> batch;
  const auto bs = static_cast<std::size_t>(std::max(cfg.batch_size, 1));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) batch.push_back(examples[order[i]]);
      mean_losses(p, batch, cfg.loss, cfg.l2, grad);
      double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
      const double scale = (cfg.grad_clip > 0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * scale * grad[i];
    }
    log_epoch(epoch);
  }
  return res;
}

struct RewardScaling {
  double temperature = 1.0;
  double step_reward_scale = 0.3;
  double baseline_step_reward = 0.55;
};

struct StepReward {
  double raw = 0;         // Phi(t) - Phi(t-1) = log(1 + g(t))
  double normalized = 0;  // sigmoid(raw / temperature), in (0, 1)
  double deployed = 0;    // scale * 2 * (normalized - baseline)
};

inline StepReward scale_step_reward(double raw, const RewardScaling& s = {}) {
  StepReward r;
  r.raw = raw;
  r.normalized = sigmoid(raw / s.temperature);
  r.deployed = s.step_reward_scale * 2.0 * (r.normalized - s.baseline_step_reward);
  return r;
}

// Step rewards for turns 1..T of a success curve.
inline std::vector<StepReward> step_rewards(const SuccessCurve& c, const RewardScaling& s = {}) {
  std::vector<StepReward> out;
  for (std::size_t t = 1; t < c.phi.size(); ++t) out.push_back(scale_step_reward(c.phi[t] - c.phi[t - 1], s));
  return out;
}

inline std::vector<StepReward> step_rewards(const RewardModelParams& p, const Trajectory& traj,
                                            const RewardScaling& s = {}) {
  return step_rewards(success_curve(p, traj), s);
}

// Reward for turn t (1-based) given the prefix through t.
inline StepReward pica_step_reward(const RewardModelParams& p, const Trajectory& traj, int t,
                                   const RewardScaling& s = {}) {
  if (t < 1 || t > traj.num_turns()) throw Error("pica_step_reward: turn index out of range");
  Trajectory prefix = traj;
  prefix.turns.resize(static_cast<std::size_t>(t));
  const auto c = success_curve(p, prefix);
  return scale_step_reward(c.phi[static_cast<std::size_t>(t)] - c.phi[static_cast<std::size_t>(t) - 1], s);
}

// Summary of step rewards split by pivot label (search turns only).
struct PivotRewardStats {
  std::size_t pivot_turns = 0;
  std::size_t non_pivot_turns = 0;
  double mean_gain_pivot = 0;
  double mean_gain_non_pivot = 0;
  double mean_normalized_pivot = 0;
  double mean_normalized_non_pivot = 0;
  double frac_pivot_positive_deployed = 0;
  std::vector<double> normalized_pivot;
  std::vector<double> normalized_non_pivot;
};

inline PivotRewardStats pivot_reward_stats(const RewardModelParams& p, const Dataset& data,
                                           const RewardScaling& s = {}) {
  PivotRewardStats st;
  std::size_t positive = 0;
  for (const auto& traj : data.trajectories) {
    const auto c = success_curve(p, traj);
    const auto rewards = step_rewards(c, s);
    std::size_t search_idx = 0;
    for (std::size_t i = 0; i < traj.turns.size(); ++i) {
      if (!traj.turns[i].search) continue;
      const bool pivot = search_idx < traj.pivot_labels.size() && traj.pivot_labels[search_idx];
      ++search_idx;
      if (pivot) {
        ++st.pivot_turns;
        st.mean_gain_pivot += c.g[i];
        st.normalized_pivot.push_back(rewards[i].normalized);
        positive += rewards[i].deployed > 0;
      } else {
        ++st.non_pivot_turns;
        st.mean_gain_non_pivot += c.g[i];
        st.normalized_non_pivot.push_back(rewards[i].normalized);
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  if (st.pivot_turns) {
    st.mean_gain_pivot /= static_cast<double>(st.pivot_turns);
    st.frac_pivot_positive_deployed = static_cast<double>(positive) / static_cast<double>(st.pivot_turns);
  }
  if (st.non_pivot_turns) st.mean_gain_non_pivot /= static_cast<double>(st.non_pivot_turns);
  st.mean_normalized_pivot = mean(st.normalized_pivot);
  st.mean_normalized_non_pivot = mean(st.normalized_non_pivot);
  return st;
}

// Checkpoint: feature config + flat weights + metadata.
inline nlohmann::ordered_json to_json(const RewardModelParams& p) {
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : p.loss_history)
    hist.push_back({{"epoch", e.epoch}, {"gold_loss", e.gold_loss}, {"final_loss", e.final_loss}, {"total", e.total}});
  return {{"format", "pica-reward-model/1"},
          {"feature_config",
           {{"question", p.question_features}, {"turn", p.turn_features}, {"max_turns", p.max_turns}}},
          {"question_weights", p.question_weights},
          {"step_weights", p.step_weights},
          {"metadata", {{"seed", p.seed}, {"lambda_g", p.lambda_g}, {"loss_history", std::move(hist)}}}};
}

inline RewardModelParams reward_model_from_json(const nlohmann::ordered_json& j) {
  RewardModelParams p;
  try {
    const auto& fc = j.at("feature_config");
    p.question_features = fc.at("question").get<std::vector<std::string>>();
    p.turn_features = fc.at("turn").get<std::vector<std::string>>();
    p.max_turns = fc.at("max_turns").get<int>();
    p.question_weights = j.at("question_weights").get<std::vector<double>>();
    p.step_weights = j.at("step_weights").get<std::vector<double>>();
    if (auto it = j.find("metadata"); it != j.end()) {
      p.seed = it->value("seed", std::uint64_t{0});
      p.lambda_g = it->value("lambda_g", 1.0);
      if (auto h = it->find("loss_history"); h != it->end())
        for (const auto& e : *h)
          p.loss_history.push_back({e.at("epoch").get<int>(), e.at("gold_loss").get<double>(),
                                    e.at("final_loss").get<double>(), e.at("total").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed reward model checkpoint: ") + e.what());
  }
  p.check();
  return p;
}

inline std::string model_version(const RewardModelParams& p) { return hex64(fnv1a(to_json(p).dump())); }

}  // namespace pica
