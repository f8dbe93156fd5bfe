#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pica/common.hpp"
#include "pica/features.hpp"

namespace pica {

// Feature layout of the policy parameter vector. Each generation slot reads
// its own block, so one flat vector scores every kind of token.
namespace policy_layout {

inline constexpr std::size_t kDecision = 6;   // per-decision state features
inline constexpr std::size_t kSearchEntity = 5;
inline constexpr std::size_t kRelation = 4;
inline constexpr std::size_t kAnswerEntity = 4;
inline constexpr std::size_t kCritic = 8;

inline constexpr std::size_t kSearchBlock = 0;
inline constexpr std::size_t kAnswerBlock = kDecision;
inline constexpr std::size_t kSearchEntityBlock = 2 * kDecision;
inline constexpr std::size_t kRelationBlock = kSearchEntityBlock + kSearchEntity;
inline constexpr std::size_t kAnswerEntityBlock = kRelationBlock + kRelation;
inline constexpr std::size_t kPolicyDim = kAnswerEntityBlock + kAnswerEntity;

}  // namespace policy_layout

struct PolicyParams {
  std::vector<double> theta = std::vector<double>(policy_layout::kPolicyDim, 0.0);
  std::vector<double> critic = std::vector<double>(policy_layout::kCritic, 0.0);

  std::size_t size() const { return theta.size() + critic.size(); }
  bool operator==(const PolicyParams&) const = default;
};

// Legal next tokens at one generation position, each with a feature row.
struct CandidateSet {
  std::size_t dim = policy_layout::kPolicyDim;
  std::vector<double> features;  // row-major, size() * dim

  std::size_t size() const { return dim == 0 ? 0 : features.size() / dim; }
  bool empty() const { return features.empty(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  std::span<double> add_row() {
    features.resize(features.size() + dim, 0.0);
    return {features.data() + features.size() - dim, dim};
  }
};

inline std::vector<double> log_softmax(const std::vector<double>& theta, const CandidateSet& c, double temperature) {
  std::vector<double> z(c.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i) {
    double s = 0;
    const auto r = c.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) s += theta[k] * r[k];
    z[i] = s / temperature;
    mx = std::max(mx, z[i]);
  }
  double sum = 0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

inline double critic_value(const PolicyParams& p, std::span<const double> features) {
  double v = 0;
  for (std::size_t i = 0; i < features.size(); ++i) v += p.critic[i] * features[i];
  return v;
}

struct PolicyInput {
  CandidateSet candidates;
  std::vector<double> critic_features;
};

struct PolicyChoice {
  std::size_t action = 0;
  double log_prob = 0;
  double value = 0;
};

// Samples (or, if greedy, takes the argmax of) the softmax over candidates.
inline PolicyChoice policy_step(const PolicyParams& p, const PolicyInput& in, Rng& rng, double temperature = 1.0,
                                bool greedy = false) {
  PolicyChoice out;
  out.value = critic_value(p, in.critic_features);
  if (in.candidates.empty()) throw Error("policy_step: no legal candidates");
  const auto lp = log_softmax(p.theta, in.candidates, temperature);
  if (greedy) {
    out.action = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  } else {
    double u = uniform01(rng);
    out.action = lp.size() - 1;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      u -= std::exp(lp[i]);
      if (u < 0) {
        out.action = i;
        break;
      }
    }
  }
  out.log_prob = lp[out.action];
  return out;
}

// Feature rows for each generation slot, computed from the visible state.
namespace policy_features {

using namespace policy_layout;

inline double b(bool v) { return v ? 1.0 : 0.0; }

inline std::vector<double> decision_state(const ChainTracker& tr, int turn, int max_turns) {
  const double k = std::max(tr.hops(), 1);
  return {1.0,
          b(tr.complete()),
          b(tr.last_on_frontier() && !tr.last_hit()),
          static_cast<double>(turn) / max_turns,
          tr.hop() / k,
          b(turn == max_turns - 1)};
}

inline std::vector<double> critic_state(const ChainTracker& tr, int turn, int max_turns) {
  const double k = std::max(tr.hops(), 1);
  return {1.0,
          tr.hop() / k,
          b(tr.complete()),
          static_cast<double>(turn) / max_turns,
          b(tr.last_on_frontier() && !tr.last_hit()),
          b(tr.hops() == 2),
          b(tr.hops() == 3),
          b(tr.hops() >= 4)};
}

// Candidates: [search, answer] or just [answer] when `search_allowed` is false.
inline CandidateSet decision(const ChainTracker& tr, int turn, int max_turns, bool search_allowed) {
  CandidateSet c;
  const auto s = decision_state(tr, turn, max_turns);
  if (search_allowed) {
    auto row = c.add_row();
    std::copy(s.begin(), s.end(), row.begin() + kSearchBlock);
  }
  auto row = c.add_row();
  std::copy(s.begin(), s.end(), row.begin() + kAnswerBlock);
  return c;
}

inline bool in_last_info(const ChainTracker& tr, const std::string& e, bool as_object) {
  for (const auto& f : tr.last_info())
    if ((as_object ? f.object : f.subject) == e) return true;
  return false;
}

inline CandidateSet search_entity(const ChainTracker& tr) {
  CandidateSet c;
  for (const auto& e : tr.seen()) {
    auto row = c.add_row();
    row[kSearchEntityBlock + 0] = b(e == tr.current());
    row[kSearchEntityBlock + 1] = b(e == tr.question().start);
    row[kSearchEntityBlock + 2] = b(in_last_info(tr, e, true));
    row[kSearchEntityBlock + 3] = b(in_last_info(tr, e, false));
    row[kSearchEntityBlock + 4] = b(tr.last_query() && tr.last_query()->entity == e);
  }
  return c;
}

inline CandidateSet relation(const ChainTracker& tr, const std::vector<std::string>& relations) {
  CandidateSet c;
  const auto& qrels = tr.question().relations;
  const auto* next = tr.next_relation();
  const auto after = static_cast<std::size_t>(tr.hop()) + 1;
  for (const auto& r : relations) {
    auto row = c.add_row();
    row[kRelationBlock + 0] = b(next && r == *next);
    row[kRelationBlock + 1] = b(tr.last_query() && tr.last_query()->relation == r);
    row[kRelationBlock + 2] = b(std::find(qrels.begin(), qrels.end(), r) != qrels.end());
    row[kRelationBlock + 3] = b(after < qrels.size() && qrels[after] == r);
  }
  return c;
}

inline CandidateSet answer_entity(const ChainTracker& tr) {
  CandidateSet c;
  for (const auto& e : tr.seen()) {
    auto row = c.add_row();
    row[kAnswerEntityBlock + 0] = b(e == tr.current() && tr.complete());
    row[kAnswerEntityBlock + 1] = b(e == tr.current());
    row[kAnswerEntityBlock + 2] = b(in_last_info(tr, e, true));
    row[kAnswerEntityBlock + 3] = b(e == tr.question().start);
  }
  return c;
}

}  // namespace policy_features

struct AdvantageTrace {
  std::vector<double> advantages;    // A_t
  std::vector<double> discounted;    // A~_t
  std::vector<double> token_advantages;  // A~ broadcast to tokens, if requested
  double gamma = 1.0;
  double lambda_gae = 1.0;
};

// A_t = R_t + gamma V_{t+1} - V_t (V beyond the last turn is 0);
// A~_t = sum_l (gamma lambda)^l A_{t+l}.
inline AdvantageTrace advantage_trace(std::span<const double> rewards, std::span<const double> values, double gamma,
                                      double lambda_gae) {
  if (rewards.size() != values.size()) throw Error("advantage_trace: rewards and values differ in length");
  AdvantageTrace tr;
  tr.gamma = gamma;
  tr.lambda_gae = lambda_gae;
  const auto T = rewards.size();
  tr.advantages.resize(T);
  tr.discounted.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double next = t + 1 < T ? values[t + 1] : 0.0;
    tr.advantages[t] = rewards[t] + gamma * next - values[t];
  }
  double acc = 0;
  for (std::size_t t = T; t-- > 0;) {
    acc = tr.advantages[t] + gamma * lambda_gae * acc;
    tr.discounted[t] = acc;
  }
  return tr;
}

inline void broadcast_to_tokens(AdvantageTrace& tr, std::span<const int> turn_of_token) {
  tr.token_advantages.clear();
  for (int t : turn_of_token) tr.token_advantages.push_back(tr.discounted.at(static_cast<std::size_t>(t)));
}

// Discounted reward-to-go, the critic's regression target.
inline std::vector<double> reward_to_go(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

struct PPOConfig {
  double clip_epsilon = 0.2;
  double kl_coef = 0.001;
  double gamma = 1.0;
  double lambda_gae = 1.0;
  double temperature = 1.0;
  double actor_lr = 0.05;
  double critic_lr = 0.05;
  double critic_coef = 0.5;
  int ppo_epochs = 4;
  int minibatches = 1;
};

// One token of a rollout. Forced tokens have a single candidate; env tokens
// have mask 0 and are ignored by every loss term.
struct TokenStep {
  int mask = 1;
  CandidateSet candidates;
  std::size_t chosen = 0;
  double old_log_prob = 0;
  std::vector<double> old_log_probs;  // full old distribution, for the KL term
  double advantage = 0;
};

struct CriticSample {
  std::vector<double> features;
  double target = 0;
};

struct PpoBatch {
  std::vector<TokenStep> tokens;
  std::vector<CriticSample> critic;
};

// Clipped surrogate contribution of one token.
inline double clipped_surrogate_term(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

struct PolicyObjective {
  double surrogate = 0;    // masked mean of the clipped surrogate
  double kl = 0;           // masked mean KL(old || current)
  double critic_loss = 0;  // critic_coef * mean squared error
  double mean_ratio = 0;
  double clip_fraction = 0;
  std::size_t masked_tokens = 0;
  // Minimized by the update: -surrogate + kl_coef * kl.
  double policy_loss(const PPOConfig& c) const { return -surrogate + c.kl_coef * kl; }
};

// Evaluates the objective on tokens [begin, end) and critic samples; adds
// d(policy_loss)/d(theta) and d(critic_loss)/d(critic) into the gradients
// when they are non-empty.
inline PolicyObjective policy_objective(const PolicyParams& p, std::span<const TokenStep> tokens,
                                        std::span<const CriticSample> critic, const PPOConfig& cfg,
                                        std::span<double> grad_theta = {}, std::span<double> grad_critic = {}) {
  PolicyObjective obj;
  std::size_t n = 0;
  for (const auto& tok : tokens) n += tok.mask != 0;
  obj.masked_tokens = n;
  if (n == 0) throw Error("ppo: batch has no masked-in tokens");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double temp = cfg.temperature;
  std::vector<double> expect(p.theta.size());
  std::size_t clipped = 0;

  for (const auto& tok : tokens) {
    if (tok.mask == 0) continue;
    if (tok.candidates.size() <= 1) {
      // Forced token: ratio 1 and no gradient.
      obj.surrogate += tok.advantage * inv_n;
      obj.mean_ratio += inv_n;
      continue;
    }
    const auto lp = log_softmax(p.theta, tok.candidates, temp);
    const double ratio = std::exp(lp[tok.chosen] - tok.old_log_prob);
    const double a = tok.advantage;
    obj.surrogate += clipped_surrogate_term(ratio, a, cfg.clip_epsilon) * inv_n;
    obj.mean_ratio += ratio * inv_n;
    const bool active = a >= 0 ? ratio < 1.0 + cfg.clip_epsilon : ratio > 1.0 - cfg.clip_epsilon;
    if (!active) ++clipped;
    double kl = 0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const double po = std::exp(tok.old_log_probs[i]);
      kl += po * (tok.old_log_probs[i] - lp[i]);
    }
    obj.kl += kl * inv_n;

    if (grad_theta.empty()) continue;
    std::fill(expect.begin(), expect.end(), 0.0);
    std::vector<double> old_expect(p.theta.size(), 0.0);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const double pi = std::exp(lp[i]);
      const double po = std::exp(tok.old_log_probs[i]);
      const auto r = tok.candidates.row(i);
      for (std::size_t k = 0; k < r.size(); ++k) {
        expect[k] += pi * r[k];
        old_expect[k] += po * r[k];
      }
    }
    const auto chosen_row = tok.candidates.row(tok.chosen);
    for (std::size_t k = 0; k < p.theta.size(); ++k) {
      // d log pi(chosen) / d theta = (phi_chosen - E_pi[phi]) / temp
      const double dlogp = (chosen_row[k] - expect[k]) / temp;
      double g = 0;
      if (active) g -= a * ratio * dlogp;                    // -surrogate
      g += cfg.kl_coef * (expect[k] - old_expect[k]) / temp;  // +beta * KL
      grad_theta[k] += g * inv_n;
    }
  }
  obj.clip_fraction = static_cast<double>(clipped) * inv_n;

  if (!critic.empty()) {
    const double inv_m = 1.0 / static_cast<double>(critic.size());
    for (const auto& s : critic) {
      const double err = critic_value(p, s.features) - s.target;
      obj.critic_loss += cfg.critic_coef * err * err * inv_m;
      if (!grad_critic.empty())
        for (std::size_t k = 0; k < s.features.size(); ++k)
          grad_critic[k] += 2.0 * cfg.critic_coef * err * s.features[k] * inv_m;
    }
  }
  return obj;
}

struct PpoStats {
  double mean_ratio = 0;
  double clip_fraction = 0;
  double kl = 0;
  double surrogate = 0;
  double critic_loss = 0;
};

namespace detail {

struct Adam {
  explicit Adam(std::size_t n, double lr) : lr(lr), m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double>& x, std::span<const double> g) {
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  double lr;
  std::vector<double> m, v;
  int t = 0;
};

}  // namespace detail

// Several epochs of Adam on the masked clipped surrogate (plus KL) and on
// the critic regression. Old log-probabilities in the batch are the
// rollout-time values, so the first step starts from ratio 1.
inline PolicyParams ppo_update(const PolicyParams& params, const PpoBatch& batch, const PPOConfig& cfg,
                               PpoStats* stats = nullptr) {
  PolicyParams p = params;
  detail::Adam actor(p.theta.size(), cfg.actor_lr), critic(p.critic.size(), cfg.critic_lr);
  const std::span<const TokenStep> all(batch.tokens);
  const auto mb = static_cast<std::size_t>(std::max(cfg.minibatches, 1));
  const std::size_t chunk = (all.size() + mb - 1) / mb;
  policy_objective(p, all, batch.critic, cfg);  // throws if nothing is masked in
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    for (std::size_t start = 0; start < all.size(); start += chunk) {
      auto part = all.subspan(start, std::min(chunk, all.size() - start));
      bool any = false;
      for (const auto& t : part) any = any || t.mask != 0;
      if (!any) continue;
      std::vector<double> gt(p.theta.size(), 0.0), gc(p.critic.size(), 0.0);
      policy_objective(p, part, batch.critic, cfg, gt, gc);
      actor.step(p.theta, gt);
      critic.step(p.critic, gc);
    }
  }
  if (stats) {
    auto last = policy_objective(p, all, batch.critic, cfg);
    stats->mean_ratio = last.mean_ratio;
    stats->clip_fraction = last.clip_fraction;
    stats->kl = last.kl;
    stats->surrogate = last.surrogate;
    stats->critic_loss = last.critic_loss;
  }
  return p;
}

}  // namespace pica
