#pragma once

#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pica/datagen.hpp"
#include "pica/reward_model.hpp"
#include "pica/service.hpp"
#include "pica/trainer.hpp"

namespace pica {

// Flat dotted-key configuration. Files may nest objects or use dotted keys
// directly; both flatten to the same table.
inline Json default_config() {
  return Json{
      {"seed", 1},
      {"max_turns", 5},

      {"world.seed", 1},
      {"world.entities", 50},
      {"world.relations", 5},
      {"world.branching", 3},
      {"world.max_hops", 4},

      {"tasks.hops", {2, 3, 4}},
      {"tasks.count", 1000},
      {"tasks.rollouts_per_task", 5},
      {"tasks.train_count", 200},
      {"tasks.eval_count", 200},

      {"behavior.mix.golden_next_hop", 0.75},
      {"behavior.mix.random_relation", 0.09},
      {"behavior.mix.repeat_last", 0.05},
      {"behavior.mix.premature_answer", 0.07},
      {"behavior.mix.correct_answer_when_complete", 0.04},
      {"datagen.filter", true},
      {"datagen.lenient_pivots", false},
      {"datagen.think_cap", 4},

      {"retriever.topk", 3},
      {"retriever.p_hit", 0.85},

      {"reward_model.url", "localhost:5000/get_reward"},
      {"reward_model.checkpoint", ""},
      {"reward_model.lambda_g", 1.0},
      {"reward_model.g_min", 1e-4},
      {"reward_model.margin", 0.1},
      {"reward_model.learning_rate", 0.05},
      {"reward_model.batch_size", 64},
      {"reward_model.epochs", 20},
      {"reward_model.l2", 0.1},
      {"reward_model.grad_clip", 5.0},
      {"reward_model.temperature", 1.0},
      {"reward_model.max_batch", 1024},

      {"step_reward_scale", 0.3},
      {"baseline_step_reward", 0.55},
      {"outcome_reward_scale", 1.5},
      {"format_reward", -1.0},

      {"penalty.lambda", 0.1},
      {"penalty.alpha", 1.2},

      {"algorithm.gamma", 1.0},
      {"algorithm.lam", 1.0},
      {"algorithm.kl_ctrl.kl_coef", 0.001},
      {"actor_rollout_ref.actor.clip_ratio", 0.2},
      {"actor_rollout_ref.actor.optim.lr", 0.05},
      {"actor_rollout_ref.actor.ppo_epochs", 4},
      {"actor_rollout_ref.actor.ppo_mini_batches", 1},
      {"actor_rollout_ref.rollout.temperature", 1.0},
      {"actor_rollout_ref.rollout.n_agent", 5},
      {"critic.optim.lr", 0.05},
      {"critic.loss_coef", 0.5},
      {"data.train_batch_size", 16},
      {"trainer.total_training_steps", 200},
      {"trainer.divergence_bound", 100.0},

      {"ablate.seeds", {1, 2, 3}},
  };
}

namespace detail {

inline void flatten_into(const Json& j, const std::string& prefix, Json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      flatten_into(*it, key, out);
    else
      out[key] = *it;
  }
}

inline bool same_kind(const Json& def, const Json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number_integer()) return false;
    return true;
  }
  return false;
}

inline const char* kind_name(const Json& def) {
  if (def.is_boolean()) return "a boolean";
  if (def.is_string()) return "a string";
  if (def.is_number_integer()) return "an integer";
  if (def.is_number()) return "a number";
  return "an array of integers";
}

// Alternate spellings accepted on input.
inline std::string canonical_key(const std::string& key) {
  static const std::map<std::string, std::string> aliases = {
      {"retrieval.topk", "retriever.topk"},
      {"retrieval.p_hit", "retriever.p_hit"},
      {"rollouts_per_task", "tasks.rollouts_per_task"},
      {"datagen.mix.golden_next_hop", "behavior.mix.golden_next_hop"},
      {"datagen.mix.random_relation", "behavior.mix.random_relation"},
      {"datagen.mix.repeat_last", "behavior.mix.repeat_last"},
      {"datagen.mix.premature_answer", "behavior.mix.premature_answer"},
      {"datagen.mix.correct_answer_when_complete", "behavior.mix.correct_answer_when_complete"},
  };
  auto it = aliases.find(key);
  return it == aliases.end() ? key : it->second;
}

inline void set_key(Json& cfg, const std::string& raw_key, const Json& v) {
  const auto key = canonical_key(raw_key);
  auto it = cfg.find(key);
  if (it == cfg.end()) throw ConfigError("unknown config key '" + key + "'");
  Json val = v;
  if (it->is_number_float() && v.is_number()) val = v.get<double>();
  if (!same_kind(*it, val)) throw ConfigError("config key '" + key + "' expects " + kind_name(*it));
  *it = std::move(val);
}

}  // namespace detail

struct Range {
  double lo, hi;
  bool lo_open = false, hi_open = false;
};

inline void check_range(const Json& cfg, const std::string& key, Range r) {
  const double v = cfg.at(key).get<double>();
  const bool ok = (r.lo_open ? v > r.lo : v >= r.lo) && (r.hi_open ? v < r.hi : v <= r.hi);
  if (!ok) {
    auto num = [](double x) {
      std::ostringstream os;
      os << x;
      return os.str();
    };
    throw ConfigError(key + " = " + num(v) + " out of range " + (r.lo_open ? "(" : "[") + num(r.lo) + ", " +
                      num(r.hi) + (r.hi_open ? ")" : "]"));
  }
}

inline void validate_config(const Json& cfg) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  check_range(cfg, "penalty.lambda", {0, 0.5});
  check_range(cfg, "penalty.alpha", {1, 1.5});
  check_range(cfg, "actor_rollout_ref.actor.clip_ratio", {0, 1, true, true});
  check_range(cfg, "algorithm.gamma", {0, 1, true});
  check_range(cfg, "algorithm.lam", {0, 1});
  check_range(cfg, "algorithm.kl_ctrl.kl_coef", {0, inf});
  check_range(cfg, "retriever.p_hit", {0, 1});
  check_range(cfg, "retriever.topk", {0, 1000});
  check_range(cfg, "max_turns", {1, 64});
  check_range(cfg, "reward_model.temperature", {0, inf, true});
  check_range(cfg, "reward_model.g_min", {0, inf, true});
  check_range(cfg, "reward_model.l2", {0, inf});
  check_range(cfg, "reward_model.batch_size", {1, inf});
  check_range(cfg, "reward_model.epochs", {0, inf});
  check_range(cfg, "reward_model.max_batch", {1, inf});
  check_range(cfg, "world.entities", {1, inf});
  check_range(cfg, "world.relations", {1, inf});
  check_range(cfg, "world.branching", {1, inf});
  check_range(cfg, "world.max_hops", {2, inf});
  check_range(cfg, "tasks.count", {1, inf});
  check_range(cfg, "tasks.rollouts_per_task", {1, inf});
  check_range(cfg, "tasks.train_count", {1, inf});
  check_range(cfg, "tasks.eval_count", {0, inf});
  check_range(cfg, "actor_rollout_ref.rollout.temperature", {0, inf, true});
  check_range(cfg, "actor_rollout_ref.rollout.n_agent", {1, inf});
  check_range(cfg, "actor_rollout_ref.actor.ppo_epochs", {1, inf});
  check_range(cfg, "actor_rollout_ref.actor.ppo_mini_batches", {1, inf});
  check_range(cfg, "data.train_batch_size", {1, inf});
  check_range(cfg, "trainer.total_training_steps", {0, inf});
  for (const auto& key : {"tasks.hops", "ablate.seeds"})
    if (cfg.at(key).empty()) throw ConfigError(std::string(key) + " must not be empty");
  for (const auto& h : cfg.at("tasks.hops"))
    if (h.get<int>() < 2 || h.get<int>() > cfg.at("world.max_hops").get<int>())
      throw ConfigError("tasks.hops entries must lie in [2, world.max_hops]");
  for (const auto& s : cfg.at("ablate.seeds"))
    if (s.get<long long>() < 0) throw ConfigError("ablate.seeds entries must be non-negative");
  for (const auto& key : {"seed", "world.seed"})
    if (cfg.at(key).get<long long>() < 0) throw ConfigError(std::string(key) + " must be non-negative");
}

// "key=value"; value is parsed as JSON when possible, else taken as a string.
inline std::pair<std::string, Json> parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  const auto key = kv.substr(0, eq);
  const auto text = kv.substr(eq + 1);
  Json v = Json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  return {key, v};
}

// defaults < file < overrides, then range validation.
inline Json load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  Json cfg = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    Json file = Json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw ConfigError("config file " + path + " is not a JSON object");
    Json flat = Json::object();
    detail::flatten_into(file, "", flat);
    for (auto it = flat.begin(); it != flat.end(); ++it) detail::set_key(cfg, it.key(), *it);
  }
  for (const auto& kv : overrides) {
    auto [k, v] = parse_override(kv);
    detail::set_key(cfg, k, v);
  }
  validate_config(cfg);
  return cfg;
}

// Typed views onto the module configs.

inline WorldConfig world_config(const Json& c) {
  WorldConfig w;
  w.entities = c.at("world.entities").get<int>();
  w.relations = c.at("world.relations").get<int>();
  w.branching = c.at("world.branching").get<int>();
  w.max_hops = c.at("world.max_hops").get<int>();
  w.seed = c.at("world.seed").get<std::uint64_t>();
  return w;
}

inline RetrievalConfig retrieval_config(const Json& c) {
  return {c.at("retriever.topk").get<int>(), c.at("retriever.p_hit").get<double>()};
}

inline DatagenConfig datagen_config(const Json& c) {
  DatagenConfig d;
  d.world = world_config(c);
  d.hops = c.at("tasks.hops").get<std::vector<int>>();
  d.task_count = c.at("tasks.count").get<int>();
  d.rollouts_per_task = c.at("tasks.rollouts_per_task").get<int>();
  d.mix.golden_next_hop = c.at("behavior.mix.golden_next_hop").get<double>();
  d.mix.random_relation = c.at("behavior.mix.random_relation").get<double>();
  d.mix.repeat_last = c.at("behavior.mix.repeat_last").get<double>();
  d.mix.premature_answer = c.at("behavior.mix.premature_answer").get<double>();
  d.mix.correct_answer_when_complete = c.at("behavior.mix.correct_answer_when_complete").get<double>();
  d.rollout.retrieval = retrieval_config(c);
  d.rollout.max_turns = c.at("max_turns").get<int>();
  d.rollout.think_cap = c.at("datagen.think_cap").get<int>();
  d.rollout.lenient_pivots = c.at("datagen.lenient_pivots").get<bool>();
  d.filter = c.at("datagen.filter").get<bool>();
  d.seed = c.at("seed").get<std::uint64_t>();
  return d;
}

inline RmTrainConfig rm_train_config(const Json& c) {
  RmTrainConfig r;
  r.loss.lambda_g = c.at("reward_model.lambda_g").get<double>();
  r.loss.g_min = c.at("reward_model.g_min").get<double>();
  r.loss.margin = c.at("reward_model.margin").get<double>();
  r.learning_rate = c.at("reward_model.learning_rate").get<double>();
  r.batch_size = c.at("reward_model.batch_size").get<int>();
  r.epochs = c.at("reward_model.epochs").get<int>();
  r.l2 = c.at("reward_model.l2").get<double>();
  r.grad_clip = c.at("reward_model.grad_clip").get<double>();
  r.max_turns = c.at("max_turns").get<int>();
  r.seed = c.at("seed").get<std::uint64_t>();
  return r;
}

inline RewardScaling reward_scaling(const Json& c) {
  return {c.at("reward_model.temperature").get<double>(), c.at("step_reward_scale").get<double>(),
          c.at("baseline_step_reward").get<double>()};
}

inline PolicyTrainConfig policy_train_config(const Json& c) {
  PolicyTrainConfig p;
  p.updates = c.at("trainer.total_training_steps").get<int>();
  p.prompts_per_update = c.at("data.train_batch_size").get<int>();
  p.n_agent = c.at("actor_rollout_ref.rollout.n_agent").get<int>();
  p.ppo.clip_epsilon = c.at("actor_rollout_ref.actor.clip_ratio").get<double>();
  p.ppo.kl_coef = c.at("algorithm.kl_ctrl.kl_coef").get<double>();
  p.ppo.gamma = c.at("algorithm.gamma").get<double>();
  p.ppo.lambda_gae = c.at("algorithm.lam").get<double>();
  p.ppo.temperature = c.at("actor_rollout_ref.rollout.temperature").get<double>();
  p.ppo.actor_lr = c.at("actor_rollout_ref.actor.optim.lr").get<double>();
  p.ppo.critic_lr = c.at("critic.optim.lr").get<double>();
  p.ppo.critic_coef = c.at("critic.loss_coef").get<double>();
  p.ppo.ppo_epochs = c.at("actor_rollout_ref.actor.ppo_epochs").get<int>();
  p.ppo.minibatches = c.at("actor_rollout_ref.actor.ppo_mini_batches").get<int>();
  p.shaping.outcome.outcome_reward_scale = c.at("outcome_reward_scale").get<double>();
  p.shaping.outcome.malformed_format_reward = c.at("format_reward").get<double>();
  p.shaping.scaling = reward_scaling(c);
  p.penalty_lambda = c.at("penalty.lambda").get<double>();
  p.penalty_alpha = c.at("penalty.alpha").get<double>();
  p.retrieval = retrieval_config(c);
  p.max_turns = c.at("max_turns").get<int>();
  p.shaping.max_turns = p.max_turns;
  p.seed = c.at("seed").get<std::uint64_t>();
  p.divergence_bound = c.at("trainer.divergence_bound").get<double>();
  return p;
}

}  // namespace pica
