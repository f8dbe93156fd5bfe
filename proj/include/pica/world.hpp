#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pica/common.hpp"
#include "pica/metrics.hpp"
#include "pica/types.hpp"

namespace pica {

struct WorldConfig {
  int entities = 50;
  int relations = 5;
  int branching = 3;  // outgoing relations per entity
  int max_hops = 4;   // longest chain the world must embed
  std::uint64_t seed = 1;
};

struct Edge {
  int subject;
  int relation;
  int object;
  auto operator<=>(const Edge&) const = default;
};

// Entity-relation graph, functional in (subject, relation).
class KnowledgeWorld {
 public:
  KnowledgeWorld() = default;
  KnowledgeWorld(std::vector<std::string> entities, std::vector<std::string> relations, std::vector<Edge> edges,
                 std::uint64_t seed)
      : entities_(std::move(entities)), relations_(std::move(relations)), edges_(std::move(edges)), seed_(seed) {
    std::sort(edges_.begin(), edges_.end());
    for (std::size_t i = 0; i < entities_.size(); ++i) entity_ids_[entities_[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < relations_.size(); ++i) relation_ids_[relations_[i]] = static_cast<int>(i);
    if (entity_ids_.size() != entities_.size()) throw ConstructionError("duplicate entity name");
    if (relation_ids_.size() != relations_.size()) throw ConstructionError("duplicate relation name");
    by_relation_.assign(relations_.size(), {});
    outgoing_.assign(entities_.size(), {});
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const auto& e = edges_[i];
      if (e.subject < 0 || e.subject >= num_entities() || e.object < 0 || e.object >= num_entities() ||
          e.relation < 0 || e.relation >= num_relations())
        throw ConstructionError("edge references unknown entity or relation");
      if (!lookup_.emplace(key(e.subject, e.relation), i).second)
        throw ConstructionError("(subject, relation) pair " + entities_[e.subject] + "/" + relations_[e.relation] +
                                " has more than one object");
      by_relation_[e.relation].push_back(i);
      outgoing_[e.subject].push_back(i);
    }
  }

  // Builds a world from named facts (hand-written fixtures).
  static KnowledgeWorld from_facts(const std::vector<Fact>& facts, std::uint64_t seed = 0) {
    std::vector<std::string> ents, rels;
    std::map<std::string, int> eid, rid;
    auto intern = [](std::map<std::string, int>& ids, std::vector<std::string>& names, const std::string& n) {
      auto [it, fresh] = ids.emplace(n, static_cast<int>(names.size()));
      if (fresh) names.push_back(n);
      return it->second;
    };
    std::vector<Edge> edges;
    for (const auto& f : facts) {
      int s = intern(eid, ents, f.subject);
      int r = intern(rid, rels, f.relation);
      int o = intern(eid, ents, f.object);
      edges.push_back({s, r, o});
    }
    return KnowledgeWorld(std::move(ents), std::move(rels), std::move(edges), seed);
  }

  int num_entities() const { return static_cast<int>(entities_.size()); }
  int num_relations() const { return static_cast<int>(relations_.size()); }
  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::uint64_t seed() const { return seed_; }

  const std::string& entity_name(int id) const { return entities_.at(static_cast<std::size_t>(id)); }
  const std::string& relation_name(int id) const { return relations_.at(static_cast<std::size_t>(id)); }

  std::optional<int> entity_id(const std::string& name) const {
    auto it = entity_ids_.find(name);
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<int> relation_id(const std::string& name) const {
    auto it = relation_ids_.find(name);
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
  }

  // Index into edges() of the fact for (subject, relation), if any.
  std::optional<std::size_t> find_edge(int subject, int relation) const {
    auto it = lookup_.find(key(subject, relation));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::size_t>& edges_with_relation(int relation) const {
    return by_relation_.at(static_cast<std::size_t>(relation));
  }
  const std::vector<std::size_t>& outgoing(int subject) const { return outgoing_.at(static_cast<std::size_t>(subject)); }

  Fact fact(const Edge& e) const { return {entity_name(e.subject), relation_name(e.relation), entity_name(e.object)}; }
  Fact fact(std::size_t edge_index) const { return fact(edges_.at(edge_index)); }

  bool operator==(const KnowledgeWorld& o) const {
    return entities_ == o.entities_ && relations_ == o.relations_ && edges_ == o.edges_ && seed_ == o.seed_;
  }

 private:
  static std::uint64_t key(int s, int r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s)) << 32) | static_cast<std::uint32_t>(r);
  }

  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::vector<Edge> edges_;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, int> entity_ids_;
  std::unordered_map<std::string, int> relation_ids_;
  std::unordered_map<std::uint64_t, std::size_t> lookup_;
  std::vector<std::vector<std::size_t>> by_relation_;
  std::vector<std::vector<std::size_t>> outgoing_;
};

// Embeds one chain of max_hops distinct entities, then gives every entity
// `branching` random outgoing relations.
inline KnowledgeWorld generate_world(const WorldConfig& cfg) {
  if (cfg.max_hops < 1) throw ConstructionError("max_hops must be >= 1");
  if (cfg.entities < cfg.max_hops + 1)
    throw ConstructionError("cannot embed a " + std::to_string(cfg.max_hops) + "-hop chain in " +
                            std::to_string(cfg.entities) + " entities (need at least " +
                            std::to_string(cfg.max_hops + 1) + ")");
  if (cfg.relations < 1) throw ConstructionError("need at least one relation");
  if (cfg.branching < 1 || cfg.branching > cfg.relations)
    throw ConstructionError("branching must lie in [1, relations]");

  Rng rng = make_rng(cfg.seed, {0x776f726c64ULL});
  std::vector<std::string> ents, rels;
  for (int i = 0; i < cfg.entities; ++i) ents.push_back("e" + std::to_string(i));
  for (int i = 0; i < cfg.relations; ++i) rels.push_back("r" + std::to_string(i));

  std::map<std::pair<int, int>, int> objects;
  std::vector<int> perm(static_cast<std::size_t>(cfg.entities));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < cfg.max_hops; ++i) {
    int r = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.relations)));
    objects[{perm[static_cast<std::size_t>(i)], r}] = perm[static_cast<std::size_t>(i) + 1];
  }

  std::vector<int> rel_order(static_cast<std::size_t>(cfg.relations));
  for (int s = 0; s < cfg.entities; ++s) {
    std::iota(rel_order.begin(), rel_order.end(), 0);
    std::shuffle(rel_order.begin(), rel_order.end(), rng);
    int have = 0;
    for (int r = 0; r < cfg.relations; ++r)
      if (objects.count({s, r})) ++have;
    for (int r : rel_order) {
      if (have >= cfg.branching) break;
      if (objects.count({s, r})) continue;
      int o = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.entities - 1)));
      if (o >= s) ++o;
      objects[{s, r}] = o;
      ++have;
    }
  }

  std::vector<Edge> edges;
  edges.reserve(objects.size());
  for (const auto& [sr, o] : objects) edges.push_back({sr.first, sr.second, o});
  return KnowledgeWorld(std::move(ents), std::move(rels), std::move(edges), cfg.seed);
}

struct Task {
  std::uint64_t id = 0;
  std::string start;
  std::vector<std::string> relations;
  int hop_count = 0;
  std::vector<Query> golden_sub_queries;
  std::vector<std::string> golden_sub_answers;
  std::string gold_answer;

  Question question() const { return {id, start, relations, {gold_answer}}; }
  bool operator==(const Task&) const = default;
};

// Builds a task from a start entity and relation path; throws if the path
// leaves the graph or revisits an entity.
inline Task make_task(const KnowledgeWorld& world, const std::string& start, const std::vector<std::string>& rels,
                      std::uint64_t id = 0) {
  auto cur = world.entity_id(start);
  if (!cur) throw SamplingError("unknown start entity " + start);
  Task t;
  t.id = id;
  t.start = start;
  t.relations = rels;
  t.hop_count = static_cast<int>(rels.size());
  std::vector<int> visited{*cur};
  for (const auto& rn : rels) {
    auto r = world.relation_id(rn);
    if (!r) throw SamplingError("unknown relation " + rn);
    auto e = world.find_edge(*cur, *r);
    if (!e) throw SamplingError("no fact for " + world.entity_name(*cur) + "/" + rn);
    int next = world.edges()[*e].object;
    if (std::find(visited.begin(), visited.end(), next) != visited.end())
      throw SamplingError("relation path revisits " + world.entity_name(next));
    t.golden_sub_queries.push_back({world.entity_name(*cur), rn});
    t.golden_sub_answers.push_back(world.entity_name(next));
    visited.push_back(next);
    cur = next;
  }
  t.gold_answer = t.golden_sub_answers.empty() ? start : t.golden_sub_answers.back();
  return t;
}

namespace detail {

inline void enumerate_chains(const KnowledgeWorld& w, int hops, std::vector<int>& path, std::vector<int>& rels,
                             std::vector<std::pair<std::vector<int>, std::vector<int>>>& out) {
  if (static_cast<int>(rels.size()) == hops) {
    out.emplace_back(path, rels);
    return;
  }
  for (std::size_t idx : w.outgoing(path.back())) {
    const auto& e = w.edges()[idx];
    if (std::find(path.begin(), path.end(), e.object) != path.end()) continue;
    path.push_back(e.object);
    rels.push_back(e.relation);
    enumerate_chains(w, hops, path, rels, out);
    path.pop_back();
    rels.pop_back();
  }
}

}  // namespace detail

// Samples a simple `hops`-step chain. Random walks first; if those keep
// dead-ending, falls back to uniform choice over all chains.
inline Task sample_task(const KnowledgeWorld& world, int hops, Rng& rng, std::uint64_t id = 0) {
  if (hops < 2) throw SamplingError("hops must be >= 2");
  if (hops > world.num_entities() - 1)
    throw SamplingError("no " + std::to_string(hops) + "-hop chain fits in " + std::to_string(world.num_entities()) +
                        " entities");
  auto to_task = [&](const std::vector<int>& path, const std::vector<int>& rels) {
    std::vector<std::string> names;
    for (int r : rels) names.push_back(world.relation_name(r));
    return make_task(world, world.entity_name(path.front()), names, id);
  };
  for (int attempt = 0; attempt < 256; ++attempt) {
    std::vector<int> path{static_cast<int>(uniform_index(rng, static_cast<std::size_t>(world.num_entities())))};
    std::vector<int> rels;
    while (static_cast<int>(rels.size()) < hops) {
      std::vector<std::size_t> options;
      for (std::size_t idx : world.outgoing(path.back()))
        if (std::find(path.begin(), path.end(), world.edges()[idx].object) == path.end()) options.push_back(idx);
      if (options.empty()) break;
      const auto& e = world.edges()[options[uniform_index(rng, options.size())]];
      path.push_back(e.object);
      rels.push_back(e.relation);
    }
    if (static_cast<int>(rels.size()) == hops) return to_task(path, rels);
  }
  std::vector<std::pair<std::vector<int>, std::vector<int>>> chains;
  for (int s = 0; s < world.num_entities(); ++s) {
    std::vector<int> path{s}, rels;
    detail::enumerate_chains(world, hops, path, rels, chains);
  }
  if (chains.empty()) throw SamplingError("world has no " + std::to_string(hops) + "-hop chain");
  const auto& pick = chains[uniform_index(rng, chains.size())];
  return to_task(pick.first, pick.second);
}

struct RetrievalConfig {
  int topk = 3;
  double p_hit = 0.85;
};

struct RetrievalResult {
  std::vector<Fact> docs;
  bool contains_hit = false;
};

// Noisy top-k lookup. The true fact (if the edge exists) is returned with
// probability p_hit; the other slots hold distractors, preferring facts that
// share the queried relation.
inline RetrievalResult retrieve(const KnowledgeWorld& world, const Query& query, Rng& rng,
                                const RetrievalConfig& cfg = {}) {
  RetrievalResult res;
  const auto topk = static_cast<std::size_t>(std::max(cfg.topk, 0));
  if (topk == 0) return res;
  auto ent = world.entity_id(query.entity);
  auto rel = world.relation_id(query.relation);
  std::optional<std::size_t> truth;
  if (ent && rel) truth = world.find_edge(*ent, *rel);
  const bool include_truth = truth.has_value() && uniform01(rng) < cfg.p_hit;

  std::size_t need = include_truth ? topk - 1 : topk;
  std::vector<std::size_t> picked;
  auto draw_from = [&](std::vector<std::size_t> pool) {
    std::erase_if(pool, [&](std::size_t i) {
      return (truth && i == *truth) || std::find(picked.begin(), picked.end(), i) != picked.end();
    });
    for (std::size_t i = 0; i < pool.size() && need > 0; ++i) {
      std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
      --need;
    }
  };
  if (rel) draw_from(world.edges_with_relation(*rel));
  if (need > 0) {
    std::vector<std::size_t> all(world.edges().size());
    std::iota(all.begin(), all.end(), 0);
    draw_from(std::move(all));
  }
  // Tiny worlds: pad by sampling with replacement.
  while (need > 0 && !world.edges().empty()) {
    std::size_t i = uniform_index(rng, world.edges().size());
    if (truth && i == *truth && world.edges().size() > 1) continue;
    picked.push_back(i);
    --need;
  }
  for (std::size_t i : picked) res.docs.push_back(world.fact(i));
  if (include_truth) {
    auto pos = uniform_index(rng, res.docs.size() + 1);
    res.docs.insert(res.docs.begin() + static_cast<std::ptrdiff_t>(pos), world.fact(*truth));
  }
  if (truth) res.contains_hit = contains_fact(res.docs, world.fact(*truth));
  return res;
}

// Golden fact for hop i of a task.
inline Fact golden_fact(const Task& task, std::size_t i) {
  return {task.golden_sub_queries.at(i).entity, task.golden_sub_queries.at(i).relation,
          task.golden_sub_answers.at(i)};
}

// Number of golden hops credited by `history`, matching sequentially.
inline int credited_hops(std::span<const Turn> history, const Task& task, bool lenient = false) {
  int credited = 0;
  for (const auto& turn : history) {
    if (!turn.search || credited >= task.hop_count) continue;
    const auto c = static_cast<std::size_t>(credited);
    if (*turn.search != task.golden_sub_queries[c]) continue;
    if (lenient || (turn.info && contains_fact(*turn.info, golden_fact(task, c)))) ++credited;
  }
  return credited;
}

// True iff `action` is the next uncredited golden sub-query and the
// observation carries its golden answer. With `lenient`, the observation
// check is waived (a missed retrieval still credits the hop once).
inline bool pivot_oracle(std::span<const Turn> history, const Query& action, const std::vector<Fact>& observation,
                         const Task& task, bool lenient = false) {
  const int credited = credited_hops(history, task, lenient);
  if (credited >= task.hop_count) return false;
  const auto c = static_cast<std::size_t>(credited);
  if (action != task.golden_sub_queries[c]) return false;
  return lenient || contains_fact(observation, golden_fact(task, c));
}

}  // namespace pica
