#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include "fixtures.hpp"

using namespace pica;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "pica_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Runs the CLI and returns the run directory, or "" on failure.
fs::path cli(const std::vector<std::string>& args, std::string* err_out = nullptr) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  if (err_out) *err_out = err.str();
  if (code != 0) return {};
  const std::string tag = "run directory: ";
  auto s = out.str();
  auto dir = s.substr(s.rfind(tag) + tag.size());
  while (!dir.empty() && dir.back() == '\n') dir.pop_back();
  return dir;
}

std::vector<Trajectory> corpus(std::uint64_t seed, int tasks) { return fixtures::behavior_corpus(seed, tasks, 5); }

Outcome telescoping() {
  Rng rng = make_rng(101);
  const auto trajs = corpus(101, 200);
  double worst = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto p = fixtures::random_params(rng);
    const auto& t = trajs[i % trajs.size()];
    const auto c = success_curve(p, t);
    double sum = 0;
    for (const auto& r : step_rewards(c)) sum += r.raw;
    worst = std::max(worst, std::abs(sum - (std::log(c.f.back()) - std::log(c.f.front()))));
  }
  return {worst <= 1e-9, fmt("1000 pairs, max |sum raw - log f(T)/f(0)| = %.2e", worst)};
}

Outcome product() {
  Rng rng = make_rng(102);
  const auto trajs = corpus(102, 200);
  double worst = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto p = fixtures::random_params(rng);
    const auto c = success_curve(p, trajs[i % trajs.size()]);
    double prod = c.f.front();
    for (double g : c.g) prod *= 1 + g;
    worst = std::max(worst, fixtures::rel_err(prod, c.f.back()));
  }
  return {worst <= 1e-9, fmt("1000 pairs, max rel err f(0)*prod(1+g) vs f(T) = %.2e", worst)};
}

PpoBatch random_batch(Rng& rng, const PolicyParams& old, std::size_t n) {
  PpoBatch b;
  std::normal_distribution<double> d(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    TokenStep t;
    t.candidates.dim = policy_layout::kPolicyDim;
    const auto k = 2 + uniform_index(rng, 4);
    for (std::size_t r = 0; r < k; ++r)
      for (double& x : t.candidates.add_row()) x = d(rng);
    t.old_log_probs = log_softmax(old.theta, t.candidates, 1.0);
    t.chosen = uniform_index(rng, k);
    t.old_log_prob = t.old_log_probs[t.chosen];
    t.advantage = d(rng);
    b.tokens.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < n; ++i) b.critic.push_back({fixtures::random_vector(rng, policy_layout::kCritic, 1), d(rng)});
  return b;
}

Outcome gradients() {
  Rng rng = make_rng(103);
  int checks = 0, bad = 0;
  std::map<std::string, std::map<int, int>> coverage;  // loss -> instance -> coordinates
  double worst = 0;
  auto check = [&](const std::string& loss, int inst, double analytic, double fd) {
    ++checks;
    ++coverage[loss][inst];
    const double err = std::abs(analytic - fd) / std::max(1e-4, std::abs(fd));
    worst = std::max(worst, err);
    bad += err > 1e-4;
  };
  std::vector<RmExample> examples;
  for (const auto& t : corpus(103, 20)) examples.push_back(make_example(t, 5));
  const double h = 1e-6;
  for (int inst = 0; inst < 20; ++inst) {
    auto p = fixtures::random_params(rng);
    const auto& ex = examples[static_cast<std::size_t>(inst) * 3 % examples.size()];
    std::vector<double> g(p.size(), 0.0);
    example_losses(p, ex, {}, g);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto k = uniform_index(rng, p.size());
      const double keep = p[k];
      p[k] = keep + h;
      const double up = example_losses(p, ex, {}).total;
      p[k] = keep - h;
      const double down = example_losses(p, ex, {}).total;
      p[k] = keep;
      check("reward model", inst, g[k], (up - down) / (2 * h));
    }
  }
  PPOConfig cfg;
  cfg.kl_coef = 0.05;
  for (int inst = 0; inst < 20; ++inst) {
    PolicyParams old;
    old.theta = fixtures::random_vector(rng, policy_layout::kPolicyDim, 0.5);
    auto p = old;
    for (double& x : p.theta) x += 0.1 * std::normal_distribution<double>()(rng);
    p.critic = fixtures::random_vector(rng, policy_layout::kCritic, 0.5);
    const auto b = random_batch(rng, old, 8);
    std::vector<double> gt(policy_layout::kPolicyDim, 0.0), gc(policy_layout::kCritic, 0.0);
    policy_objective(p, b.tokens, b.critic, cfg, gt, gc);
    int done = 0;
    while (done < 10) {
      const auto k = uniform_index(rng, gt.size());
      auto up = p, down = p;
      up.theta[k] += h;
      down.theta[k] -= h;
      const auto ou = policy_objective(up, b.tokens, b.critic, cfg), od = policy_objective(down, b.tokens, b.critic, cfg);
      if (ou.clip_fraction != od.clip_fraction) continue;
      check("surrogate", inst, gt[k], (ou.policy_loss(cfg) - od.policy_loss(cfg)) / (2 * h));
      ++done;
    }
    for (std::size_t k = 0; k < policy_layout::kCritic; ++k) {
      auto up = p, down = p;
      up.critic[k] += h;
      down.critic[k] -= h;
      check("critic", inst, gc[k], (policy_objective(up, b.tokens, b.critic, cfg).critic_loss -
                    policy_objective(down, b.tokens, b.critic, cfg).critic_loss) /
                       (2 * h));
    }
  }
  // The critic has fewer than 10 weights; all of them are checked.
  const std::map<std::string, int> need = {{"reward model", 10}, {"surrogate", 10},
                                           {"critic", static_cast<int>(std::min<std::size_t>(10, policy_layout::kCritic))}};
  bool covered = true;
  for (const auto& [loss, n] : need) {
    covered = covered && coverage[loss].size() == 20;
    for (const auto& [inst, c] : coverage[loss]) covered = covered && c >= n;
  }
  return {bad == 0 && covered,
          fmt("%.0f checks over 20 instances each (10 reward-model, 10 surrogate, all %.0f critic coordinates), "
              "%.0f over 1e-4, worst rel err %.2e",
              checks, static_cast<double>(policy_layout::kCritic), bad, worst)};
}

Outcome masking() {
  Rng rng = make_rng(104);
  // Span accounting on behavior rollouts.
  std::size_t trajs = 0, mismatches = 0;
  SymbolTable table;
  for (const auto& t : corpus(104, 100)) {
    std::size_t model = 0, env = 0;
    for (const auto& turn : t.turns) {
      if (!turn.think.empty()) model += turn.think.size() + 2;
      if (turn.search) model += 4;
      if (turn.info) env += 3 * turn.info->size() + 2;
      if (turn.answer) model += 3;
    }
    const auto tok = tokenize_with_mask(t, table);
    const auto ones = static_cast<std::size_t>(std::count(tok.mask.begin(), tok.mask.end(), 1));
    mismatches += tok.mask.size() != model + env || ones != model;
    ++trajs;
  }
  // Env tokens carry no gradient whatever their content.
  PolicyParams old;
  old.theta = fixtures::random_vector(rng, policy_layout::kPolicyDim, 0.5);
  auto p = old;
  for (double& x : p.theta) x += 0.2;
  auto b = random_batch(rng, old, 40);
  for (std::size_t i = 0; i < b.tokens.size(); i += 3) b.tokens[i].mask = 0;
  PPOConfig cfg;
  std::vector<double> g1(policy_layout::kPolicyDim, 0.0), g2 = g1, gc(policy_layout::kCritic, 0.0);
  policy_objective(p, b.tokens, b.critic, cfg, g1, gc);
  for (auto& t : b.tokens)
    if (!t.mask) {
      t.advantage = 1e6;
      for (double& x : t.candidates.features) x *= -3;
    }
  policy_objective(p, b.tokens, b.critic, cfg, g2, gc);
  double diff = 0;
  for (std::size_t k = 0; k < g1.size(); ++k) diff = std::max(diff, std::abs(g1[k] - g2[k]));
  return {mismatches == 0 && diff == 0.0,
          fmt("%.0f trajectories, %.0f span-count mismatches, max grad change from env tokens %.1e", trajs, mismatches,
              diff)};
}

Outcome gae() {
  Rng rng = make_rng(105);
  double worst = 0, worst_general = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto T = 1 + uniform_index(rng, 5);
    const auto r = fixtures::random_vector(rng, T, 1), v = fixtures::random_vector(rng, T, 1);
    const auto tr = advantage_trace(r, v, 1.0, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
      double suffix = 0;
      for (std::size_t k = t; k < T; ++k) suffix += r[k];
      worst = std::max(worst, std::abs(tr.discounted[t] - (suffix - v[t])));
    }
    const double g = 0.8 + 0.2 * uniform01(rng), l = uniform01(rng);
    const auto gl = advantage_trace(r, v, g, l);
    for (std::size_t t = 0; t < T; ++t) {
      double want = 0;
      for (std::size_t k = t; k < T; ++k)
        want += std::pow(g * l, static_cast<double>(k - t)) * (r[k] + g * (k + 1 < T ? v[k + 1] : 0.0) - v[k]);
      worst_general = std::max(worst_general, std::abs(gl.discounted[t] - want));
    }
  }
  const auto ex = advantage_trace(std::vector<double>{0, 0, 1}, std::vector<double>{0, 0, 0}, 1, 1).discounted;
  const bool example = ex == std::vector<double>{1, 1, 1};
  return {worst <= 1e-9 && worst_general <= 1e-9 && example,
          fmt("1000 schedules, max |A~ - (suffix sum R - V)| = %.2e; general gamma/lambda max err %.2e", worst,
              worst_general)};
}

fs::path g_data_run;

Outcome pivot_separation() {
  const auto dir = scratch("pivots");
  std::string err;
  g_data_run = cli({"gen-data", "--runs-dir", dir.string()}, &err);
  if (g_data_run.empty()) return {false, "gen-data failed: " + err};
  const auto rm = cli({"train-rm", "--runs-dir", dir.string(), "--data", (g_data_run / "dataset.jsonl").string()}, &err);
  if (rm.empty()) return {false, "train-rm failed: " + err};
  const auto data = load((g_data_run / "dataset.jsonl").string());
  const auto st = pivot_reward_stats(reward_model_from_json(read_json(rm / "reward_model.json", "model")), data);
  const double gap = st.mean_normalized_pivot - st.mean_normalized_non_pivot;
  return {data.trajectories.size() == 5000 && gap >= 0.2 && st.frac_pivot_positive_deployed >= 0.8,
          fmt("%.0f trajectories, pivot %.3f vs non-pivot %.3f (gap %.3f), ", static_cast<double>(data.trajectories.size()),
              st.mean_normalized_pivot, st.mean_normalized_non_pivot, gap) +
              fmt("%.1f%% of pivot steps positive", 100 * st.frac_pivot_positive_deployed)};
}

Outcome ablation() {
  const auto dir = scratch("ablation");
  std::string err;
  const auto run_dir = cli({"ablate", "--runs-dir", dir.string(), "--set", "world.max_hops=2", "--set", "tasks.hops=[2]",
                            "--set", "ablate.seeds=[1,2,3]", "--set", "trainer.total_training_steps=200"},
                           &err);
  if (run_dir.empty()) return {false, "ablate failed: " + err};
  std::map<std::string, std::pair<double, double>> sums;  // arm -> (em, turns)
  std::map<std::string, int> counts;
  const auto rows = read_csv(run_dir / "ablation_summary.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    sums[rows[i][0]].first += std::stod(rows[i][3]);
    sums[rows[i][0]].second += std::stod(rows[i][5]);
    ++counts[rows[i][0]];
  }
  auto mean = [&](const std::string& arm, bool turns) {
    return (turns ? sums[arm].second : sums[arm].first) / std::max(counts[arm], 1);
  };
  const double gain = mean("pica", false) - mean("outcome", false);
  const bool pass = counts["pica"] == 3 && counts["outcome"] == 3 && counts["penalty"] == 3 && gain >= 0.10 &&
                    mean("penalty", true) < mean("pica", true);
  return {pass, fmt("mean held-out EM pica %.3f, outcome %.3f (gain %.3f); ", mean("pica", false),
                    mean("outcome", false), gain) +
                    fmt("mean turns penalty %.2f < pica %.2f", mean("penalty", true), mean("pica", true))};
}

Outcome service() {
  Dataset d;
  d.trajectories = corpus(108, 40);
  RmTrainConfig rc;
  rc.epochs = 5;
  const auto params = train_reward_model(d, rc).params;
  RewardService svc(params);
  BackgroundServer srv;
  svc.mount(srv.server());
  const int port = srv.start();
  RewardClient client("127.0.0.1:" + std::to_string(port) + "/get_reward");
  const std::vector<Trajectory> batch(d.trajectories.begin(), d.trajectories.begin() + 100);
  const auto got = client.rewards(batch);
  double worst = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto want = step_rewards(params, batch[i]);
    if (got[i].size() != want.size()) return {false, "turn count mismatch"};
    for (std::size_t k = 0; k < want.size(); ++k) worst = std::max(worst, std::abs(got[i][k].deployed - want[k].deployed));
  }
  int rejected = 0, total = 0;
  auto expect_400 = [&](const std::string& body) {
    ++total;
    try {
      client.post("/get_reward", body);
    } catch (const ValidationError& e) {
      rejected += e.status == 400 && std::string(e.what()).find("field '") != std::string::npos;
    }
  };
  expect_400("{}");
  expect_400(R"({"trajectories": [{"turns": []}]})");
  auto over = batch[0];
  while (over.num_turns() <= 5) over.turns.insert(over.turns.begin(), over.turns.front());
  auto j = to_json(over);
  j.erase("label");
  j.erase("pivot_labels");
  ++total;
  try {
    client.post("/get_reward", Json{{"trajectories", Json::array({j})}}.dump());
  } catch (const ValidationError& e) {
    rejected += e.status == 400 && std::string(e.what()).find("trajectories[0]: turn budget exceeded") == 0;
  }
  auto bad_search = to_json(batch[0]);
  bad_search["turns"][0]["search"] = 5;
  expect_400(Json{{"trajectories", Json::array({bad_search})}}.dump());
  expect_400(R"({"trajectories": [{"question": {"task_id": 1, "start": "a", "relations": ["r"], "golds": [1]}, "turns": []}]})");
  return {worst <= 1e-6 && rejected == total,
          fmt("100 trajectories, max |loopback - in-process| = %.2e; %.0f/%.0f malformed requests got 400 with field-level messages", worst,
              rejected, total)};
}

Outcome metrics() {
  struct Case {
    std::string pred;
    std::vector<std::string> golds;
    int em;
    double f1;
  };
  const std::vector<Case> cases = {
      {"1873", {"1873"}, 1, 1.0},
      {"university of kansas", {"University of Kansas"}, 1, 1.0},
      {"University of Kansas", {"university of kansas"}, 1, 1.0},
      {"the university of kansas", {"university of kansas"}, 0, 6.0 / 7.0},
      {"The University of Kansas", {"University of Kansas"}, 0, 6.0 / 7.0},
      {"University of Kansas.", {"University of Kansas"}, 1, 1.0},
      {"Kansas", {"University of Kansas"}, 0, 0.5},
      {"1864", {"1873"}, 0, 0.0},
      {"", {"1873"}, 0, 0.0},
      {"Stanford", {"Columbia", "stanford"}, 1, 1.0},
  };
  int ok = 0;
  for (const auto& c : cases) {
    const auto s = score_answer(c.pred, c.golds);
    ok += s.em == c.em && std::abs(s.f1 - c.f1) < 1e-12;
  }
  return {ok == static_cast<int>(cases.size()), fmt("%.0f/%.0f EM/F1 cases", ok, static_cast<double>(cases.size()))};
}

Outcome reproducible() {
  std::string err;
  const auto other = cli({"gen-data", "--runs-dir", scratch("repro").string()}, &err);
  if (other.empty() || g_data_run.empty()) return {false, "gen-data failed: " + err};
  const auto rm_a = cli({"train-rm", "--runs-dir", scratch("repro_a").string(), "--data",
                         (g_data_run / "dataset.jsonl").string()});
  const auto rm_b = cli({"train-rm", "--runs-dir", scratch("repro_b").string(), "--data",
                         (other / "dataset.jsonl").string()});
  if (rm_a.empty() || rm_b.empty()) return {false, "train-rm failed"};
  int same = 0, files = 0;
  for (const auto& [a, b, f] : std::vector<std::tuple<fs::path, fs::path, std::string>>{
           {g_data_run, other, "dataset.jsonl"},
           {g_data_run, other, "tasks.jsonl"},
           {g_data_run, other, "world.json"},
           {rm_a, rm_b, "reward_model.json"},
           {rm_a, rm_b, "loss.csv"},
           {rm_a, rm_b, "pivot_rewards.csv"}}) {
    ++files;
    same += read_text(a / f, f) == read_text(b / f, f);
  }
  return {same == files, fmt("%.0f/%.0f artifacts byte-identical across two gen-data + train-rm runs", same, files)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"telescoping step rewards", telescoping},
      {"product decomposition of success probability", product},
      {"analytic gradients match finite differences", gradients},
      {"env tokens masked out of the loss", masking},
      {"turn-level GAE closed form", gae},
      {"pivot steps earn higher step rewards", pivot_separation},
      {"ablation: step rewards beat outcome-only, penalty shortens episodes", ablation},
      {"reward service loopback and validation", service},
      {"answer metrics", metrics},
      {"datagen and reward model training are reproducible", reproducible},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %zu: %s  %s: %s (%.2fs)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
