#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"

using namespace pica;

namespace {

DatagenConfig small_config(std::uint64_t seed, int tasks, int per_task) {
  DatagenConfig cfg;
  cfg.seed = seed;
  cfg.world.seed = seed;
  cfg.task_count = tasks;
  cfg.rollouts_per_task = per_task;
  return cfg;
}

BehaviorMix only_golden() { return {1.0, 0.0, 0.0, 0.0, 0.0}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Datagen, GoldenPolicyWithPerfectRetrieval) {
  auto cfg = small_config(11, 60, 2);
  cfg.mix = only_golden();
  cfg.rollout.retrieval.p_hit = 1.0;
  const auto res = build_dataset(cfg);
  ASSERT_EQ(res.dataset.trajectories.size(), 120u);
  for (const auto& t : res.dataset.trajectories) {
    EXPECT_EQ(t.label, 1);
    EXPECT_EQ(static_cast<int>(t.pivot_labels.size()), t.question.hops());
    for (bool z : t.pivot_labels) EXPECT_TRUE(z);
    EXPECT_EQ(t.num_turns(), t.question.hops() + 1);
  }
}

TEST(Datagen, RandomPolicyMostlyFails) {
  auto cfg = small_config(12, 200, 1);
  cfg.mix = {0.0, 1.0, 0.0, 0.0, 0.0};
  const auto res = build_dataset(cfg);
  ASSERT_EQ(res.dataset.trajectories.size(), 200u);
  EXPECT_GE(res.dataset.trajectories.size() - res.report.successes, 190u);
}

TEST(Datagen, MixedPolicyHasBothLabels) {
  auto cfg = small_config(13, 200, 5);
  cfg.mix = {0.5, 0.5, 0.0, 0.0, 0.0};
  const auto res = build_dataset(cfg);
  ASSERT_EQ(res.dataset.trajectories.size(), 1000u);
  EXPECT_GT(res.report.successes, 0u);
  EXPECT_LT(res.report.successes, 1000u);
  EXPECT_GT(res.report.pivot_steps, 0u);
  EXPECT_GT(res.report.non_pivot_steps, 0u);
}

TEST(Datagen, CountWithoutFilter) {
  auto cfg = small_config(14, 100, 5);
  cfg.filter = false;
  const auto res = build_dataset(cfg);
  EXPECT_EQ(res.dataset.trajectories.size(), 500u);
  EXPECT_EQ(res.report.generated, 500u);
  EXPECT_EQ(res.report.filtered, 0u);
  EXPECT_EQ(res.tasks.size(), 100u);
}

TEST(Datagen, HopsCycleAndReportCounts) {
  const auto res = build_dataset(small_config(15, 30, 2));
  std::map<int, std::size_t> hops;
  std::size_t pivots = 0, non_pivots = 0, wins = 0;
  for (const auto& t : res.dataset.trajectories) {
    ++hops[t.question.hops()];
    wins += t.label;
    for (bool z : t.pivot_labels) (z ? pivots : non_pivots)++;
  }
  EXPECT_EQ(hops, (std::map<int, std::size_t>{{2, 20}, {3, 20}, {4, 20}}));
  EXPECT_EQ(res.report.per_hop, hops);
  EXPECT_EQ(res.report.pivot_steps, pivots);
  EXPECT_EQ(res.report.non_pivot_steps, non_pivots);
  EXPECT_EQ(res.report.successes, wins);
}

TEST(Datagen, FilterDropsCorruptRollout) {
  auto trajs = fixtures::behavior_corpus(16, 20);
  const auto n = trajs.size();
  ASSERT_EQ(filter_trajectories(trajs, {5, true}), 0u);
  auto bad = trajs[0];
  bad.pivot_labels.push_back(true);
  trajs.push_back(bad);
  auto worse = trajs[1];
  worse.turns.clear();
  trajs.push_back(worse);
  EXPECT_EQ(filter_trajectories(trajs, {5, true}), 2u);
  EXPECT_EQ(trajs.size(), n);
}

TEST(Datagen, ByteIdenticalAcrossRuns) {
  const auto dir = std::filesystem::temp_directory_path() / "pica_tests";
  std::filesystem::create_directories(dir);
  const auto a = dir / "gen_a.jsonl", b = dir / "gen_b.jsonl", c = dir / "gen_c.jsonl";
  persist(build_dataset(small_config(17, 50, 3)).dataset, a.string());
  persist(build_dataset(small_config(17, 50, 3)).dataset, b.string());
  persist(build_dataset(small_config(18, 50, 3)).dataset, c.string());
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
}

TEST(Datagen, LabelsAreRederivable) {
  const auto res = build_dataset(small_config(19, 90, 3));
  std::map<std::uint64_t, const Task*> by_id;
  for (const auto& t : res.tasks) by_id[t.id] = &t;
  for (const auto& traj : res.dataset.trajectories) {
    const auto& task = *by_id.at(traj.question.task_id);
    EXPECT_EQ(traj.label, score_answer(*traj.final_answer(), std::vector<std::string>{task.gold_answer}).em);
    std::vector<bool> z;
    std::vector<Turn> history;
    for (const auto& turn : traj.turns) {
      if (turn.search) z.push_back(pivot_oracle(history, *turn.search, *turn.info, task));
      history.push_back(turn);
    }
    EXPECT_EQ(z, traj.pivot_labels);
  }
}

TEST(Datagen, SuccessRateGrowsWithGoldenShare) {
  double last = -1;
  for (double golden : {0.2, 0.5, 0.8, 1.0}) {
    auto cfg = small_config(20, 150, 4);
    cfg.mix = {golden, 1.0 - golden, 0.0, 0.0, 0.0};
    const auto res = build_dataset(cfg);
    const double rate = static_cast<double>(res.report.successes) / static_cast<double>(res.dataset.trajectories.size());
    EXPECT_GT(rate, last) << "golden share " << golden;
    last = rate;
  }
}

TEST(Datagen, DefaultMixIsBalanced) {
  const auto res = build_dataset(small_config(1, 300, 5));
  const double rate = static_cast<double>(res.report.successes) / static_cast<double>(res.dataset.trajectories.size());
  EXPECT_GT(rate, 0.3);
  EXPECT_LT(rate, 0.7);
}
