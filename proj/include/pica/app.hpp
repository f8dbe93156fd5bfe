#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pica/artifacts.hpp"
#include "pica/config.hpp"
#include "pica/datagen.hpp"
#include "pica/reward_model.hpp"
#include "pica/service.hpp"
#include "pica/trainer.hpp"

namespace pica {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int config = 2;
inline constexpr int missing_artifact = 3;
inline constexpr int divergence = 4;
inline constexpr int transport = 5;
}  // namespace exit_code

namespace fs = std::filesystem;

struct CommandArgs {
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string runs_dir = "runs";
  std::string out_dir;

  std::string data;
  std::string world;
  std::string reward_model;
  std::string policy;
  std::string arm = "pica";
  bool remote_rewards = false;
  std::string bind;
  std::vector<std::string> runs;
};

struct RunContext {
  Json config;
  fs::path dir;
  std::ostream* out;
  std::ostream* err;
};

namespace app_detail {

// Run directory: <command>-s<seed>-<hash of config and input contents>.
inline fs::path make_run_dir(const CommandArgs& a, const Json& cfg, const std::string& inputs) {
  if (!a.out_dir.empty()) return a.out_dir;
  const auto h = hex64(fnv1a(a.command + "\n" + cfg.dump() + "\n" + inputs)).substr(0, 12);
  return fs::path(a.runs_dir) / (a.command + "-s" + std::to_string(cfg.at("seed").get<std::uint64_t>()) + "-" + h);
}

inline std::string content_tag(const std::string& path, const std::string& what) {
  return path.empty() ? std::string() : what + "=" + hex64(fnv1a(read_text(path, what))) + ";";
}

inline KnowledgeWorld world_for(const CommandArgs& a, const Json& cfg) {
  if (!a.world.empty()) return world_from_json(read_json(a.world, "world file"));
  return generate_world(world_config(cfg));
}

inline TaskSplit split_for(const KnowledgeWorld& w, const Json& cfg) {
  return make_task_split(w, cfg.at("tasks.hops").get<std::vector<int>>(), cfg.at("tasks.train_count").get<int>(),
                         cfg.at("tasks.eval_count").get<int>(), cfg.at("world.seed").get<std::uint64_t>());
}

inline std::string reward_model_path(const CommandArgs& a, const Json& cfg) {
  return a.reward_model.empty() ? cfg.at("reward_model.checkpoint").get<std::string>() : a.reward_model;
}

inline RewardModelParams load_reward_model(const std::string& path) {
  return reward_model_from_json(read_json(path, "reward model"));
}

inline std::unique_ptr<StepRewardSource> reward_source(const CommandArgs& a, const Json& cfg, Arm arm) {
  if (arm != Arm::Pica) return nullptr;
  const auto path = reward_model_path(a, cfg);
  if (!path.empty()) return std::make_unique<InProcessRewards>(load_reward_model(path), reward_scaling(cfg));
  if (a.remote_rewards) return std::make_unique<HttpRewards>(RewardClient(cfg.at("reward_model.url").get<std::string>()));
  throw MissingArtifactError("missing reward model: the pica arm needs --reward-model <checkpoint> or --remote");
}

inline EpisodeOptions eval_options(const Json& cfg) {
  EpisodeOptions o;
  o.retrieval = retrieval_config(cfg);
  o.max_turns = cfg.at("max_turns").get<int>();
  o.temperature = cfg.at("actor_rollout_ref.rollout.temperature").get<double>();
  return o;
}

inline std::uint64_t eval_seed(const Json& cfg) { return cfg.at("world.seed").get<std::uint64_t>() + 7919; }

inline const std::vector<std::string> kCurveHeader = {"seed",       "step",        "arm",  "success_rate", "f1",
                                                      "mean_turns", "mean_reward", "kl",   "clip_fraction"};

inline void curve_rows(Csv& csv, std::uint64_t seed, const std::vector<CurvePoint>& curve) {
  for (const auto& p : curve)
    csv.row({Csv::num(static_cast<std::size_t>(seed)), Csv::num(p.step), p.arm, Csv::num(p.success_rate), Csv::num(p.f1),
             Csv::num(p.mean_turns), Csv::num(p.mean_reward), Csv::num(p.kl), Csv::num(p.clip_fraction)});
}

inline const std::vector<std::string> kEvalHeader = {"arm", "seed", "hops", "tasks", "em", "f1", "mean_turns"};

inline void eval_rows(Csv& csv, const std::string& arm, std::uint64_t seed, const std::vector<EvalRow>& rows) {
  for (const auto& r : rows)
    csv.row({arm, Csv::num(static_cast<std::size_t>(seed)), r.hops == 0 ? std::string("all") : Csv::num(r.hops),
             Csv::num(r.tasks), Csv::num(r.em), Csv::num(r.f1), Csv::num(r.mean_turns)});
}

inline void write_rm_artifacts(const RunContext& ctx, const RewardModelParams& params, const Dataset& data) {
  write_json(ctx.dir / "reward_model.json", to_json(params));
  Csv loss({"epoch", "gold_loss", "final_loss", "total"});
  for (const auto& e : params.loss_history)
    loss.row({Csv::num(e.epoch), Csv::num(e.gold_loss), Csv::num(e.final_loss), Csv::num(e.total)});
  write_text(ctx.dir / "loss.csv", loss.str());

  const auto scaling = reward_scaling(ctx.config);
  const auto st = pivot_reward_stats(params, data, scaling);
  Csv turns({"pivot", "normalized"});
  for (double v : st.normalized_pivot) turns.row({"1", Csv::num(v)});
  for (double v : st.normalized_non_pivot) turns.row({"0", Csv::num(v)});
  write_text(ctx.dir / "pivot_rewards.csv", turns.str());
  write_json(ctx.dir / "pivot_stats.json",
             Json{{"pivot_turns", st.pivot_turns},
                  {"non_pivot_turns", st.non_pivot_turns},
                  {"mean_normalized_pivot", st.mean_normalized_pivot},
                  {"mean_normalized_non_pivot", st.mean_normalized_non_pivot},
                  {"frac_pivot_positive_deployed", st.frac_pivot_positive_deployed},
                  {"model_version", model_version(params)}});
  *ctx.out << "pivot mean normalized " << st.mean_normalized_pivot << ", non-pivot " << st.mean_normalized_non_pivot
           << ", pivot positive " << st.frac_pivot_positive_deployed << "\n";
}

inline RewardModelParams train_rm_on(const RunContext& ctx, const Dataset& data) {
  auto res = train_reward_model(data, rm_train_config(ctx.config));
  for (const auto& w : res.warnings) *ctx.err << "warning: " << w << "\n";
  const auto& h = res.params.loss_history;
  *ctx.out << "reward model: final loss " << h.front().final_loss << " -> " << h.back().final_loss << "\n";
  return res.params;
}

// Histogram of normalized rewards on [0, 1], split by pivot flag.
inline std::string histogram_csv(const std::vector<std::vector<std::string>>& rows, int bins) {
  std::vector<std::size_t> pivot(static_cast<std::size_t>(bins)), other(static_cast<std::size_t>(bins));
  std::size_t np = 0, no = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2) throw FormatError("pivot_rewards.csv: bad row");
    const double v = std::stod(rows[i][1]);
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(v * bins), 0, bins - 1));
    if (rows[i][0] == "1") {
      ++pivot[b];
      ++np;
    } else {
      ++other[b];
      ++no;
    }
  }
  Csv csv({"bin_lo", "bin_hi", "pivot_count", "non_pivot_count", "pivot_frac", "non_pivot_frac"});
  for (int b = 0; b < bins; ++b) {
    const auto i = static_cast<std::size_t>(b);
    csv.row({Csv::num(static_cast<double>(b) / bins), Csv::num(static_cast<double>(b + 1) / bins), Csv::num(pivot[i]),
             Csv::num(other[i]), Csv::num(np ? static_cast<double>(pivot[i]) / static_cast<double>(np) : 0.0),
             Csv::num(no ? static_cast<double>(other[i]) / static_cast<double>(no) : 0.0)});
  }
  return csv.str();
}

}  // namespace app_detail

inline void cmd_gen_world(const CommandArgs&, RunContext& ctx) {
  const auto w = generate_world(world_config(ctx.config));
  write_json(ctx.dir / "world.json", to_json(w));
  *ctx.out << "world: " << w.num_entities() << " entities, " << w.edges().size() << " edges\n";
}

inline void cmd_gen_data(const CommandArgs&, RunContext& ctx) {
  const auto res = build_dataset(datagen_config(ctx.config));
  write_json(ctx.dir / "world.json", to_json(res.world));
  write_tasks(ctx.dir / "tasks.jsonl", res.tasks);
  persist(res.dataset, (ctx.dir / "dataset.jsonl").string());
  const auto& r = res.report;
  Json per_hop = Json::object();
  for (const auto& [h, n] : r.per_hop) per_hop[std::to_string(h)] = n;
  write_json(ctx.dir / "report.json", Json{{"generated", r.generated},
                                           {"filtered", r.filtered},
                                           {"kept", res.dataset.trajectories.size()},
                                           {"successes", r.successes},
                                           {"pivot_steps", r.pivot_steps},
                                           {"non_pivot_steps", r.non_pivot_steps},
                                           {"per_hop", per_hop}});
  *ctx.out << "dataset: " << res.dataset.trajectories.size() << " trajectories, " << r.successes << " successes, "
           << r.pivot_steps << " pivot / " << r.non_pivot_steps << " non-pivot steps\n";
}

inline void cmd_train_rm(const CommandArgs& a, RunContext& ctx) {
  if (a.data.empty()) throw MissingArtifactError("missing dataset: train-rm needs --data <dataset.jsonl>");
  const auto data = load(a.data);
  const auto params = app_detail::train_rm_on(ctx, data);
  app_detail::write_rm_artifacts(ctx, params, data);
}

inline void cmd_serve_rm(const CommandArgs& a, RunContext& ctx) {
  const auto path = app_detail::reward_model_path(a, ctx.config);
  if (path.empty()) throw MissingArtifactError("missing reward model: serve-rm needs --reward-model <checkpoint>");
  RewardServiceConfig sc;
  sc.max_batch = ctx.config.at("reward_model.max_batch").get<std::size_t>();
  sc.scaling = reward_scaling(ctx.config);
  RewardService service(app_detail::load_reward_model(path), sc);
  std::unique_ptr<RetrievalService> retrieval;
  httplib::Server srv;
  service.mount(srv);
  if (!a.world.empty()) {
    retrieval = std::make_unique<RetrievalService>(world_from_json(read_json(a.world, "world file")),
                                                   retrieval_config(ctx.config),
                                                   ctx.config.at("seed").get<std::uint64_t>());
    retrieval->mount(srv);
  }
  const auto ep = parse_endpoint(a.bind.empty() ? ctx.config.at("reward_model.url").get<std::string>() : a.bind);
  if (!srv.bind_to_port(ep.host, ep.port)) throw TransportError("cannot bind " + ep.host + ":" + std::to_string(ep.port));
  *ctx.out << "serving model " << service.version() << " on " << ep.host << ":" << ep.port << std::endl;
  srv.listen_after_bind();
}

inline void cmd_train_policy(const CommandArgs& a, RunContext& ctx) {
  const Arm arm = parse_arm(a.arm);
  auto source = app_detail::reward_source(a, ctx.config, arm);
  const auto world = app_detail::world_for(a, ctx.config);
  const auto split = app_detail::split_for(world, ctx.config);
  const auto pcfg = policy_train_config(ctx.config);
  const auto res = train_policy(world, split.train, arm, source.get(), pcfg);

  write_json(ctx.dir / "world.json", to_json(world));
  write_tasks(ctx.dir / "train_tasks.jsonl", split.train);
  write_tasks(ctx.dir / "heldout_tasks.jsonl", split.held_out);
  auto ckpt = to_json(res.params);
  ckpt["arm"] = arm_name(arm);
  ckpt["seed"] = pcfg.seed;
  // Streams derive from (seed, update, prompt, sample).
  ckpt["rng_state"] = Json{{"seed", pcfg.seed}, {"next_update", pcfg.updates + 1}};
  ckpt["config"] = ctx.config;
  write_json(ctx.dir / "policy.json", ckpt);

  Csv curve(app_detail::kCurveHeader);
  app_detail::curve_rows(curve, pcfg.seed, res.curve);
  write_text(ctx.dir / "curve.csv", curve.str());

  const auto rows = evaluate_policy(res.params, world, split.held_out, app_detail::eval_options(ctx.config),
                                    app_detail::eval_seed(ctx.config));
  Csv eval(app_detail::kEvalHeader);
  app_detail::eval_rows(eval, arm_name(arm), pcfg.seed, rows);
  write_text(ctx.dir / "eval.csv", eval.str());
  *ctx.out << arm_name(arm) << ": held-out EM " << rows.back().em << ", mean turns " << rows.back().mean_turns << "\n";
}

inline void cmd_eval(const CommandArgs& a, RunContext& ctx) {
  if (a.policy.empty()) throw MissingArtifactError("missing policy: eval needs --policy <policy.json>");
  const auto ckpt = read_json(a.policy, "policy checkpoint");
  const auto params = policy_from_json(ckpt);
  const auto world = app_detail::world_for(a, ctx.config);
  const auto split = app_detail::split_for(world, ctx.config);
  const auto rows = evaluate_policy(params, world, split.held_out, app_detail::eval_options(ctx.config),
                                    app_detail::eval_seed(ctx.config));
  Csv eval(app_detail::kEvalHeader);
  app_detail::eval_rows(eval, ckpt.value("arm", std::string("unknown")), ckpt.value("seed", std::uint64_t{0}), rows);
  write_text(ctx.dir / "eval.csv", eval.str());
  for (const auto& r : rows)
    *ctx.out << (r.hops ? std::to_string(r.hops) + "-hop" : std::string("all")) << ": EM " << r.em << ", F1 " << r.f1
             << ", turns " << r.mean_turns << " (" << r.tasks << " tasks)\n";
}

// Three arms with shared seeds on one world and one task split. Without a
// checkpoint, a reward model is first trained on behavior data from the
// same world config.
inline void cmd_ablate(const CommandArgs& a, RunContext& ctx) {
  const auto world = app_detail::world_for(a, ctx.config);
  const auto split = app_detail::split_for(world, ctx.config);

  RewardModelParams rm;
  const auto path = app_detail::reward_model_path(a, ctx.config);
  if (!path.empty()) {
    rm = app_detail::load_reward_model(path);
  } else {
    const auto data = build_dataset(datagen_config(ctx.config));
    rm = app_detail::train_rm_on(ctx, data.dataset);
    app_detail::write_rm_artifacts(ctx, rm, data.dataset);
  }
  InProcessRewards source(rm, reward_scaling(ctx.config));

  Csv curves(app_detail::kCurveHeader);
  Csv eval(app_detail::kEvalHeader);
  Csv summary({"arm", "seed", "updates", "heldout_em", "heldout_f1", "heldout_mean_turns", "final_train_success",
               "final_train_mean_turns"});
  for (const auto& s : ctx.config.at("ablate.seeds")) {
    auto pcfg = policy_train_config(ctx.config);
    pcfg.seed = s.get<std::uint64_t>();
    for (Arm arm : {Arm::Outcome, Arm::Penalty, Arm::Pica}) {
      const auto res = train_policy(world, split.train, arm, &source, pcfg);
      const auto rows = evaluate_policy(res.params, world, split.held_out, app_detail::eval_options(ctx.config),
                                        app_detail::eval_seed(ctx.config));
      app_detail::curve_rows(curves, pcfg.seed, res.curve);
      app_detail::eval_rows(eval, arm_name(arm), pcfg.seed, rows);
      const auto& last = res.curve.back();
      summary.row({arm_name(arm), Csv::num(static_cast<std::size_t>(pcfg.seed)), Csv::num(pcfg.updates),
                   Csv::num(rows.back().em), Csv::num(rows.back().f1), Csv::num(rows.back().mean_turns),
                   Csv::num(last.success_rate), Csv::num(last.mean_turns)});
      *ctx.out << "seed " << pcfg.seed << " " << arm_name(arm) << ": held-out EM " << rows.back().em << ", turns "
               << rows.back().mean_turns << "\n";
    }
  }
  write_json(ctx.dir / "world.json", to_json(world));
  write_text(ctx.dir / "ablation_curves.csv", curves.str());
  write_text(ctx.dir / "ablation_eval.csv", eval.str());
  write_text(ctx.dir / "ablation_summary.csv", summary.str());
}

// Collects plot-ready CSVs from earlier run directories.
inline void cmd_export(const CommandArgs& a, RunContext& ctx) {
  if (a.runs.empty()) throw MissingArtifactError("export needs at least one --run <dir>");
  std::string curves, evals;
  std::vector<std::vector<std::string>> pivot_rows;
  auto append = [](std::string& acc, const fs::path& p, const std::string& run) {
    const auto rows = read_csv(p);
    for (std::size_t i = acc.empty() ? 0 : 1; i < rows.size(); ++i) {
      acc += i == 0 ? "run" : run;
      for (const auto& c : rows[i]) acc += "," + c;
      acc += "\n";
    }
  };
  for (const auto& r : a.runs) {
    const fs::path dir(r);
    if (!fs::is_directory(dir)) throw MissingArtifactError("missing run directory: " + r);
    const auto name = dir.filename().string();
    for (const char* f : {"curve.csv", "ablation_curves.csv"})
      if (fs::exists(dir / f)) append(curves, dir / f, name);
    for (const char* f : {"eval.csv", "ablation_eval.csv"})
      if (fs::exists(dir / f)) append(evals, dir / f, name);
    if (fs::exists(dir / "pivot_rewards.csv")) {
      auto rows = read_csv(dir / "pivot_rewards.csv");
      if (pivot_rows.empty()) pivot_rows.push_back(rows.front());
      pivot_rows.insert(pivot_rows.end(), rows.begin() + 1, rows.end());
    }
  }
  if (curves.empty() && evals.empty() && pivot_rows.empty())
    throw MissingArtifactError("no exportable artifacts in the given run directories");
  if (!curves.empty()) write_text(ctx.dir / "learning_curves.csv", curves);
  if (!evals.empty()) write_text(ctx.dir / "per_hop_eval.csv", evals);
  if (!pivot_rows.empty()) write_text(ctx.dir / "reward_histogram.csv", app_detail::histogram_csv(pivot_rows, 20));
}

// Parses and runs one command; returns the process exit code.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-hop search agent with step-level credit assignment"};
  app.require_subcommand(1);
  CommandArgs a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", a.config_path, "JSON config file");
    sub->add_option("--set", a.overrides, "Override, key=value (repeatable)");
    sub->add_option("--runs-dir", a.runs_dir, "Parent directory for run directories");
    sub->add_option("--out", a.out_dir, "Explicit run directory");
    return sub;
  };
  auto* gen_world = common(app.add_subcommand("gen-world", "Generate a knowledge world"));
  auto* gen_data = common(app.add_subcommand("gen-data", "Generate labeled behavior trajectories"));
  auto* train_rm = common(app.add_subcommand("train-rm", "Train the step reward model"));
  train_rm->add_option("--data", a.data, "dataset.jsonl from gen-data");
  auto* serve_rm = common(app.add_subcommand("serve-rm", "Serve a reward model checkpoint over HTTP"));
  serve_rm->add_option("--reward-model", a.reward_model, "reward_model.json");
  serve_rm->add_option("--bind", a.bind, "host:port (default from reward_model.url)");
  serve_rm->add_option("--world", a.world, "world.json; enables POST /retrieve");
  auto* train_pol = common(app.add_subcommand("train-policy", "Train the search policy with PPO"));
  train_pol->add_option("--arm", a.arm, "outcome, penalty or pica")->capture_default_str();
  train_pol->add_option("--reward-model", a.reward_model, "reward_model.json for the pica arm");
  train_pol->add_flag("--remote", a.remote_rewards, "fetch step rewards from reward_model.url");
  train_pol->add_option("--world", a.world, "world.json (default: generated from config)");
  auto* eval = common(app.add_subcommand("eval", "Evaluate a policy on held-out tasks"));
  eval->add_option("--policy", a.policy, "policy.json");
  eval->add_option("--world", a.world, "world.json (default: generated from config)");
  auto* ablate = common(app.add_subcommand("ablate", "Run the three reward arms with shared seeds"));
  ablate->add_option("--reward-model", a.reward_model, "reward_model.json (default: train one first)");
  ablate->add_option("--world", a.world, "world.json (default: generated from config)");
  auto* exp = common(app.add_subcommand("export", "Collect plot-ready CSVs from run directories"));
  exp->add_option("--run", a.runs, "run directory (repeatable)");

  if (!argv.empty() && !argv.front().empty() && argv.front()[0] != '-') {
    bool known = false;
    for (auto* s : app.get_subcommands({})) known = known || s->get_name() == argv.front();
    if (!known) {
      err << "error: unknown command '" << argv.front() << "'\nrun with --help for usage\n";
      return exit_code::usage;
    }
  }

  std::vector<const char*> cargv;
  cargv.push_back("pica");
  for (const auto& s : argv) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return exit_code::usage;
  }

  const std::map<CLI::App*, void (*)(const CommandArgs&, RunContext&)> handlers = {
      {gen_world, cmd_gen_world}, {gen_data, cmd_gen_data}, {train_rm, cmd_train_rm}, {serve_rm, cmd_serve_rm},
      {train_pol, cmd_train_policy}, {eval, cmd_eval},      {ablate, cmd_ablate},     {exp, cmd_export}};
  auto* sub = app.get_subcommands().front();
  a.command = sub->get_name();

  try {
    RunContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    ctx.config = load_config(a.config_path, a.overrides);
    std::string inputs = app_detail::content_tag(a.data, "dataset") + app_detail::content_tag(a.world, "world file") +
                         app_detail::content_tag(a.policy, "policy checkpoint") + "arm=" + a.arm + ";";
    const auto rm = app_detail::reward_model_path(a, ctx.config);
    if (!rm.empty() && a.command != "serve-rm") inputs += app_detail::content_tag(rm, "reward model");
    for (const auto& r : a.runs) inputs += "run=" + r + ";";
    ctx.dir = app_detail::make_run_dir(a, ctx.config, inputs);
    fs::create_directories(ctx.dir);
    write_json(ctx.dir / "config.json", ctx.config);
    handlers.at(sub)(a, ctx);
    out << "run directory: " << ctx.dir.string() << "\n";
    return exit_code::ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const MissingArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::missing_artifact;
  } catch (const FormatError& e) {
    err << "error: unreadable artifact: " << e.what() << "\n";
    return exit_code::missing_artifact;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return exit_code::divergence;
  } catch (const ValidationError& e) {
    err << "error: reward service rejected the request (" << e.status << "): " << e.what() << "\n";
    return exit_code::transport;
  } catch (const TransportError& e) {
    err << "error: transport: " << e.what() << "\n";
    return exit_code::transport;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::usage;
  }
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc)); }

}  // namespace pica
