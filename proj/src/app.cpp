#include "tscopf/app.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

namespace tscopf::app {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Proposed: return "proposed";
    case Variant::Base: return "base";
    case Variant::Tsi: return "tsi";
    case Variant::AllState: return "allstate";
    case Variant::OnlyLoad: return "onlyload";
    case Variant::Curriculum: return "curriculum";
    case Variant::Parallel: return "parallel";
    case Variant::DdpgCp: return "ddpg_cp";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::Proposed, Variant::Base, Variant::Tsi, Variant::AllState, Variant::OnlyLoad,
                 Variant::Curriculum, Variant::Parallel, Variant::DdpgCp})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

void apply_variant(Variant v, EnvConfig& env, TrainingConfig& t) {
  const bool reduced = v != Variant::Base && v != Variant::Tsi && v != Variant::AllState;
  env.observation_variant = reduced ? ObservationVariant::LoadsOnly : ObservationVariant::FullState;
  env.reward_variant = v == Variant::Base  ? RewardVariant::AngleSpread
                       : v == Variant::Tsi ? RewardVariant::Tsi
                                           : RewardVariant::InstabilityDuration;
  t.curriculum = v == Variant::Proposed || v == Variant::Curriculum || v == Variant::DdpgCp;
  t.parallel = v == Variant::Proposed || v == Variant::Parallel || v == Variant::DdpgCp;
  t.ensemble = v == Variant::Proposed;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

json env_json(const EnvConfig& e) {
  return {{"lambda_dyn", e.lambda_dyn},
          {"lambda_st", e.lambda_st},
          {"lambda_opt", e.lambda_opt},
          {"load_range", e.load_range},
          {"reward", to_string(e.reward_variant)},
          {"observation", to_string(e.observation_variant)},
          {"t_end", e.dyn_cfg.t_end},
          {"dt", e.dyn_cfg.dt},
          {"f_nominal", e.dyn_cfg.f_nominal}};
}

json training_json(const TrainingConfig& t) {
  return {{"t_epoch", t.t_epoch},         {"t_clm", t.t_clm},
          {"n_p", t.n_p},                 {"n_batch", t.n_batch},
          {"discount", t.discount},       {"eps_floor", t.eps_floor},
          {"eval_every", t.eval_every},   {"eval_scenarios", t.eval_scenarios},
          {"seeds", t.seeds},             {"curriculum", t.curriculum},
          {"parallel", t.parallel},       {"ensemble", t.ensemble},
          {"hidden", t.hidden},           {"actor_lr", t.actor_lr},
          {"critic_lr", t.critic_lr},     {"replay_capacity", t.replay_capacity},
          {"reward_scale", t.reward_scale}, {"stop_after", t.stop_after}};
}

json swarm_json(const SwarmSettings& s) {
  return {{"n_particles", s.n_particles}, {"n_iters", s.n_iters}, {"w", s.w}, {"c1", s.c1}, {"c2", s.c2}};
}

void apply_config(const json& doc, RunManifest& m) {
  check_keys(doc, "config", {"env", "training", "pso"});
  if (doc.contains("env")) {
    const auto& e = doc.at("env");
    check_keys(e, "config.env",
               {"lambda_dyn", "lambda_st", "lambda_opt", "load_range", "reward", "observation", "t_end", "dt",
                "f_nominal"});
    take(e, "lambda_dyn", m.env.lambda_dyn);
    take(e, "lambda_st", m.env.lambda_st);
    take(e, "lambda_opt", m.env.lambda_opt);
    take(e, "load_range", m.env.load_range);
    if (e.contains("reward")) m.env.reward_variant = parse_reward_variant(e.at("reward").get<std::string>());
    if (e.contains("observation"))
      m.env.observation_variant = parse_observation_variant(e.at("observation").get<std::string>());
    take(e, "t_end", m.env.dyn_cfg.t_end);
    take(e, "dt", m.env.dyn_cfg.dt);
    take(e, "f_nominal", m.env.dyn_cfg.f_nominal);
  }
  if (doc.contains("training")) {
    const auto& t = doc.at("training");
    check_keys(t, "config.training",
               {"t_epoch", "t_clm", "n_p", "n_batch", "discount", "eps_floor", "eval_every", "eval_scenarios",
                "seeds", "curriculum", "parallel", "ensemble", "hidden", "actor_lr", "critic_lr", "replay_capacity",
                "reward_scale", "stop_after"});
    auto& c = m.training;
    take(t, "t_epoch", c.t_epoch);
    take(t, "t_clm", c.t_clm);
    take(t, "n_p", c.n_p);
    take(t, "n_batch", c.n_batch);
    take(t, "discount", c.discount);
    take(t, "eps_floor", c.eps_floor);
    take(t, "eval_every", c.eval_every);
    take(t, "eval_scenarios", c.eval_scenarios);
    take(t, "seeds", c.seeds);
    take(t, "curriculum", c.curriculum);
    take(t, "parallel", c.parallel);
    take(t, "ensemble", c.ensemble);
    take(t, "hidden", c.hidden);
    take(t, "actor_lr", c.actor_lr);
    take(t, "critic_lr", c.critic_lr);
    take(t, "replay_capacity", c.replay_capacity);
    take(t, "reward_scale", c.reward_scale);
    take(t, "stop_after", c.stop_after);
  }
  if (doc.contains("pso")) {
    const auto& p = doc.at("pso");
    check_keys(p, "config.pso", {"n_particles", "n_iters", "w", "c1", "c2"});
    take(p, "n_particles", m.swarm.n_particles);
    take(p, "n_iters", m.swarm.n_iters);
    take(p, "w", m.swarm.w);
    take(p, "c1", m.swarm.c1);
    take(p, "c2", m.swarm.c2);
  }
}

}  // namespace

void apply_config_json(const std::string& text, RunManifest& m) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  try {
    apply_config(doc, m);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

std::string manifest_json(const RunManifest& m) {
  json doc = {{"schema", "tscopf-manifest"},
              {"version", 1},
              {"command", m.command},
              {"case", m.case_path.generic_string()},
              {"seed", m.seed},
              {"variant", m.variant},
              {"config", {{"env", env_json(m.env)}, {"training", training_json(m.training)},
                          {"pso", swarm_json(m.swarm)}}}};
  return doc.dump(2) + "\n";
}

RunManifest parse_manifest_json(const std::string& text) {
  RunManifest m;
  try {
    const auto doc = json::parse(text);
    if (doc.value("schema", "") != "tscopf-manifest" || doc.value("version", 0) != 1)
      throw std::invalid_argument("not a tscopf manifest (schema tscopf-manifest v1)");
    m.command = doc.at("command").get<std::string>();
    m.case_path = doc.at("case").get<std::string>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.variant = doc.at("variant").get<std::string>();
    apply_config(doc.at("config"), m);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("manifest: ") + e.what());
  }
  return m;
}

fs::path checkpoint_path(const fs::path& dir, std::uint64_t seed) {
  return dir / fmt::format("agent_{}.ckpt", seed);
}

fs::path training_log_path(const fs::path& dir, std::uint64_t seed) {
  return dir / fmt::format("train_log_{}.csv", seed);
}

void save_agent(const fs::path& path, const Agent& agent, const Environment& env, std::uint64_t seed,
                const std::string& variant) {
  const json meta = {{"seed", seed},
                     {"variant", variant},
                     {"observation", to_string(env.config().observation_variant)},
                     {"obs_dim", env.observation_dim()},
                     {"act_dim", env.action_dim()},
                     {"n_buses", env.grid().n_buses()},
                     {"n_generators", env.grid().n_generators()},
                     {"n_loads", env.grid().n_loads()}};
  nn::save_checkpoint(path, {meta.dump(), {agent.actor, agent.critic}, {agent.actor_opt, agent.critic_opt}});
}

nn::Mlp load_actor(const fs::path& path, const Environment& env) {
  nn::Checkpoint ckpt;
  try {
    ckpt = nn::load_checkpoint(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  if (ckpt.nets.empty()) throw CheckpointError(path.string() + ": no networks stored");
  auto& actor = ckpt.nets.front();
  const auto obs = static_cast<int>(env.observation_dim());
  const auto act = static_cast<int>(env.action_dim());
  if (actor.input_dim() != obs || actor.output_dim() != act)
    throw CheckpointError(fmt::format("{}: actor shape {}->{} does not match case ({}->{})", path.string(),
                                      actor.input_dim(), actor.output_dim(), obs, act));
  try {
    const auto meta = json::parse(ckpt.meta);
    const auto observation = meta.value("observation", "");
    if (observation != to_string(env.config().observation_variant))
      throw CheckpointError(path.string() + ": trained with observation '" + observation + "'");
  } catch (const json::exception&) {
    throw CheckpointError(path.string() + ": unreadable metadata");
  }
  return std::move(actor);
}

namespace {

class CaseLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::shared_ptr<const GridCase> open_case(const fs::path& path) {
  if (path.empty()) throw CaseLoadError("no case given (--case)");
  if (!fs::exists(path)) throw CaseLoadError("case file not found: " + path.string());
  try {
    return std::make_shared<const GridCase>(load_case(path));
  } catch (const std::exception& e) {
    throw CaseLoadError(e.what());
  }
}

Rng stream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose,
                    static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

enum : std::uint32_t { kScenarioStream = 11, kSwarmStream = 12, kStateStream = 13 };

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string csv_header(const std::string& schema, const std::string& columns) {
  return "# schema: tscopf-" + schema + " v1\n" + columns + "\n";
}

struct Options {
  std::string case_path, config_path, out_dir, agents_dir, variant = "proposed", scenario_file, state_file;
  std::uint64_t seed = 0;
  std::optional<int> workers;
  int threads = 1;
  int scenarios = 100;
  std::size_t index = 0;
  bool full_budget = false;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("tscopf", sink);
  log->set_pattern("[%l] %v");
  const char* level = std::getenv("TSCOPF_LOG_LEVEL");
  log->set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  return log;
}

RunManifest base_manifest(const std::string& command, const Options& o) {
  RunManifest m;
  m.command = command;
  m.case_path = o.case_path;
  m.out_dir = o.out_dir;
  m.seed = o.seed;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw std::invalid_argument("config file not found: " + o.config_path);
    apply_config_json(read_text(o.config_path), m);
  }
  m.variant = o.variant;
  apply_variant(parse_variant(o.variant), m.env, m.training);
  if (o.workers) m.training.n_p = *o.workers;
  m.training.threads = o.threads;
  return m;
}

void prepare_out(const RunManifest& m) {
  if (m.out_dir.empty()) throw std::invalid_argument("no output directory given (--out)");
  fs::create_directories(m.out_dir);
  write_text(m.out_dir / "manifest.json", manifest_json(m));
}

int cmd_train(const Options& o, std::ostream& out, spdlog::logger& log) {
  auto m = base_manifest("train", o);
  auto grid = open_case(m.case_path);
  m.training.validate();
  const Environment env(grid, m.env);
  prepare_out(m);

  std::string timing = csv_header("train-timing", "seed,seconds");
  for (const auto seed : m.training.seeds) {
    log.info("training member seed {} ({}, {} episodes, {} workers)", seed, m.variant, m.training.episodes(),
             m.training.workers());
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = run_training(grid, m.env, m.training, seed, [&](int episode, const TrainingLog& tl) {
      if (!tl.evals.empty() && tl.evals.back().episode == episode)
        log.info("seed {} episode {}: eval avg reward {:.2f}, epsilon {:.3f}", seed, episode,
                 tl.evals.back().eval_avg_reward, tl.evals.back().epsilon);
    });
    timing += fmt::format("{},{:.3f}\n", seed, seconds_since(t0));
    save_agent(checkpoint_path(m.out_dir, seed), result.agent, env, seed, m.variant);
    write_training_log(training_log_path(m.out_dir, seed), result.log);
    const double last = result.log.evals.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                 : result.log.evals.back().eval_avg_reward;
    out << fmt::format("seed {}: final eval avg reward {:.2f}\n", seed, last);
  }
  write_text(m.out_dir / "train_timing.csv", timing);
  return kExitOk;
}

struct SolveSetup {
  RunManifest m;
  std::shared_ptr<const GridCase> grid;
  std::unique_ptr<Environment> env;
  AgentEnsemble ensemble;
  std::vector<std::uint64_t> member_seeds;
  std::vector<CustomState> scenarios;
};

SolveSetup setup_solve(const std::string& command, const Options& o) {
  if (o.agents_dir.empty()) throw std::invalid_argument("no agent directory given (--agents)");
  const fs::path agents = o.agents_dir;
  if (!fs::exists(agents / "manifest.json"))
    throw CheckpointError("no training manifest in '" + agents.string() + "'");
  SolveSetup s;
  s.m = parse_manifest_json(read_text(agents / "manifest.json"));
  s.m.command = command;
  if (!o.case_path.empty()) s.m.case_path = o.case_path;
  s.m.out_dir = o.out_dir;
  s.m.seed = o.seed;
  s.m.training.threads = 1;
  if (!o.config_path.empty()) {
    // Only the swarm section may differ from the training run.
    RunManifest extra;
    apply_config_json(read_text(o.config_path), extra);
    s.m.swarm = extra.swarm;
  }
  if (o.full_budget) s.m.swarm = {200, 150, s.m.swarm.w, s.m.swarm.c1, s.m.swarm.c2};
  s.grid = open_case(s.m.case_path);
  s.env = std::make_unique<Environment>(s.grid, s.m.env);

  s.member_seeds = s.m.training.seeds;
  if (!s.m.training.ensemble && !s.member_seeds.empty()) s.member_seeds.resize(1);
  if (s.member_seeds.empty()) throw CheckpointError("training manifest lists no member seeds");
  for (const auto seed : s.member_seeds) s.ensemble.actors.push_back(load_actor(checkpoint_path(agents, seed), *s.env));

  if (!o.scenario_file.empty()) {
    s.scenarios = load_scenarios(o.scenario_file);
  } else {
    if (o.scenarios < 1) throw std::invalid_argument("--scenarios must be positive");
    auto rng = stream(o.seed, kScenarioStream);
    for (int i = 0; i < o.scenarios; ++i) s.scenarios.push_back(s.env->sample_insecure(rng));
  }
  prepare_out(s.m);
  save_scenarios(s.m.out_dir / "scenarios.json", s.scenarios);
  return s;
}

int cmd_solve(const Options& o, std::ostream& out, spdlog::logger& log) {
  auto s = setup_solve("solve", o);
  log.info("solving {} scenarios with {} member(s)", s.scenarios.size(), s.ensemble.actors.size());
  std::string rows = csv_header("solve", "scenario,member_seed,reward,stage,avg_r,s_pct,f_s_pct,f_d_pct,f_nc_pct");
  std::string timing = csv_header("solve-timing", "scenario,seconds");
  std::vector<RewardBreakdown> outcomes;
  double total = 0.0;
  for (std::size_t i = 0; i < s.scenarios.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto d = ensemble_decide(s.ensemble, s.scenarios[i], *s.env);
    const double dt = seconds_since(t0);
    total += dt;
    rows += fmt::format("{},{},{},{},,,,,\n", i, s.member_seeds[d.member], d.reward.value,
                        static_cast<int>(d.reward.stage));
    timing += fmt::format("{},{:.6f}\n", i, dt);
    outcomes.push_back(std::move(d.reward));
  }
  const auto mt = summarize(outcomes);
  rows += fmt::format("summary,,,,{},{},{},{},{}\n", mt.avg_r, mt.s, mt.f_s, mt.f_d, mt.f_nc);
  timing += fmt::format("total,{:.6f}\n", total);
  write_text(s.m.out_dir / "solve.csv", rows);
  write_text(s.m.out_dir / "solve_timing.csv", timing);
  out << fmt::format("Avg_r {:.2f}  S% {:.2f}  F_S% {:.2f}  F_D% {:.2f}  F_NC% {:.2f}\n", mt.avg_r, mt.s, mt.f_s,
                     mt.f_d, mt.f_nc);
  return kExitOk;
}

int cmd_compare_pso(const Options& o, std::ostream& out, spdlog::logger& log) {
  auto s = setup_solve("compare-pso", o);
  log.info("comparing on {} scenarios, swarm {}x{}", s.scenarios.size(), s.m.swarm.n_particles, s.m.swarm.n_iters);
  std::string rows = csv_header("compare-pso",
                                "scenario,agent_member_seed,agent_reward,agent_stage,pso_reward,pso_stage,"
                                "pso_evaluations,ratio_pct");
  std::string traces = csv_header("pso-trace", "scenario,iteration,best_reward");
  std::string timing = csv_header("compare-pso-timing", "scenario,agent_seconds,pso_seconds");
  double agent_total = 0.0, pso_total = 0.0, ratio_sum = 0.0, agent_sum = 0.0, pso_sum = 0.0;
  int ratio_n = 0;

  SwarmConfig sc;
  sc.n_particles = s.m.swarm.n_particles;
  sc.n_iters = s.m.swarm.n_iters;
  sc.w = s.m.swarm.w;
  sc.c1 = s.m.swarm.c1;
  sc.c2 = s.m.swarm.c2;
  sc.lo = s.env->bounds().lo;
  sc.hi = s.env->bounds().hi;
  sc.threads = 1;  // timed sections run on one core

  for (std::size_t i = 0; i < s.scenarios.size(); ++i) {
    const auto& scenario = s.scenarios[i];
    auto t0 = std::chrono::steady_clock::now();
    const auto d = ensemble_decide(s.ensemble, scenario, *s.env);
    const double agent_dt = seconds_since(t0);

    auto rng = stream(o.seed, kSwarmStream, i);
    const Fitness fitness = [&](const std::vector<double>& a) { return s.env->step(scenario, a).reward.value; };
    t0 = std::chrono::steady_clock::now();
    const auto r = pso_optimize(fitness, sc, rng);
    const double pso_dt = seconds_since(t0);

    agent_total += agent_dt;
    pso_total += pso_dt;
    agent_sum += d.reward.value;
    pso_sum += r.best_reward;
    const auto pso_stage = stage_of(r.best_reward);
    std::string ratio;
    if (d.reward.stage >= Stage::StaticViolation && pso_stage >= Stage::StaticViolation && r.best_reward != 0.0) {
      const double pct = 100.0 * d.reward.value / r.best_reward;
      ratio = fmt::format("{}", pct);
      ratio_sum += pct;
      ++ratio_n;
    }
    rows += fmt::format("{},{},{},{},{},{},{},{}\n", i, s.member_seeds[d.member], d.reward.value,
                        static_cast<int>(d.reward.stage), r.best_reward, static_cast<int>(pso_stage), r.evaluations,
                        ratio);
    for (std::size_t k = 0; k < r.trace.size(); ++k) traces += fmt::format("{},{},{}\n", i, k + 1, r.trace[k]);
    timing += fmt::format("{},{:.6f},{:.6f}\n", i, agent_dt, pso_dt);
    log.debug("scenario {}: agent {:.2f}, pso {:.2f}", i, d.reward.value, r.best_reward);
  }
  const double n = static_cast<double>(s.scenarios.size());
  const std::string r_pct = ratio_n ? fmt::format("{}", ratio_sum / ratio_n) : "";
  rows += fmt::format("summary,,{},,{},,,{}\n", agent_sum / n, pso_sum / n, r_pct);
  const double time_ratio = pso_total > 0.0 ? agent_total / pso_total : 0.0;
  timing += fmt::format("total,{:.6f},{:.6f}\n", agent_total, pso_total);
  timing += fmt::format("# time_ratio,{:.6g}\n", time_ratio);
  write_text(s.m.out_dir / "compare_pso.csv", rows);
  write_text(s.m.out_dir / "pso_traces.csv", traces);
  write_text(s.m.out_dir / "compare_pso_timing.csv", timing);
  out << fmt::format("agent avg {:.2f}  pso avg {:.2f}  R% {}  time ratio {:.4g}\n", agent_sum / n, pso_sum / n,
                     r_pct.empty() ? "n/a" : r_pct, time_ratio);
  return kExitOk;
}

CustomState pick_state(const Options& o, const Environment& env) {
  if (!o.state_file.empty()) {
    const auto all = load_scenarios(o.state_file);
    if (o.index >= all.size())
      throw std::invalid_argument(fmt::format("--index {} out of range ({} scenarios)", o.index, all.size()));
    return all[o.index];
  }
  auto rng = stream(o.seed, kStateStream);
  return env.sample_state(rng);
}

int cmd_powerflow(const Options& o, std::ostream& out, spdlog::logger&) {
  auto m = base_manifest("powerflow", o);
  const auto grid = open_case(m.case_path);
  const Environment env(grid, m.env);
  const auto state = pick_state(o, env);
  prepare_out(m);
  const auto demand = state.demand();
  const auto sol = solve_nr(*grid, state.dispatch(), demand);

  std::string buses = csv_header("powerflow-buses", "bus,v_pu,theta_rad");
  std::string gens = csv_header("powerflow-generators", "bus,p_pu,q_pu");
  std::string lines = csv_header("powerflow-branches", "from_bus,to_bus,p_from_pu");
  if (sol.converged) {
    for (std::size_t i = 0; i < grid->n_buses(); ++i)
      buses += fmt::format("{},{},{}\n", grid->buses[i].id, sol.v[i], sol.theta[i]);
    for (std::size_t g = 0; g < grid->n_generators(); ++g)
      gens += fmt::format("{},{},{}\n", grid->generators[g].bus, sol.p_g[g], sol.q_g[g]);
    for (std::size_t b = 0; b < grid->branches.size(); ++b)
      lines += fmt::format("{},{},{}\n", grid->branches[b].from_bus, grid->branches[b].to_bus, sol.p_line[b]);
  }
  write_text(m.out_dir / "powerflow_buses.csv", buses);
  write_text(m.out_dir / "powerflow_generators.csv", gens);
  write_text(m.out_dir / "powerflow_branches.csv", lines);
  save_scenarios(m.out_dir / "state.json", {state});
  out << fmt::format("converged {} after {} iterations, max mismatch {:.3e}\n", sol.converged, sol.iterations,
                     sol.max_mismatch);
  if (sol.converged) {
    const auto rep = static_violations(*grid, sol);
    out << fmt::format("static violation {:.6g}, cost {:.6g}\n", rep.total(), generation_cost(*grid, sol.p_g));
  }
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out, spdlog::logger&) {
  auto m = base_manifest("simulate", o);
  const auto grid = open_case(m.case_path);
  const Environment env(grid, m.env);
  const auto state = pick_state(o, env);
  const auto demand = state.demand();
  const auto sol = solve_nr(*grid, state.dispatch(), demand);
  if (!sol.converged) throw std::runtime_error("power flow does not converge for this state");
  prepare_out(m);

  auto cfg = m.env.dyn_cfg;
  cfg.keep_trace = true;
  cfg.stop_on_instability = false;
  std::string rows =
      csv_header("simulate", "contingency,from_bus,to_bus,fault_end,stable,t_s,dt_s,spread_end_rad,tsi");
  for (std::size_t k = 0; k < grid->contingencies.size(); ++k) {
    const auto& g = grid->contingencies[k];
    const auto r = simulate(*grid, sol, demand, g, cfg);
    const auto& br = grid->branches[g.branch];
    rows += fmt::format("{},{},{},{},{},{},{},{},{}\n", k, br.from_bus, br.to_bus,
                        g.fault_end == FaultEnd::From ? "from" : "to", r.stable ? 1 : 0, r.t_s, r.dt_s,
                        r.spread_end, r.tsi);
    std::string trace = csv_header("spread-trace", "time_s,spread_rad");
    for (std::size_t i = 0; i < r.trace.size(); ++i)
      trace += fmt::format("{},{}\n", static_cast<double>(i) * cfg.dt, r.trace[i]);
    write_text(m.out_dir / fmt::format("trace_{}.csv", k), trace);
    out << fmt::format("contingency {} ({}-{}): {} dt_s {:.2f}\n", k, br.from_bus, br.to_bus,
                       r.stable ? "stable" : "unstable", r.dt_s);
  }
  write_text(m.out_dir / "simulate.csv", rows);
  save_scenarios(m.out_dir / "state.json", {state});
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Transient security-constrained OPF with DDPG-CPEn agents and a PSO baseline", "tscopf"};
  cli.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--case", o.case_path, "Case file (JSON)");
    sub->add_option("--config", o.config_path, "Configuration file (JSON)");
    sub->add_option("--out", o.out_dir, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Command-level seed");
  };
  auto variant = [&](CLI::App* sub) {
    sub->add_option("--variant", o.variant, "Ablation variant")
        ->check(CLI::IsMember({"proposed", "base", "tsi", "allstate", "onlyload", "curriculum", "parallel",
                               "ddpg_cp"}));
  };
  auto scenarios = [&](CLI::App* sub) {
    sub->add_option("--agents", o.agents_dir, "Directory written by train")->required();
    sub->add_option("--scenarios", o.scenarios, "Number of sampled insecure scenarios");
    sub->add_option("--scenario-file", o.scenario_file, "Scenario file instead of sampling");
  };
  auto state = [&](CLI::App* sub) {
    sub->add_option("--state", o.state_file, "Scenario file holding the state");
    sub->add_option("--index", o.index, "Scenario index within --state");
  };

  auto* train = cli.add_subcommand("train", "Train the ensemble members");
  common(train);
  variant(train);
  train->add_option("--workers", o.workers, "Exploration workers N_p");
  train->add_option("--threads", o.threads, "Physical threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  auto* solve = cli.add_subcommand("solve", "Apply trained agents to scenarios");
  common(solve);
  scenarios(solve);
  auto* compare = cli.add_subcommand("compare-pso", "Compare agents against particle swarm search");
  common(compare);
  scenarios(compare);
  compare->add_flag("--full-budget", o.full_budget, "Use 200 particles x 150 iterations");
  auto* sim = cli.add_subcommand("simulate", "Transient simulation of one state");
  common(sim);
  state(sim);
  auto* pf = cli.add_subcommand("powerflow", "Power flow of one state");
  common(pf);
  state(pf);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }

  auto log = make_logger(err);
  try {
    if (*train) return cmd_train(o, out, *log);
    if (*solve) return cmd_solve(o, out, *log);
    if (*compare) return cmd_compare_pso(o, out, *log);
    if (*sim) return cmd_simulate(o, out, *log);
    return cmd_powerflow(o, out, *log);
  } catch (const CaseLoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCase;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace tscopf::app
