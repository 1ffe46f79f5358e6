#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "tscopf/ddpg.hpp"
#include "tscopf/pso.hpp"

namespace tscopf::app {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitCase = 2;
inline constexpr int kExitCheckpoint = 3;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { Proposed, Base, Tsi, AllState, OnlyLoad, Curriculum, Parallel, DdpgCp };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
/// Overrides the reward, observation and algorithm switches of one ablation row.
void apply_variant(Variant v, EnvConfig& env, TrainingConfig& training);

struct SwarmSettings {
  int n_particles = 30;
  int n_iters = 50;
  double w = 0.8;
  double c1 = 0.5;
  double c2 = 0.5;
};

/// Everything a command needs to reproduce its outputs.
struct RunManifest {
  std::string command;
  std::filesystem::path case_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::string variant = "proposed";
  EnvConfig env;
  TrainingConfig training;
  SwarmSettings swarm;
};

/// Applies a JSON config ({"env": {...}, "training": {...}, "pso": {...}})
/// on top of the manifest's current values. Unknown keys are errors.
void apply_config_json(const std::string& text, RunManifest& m);
std::string manifest_json(const RunManifest& m);
RunManifest parse_manifest_json(const std::string& text);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed);
std::filesystem::path training_log_path(const std::filesystem::path& dir, std::uint64_t seed);

void save_agent(const std::filesystem::path& path, const Agent& agent, const Environment& env,
                std::uint64_t seed, const std::string& variant);
/// Loads the actor of a saved agent and checks it against the environment.
/// Throws CheckpointError on any mismatch or unreadable file.
nn::Mlp load_actor(const std::filesystem::path& path, const Environment& env);

/// Runs the `tscopf` command line. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tscopf::app
