#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tscopf/env.hpp"
#include "tscopf/mlp.hpp"
#include "tscopf/parallel.hpp"

namespace tscopf {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Transition {
  Observation o;
  ActionVector a;
  double r = 0.0;
  Observation o_next;
};

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  /// i = 0 is the oldest stored transition.
  [[nodiscard]] const Transition& at(std::size_t i) const;

  /// Uniform sample of n distinct indices; empty when size() < n.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
  std::vector<Transition> storage_;
};

struct Batch {
  nn::Matrix obs;     // obs_dim x n
  nn::Matrix action;  // act_dim x n
  nn::Vector reward;

  [[nodiscard]] bool empty() const { return reward.size() == 0; }
};

/// Pushes in order, then samples a minibatch (empty if the buffer holds fewer
/// than n_batch transitions).
Batch buffer_push_sample(ReplayBuffer& buf, std::vector<Transition> push, std::size_t n_batch, Rng& rng);

struct TrainingConfig {
  int t_epoch = 3000;
  int t_clm = 300;
  int n_p = 4;
  int n_batch = 256;
  double discount = 0.0;
  double eps_floor = 0.1;
  int eval_every = 100;
  int eval_scenarios = 100;
  std::vector<std::uint64_t> seeds{1024, 2048, 3072, 4096, 5120};
  bool curriculum = true;
  bool parallel = true;
  bool ensemble = true;
  std::vector<int> hidden{256, 256, 256};
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t replay_capacity = std::size_t{1} << 20;
  // The critic regresses reward * reward_scale.
  double reward_scale = 1e-3;
  // Physical worker threads; never changes results.
  int threads = 1;
  // Stop early (epsilon still follows t_epoch); 0 means run all episodes.
  int stop_after = 0;

  void validate() const;
  [[nodiscard]] int workers() const { return parallel ? n_p : 1; }
  [[nodiscard]] int episodes() const { return stop_after > 0 ? std::min(stop_after, t_epoch) : t_epoch; }
};

double epsilon_schedule(double eps, int t_epoch);
/// Exploration rate after `episode` decrements: max(1 - episode/t_epoch, floor).
double exploration_rate(int episode, int t_epoch, double floor = 0.1);

ActionVector clip_action(ActionVector a, const ActionBounds& bounds);

ActionVector noisy_action(const nn::Mlp& actor, const Observation& o, double eps,
                          const ActionBounds& bounds, Rng& rng);

struct CurriculumDraw {
  ActionVector action;
  int attempts = 0;
};

/// Uniform random actions until the power flow converges (1000 attempts max).
CurriculumDraw curriculum_action(const Environment& env, const CustomState& s, Rng& rng);

struct Agent {
  nn::Mlp actor;
  nn::Mlp critic;
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;
};

Agent make_agent(std::size_t obs_dim, const ActionBounds& bounds, const TrainingConfig& cfg, Rng& rng);

ActionVector policy_action(const nn::Mlp& actor, const Observation& o);

struct TrainDiagnostics {
  double critic_loss = 0.0;
  double mean_q = 0.0;
};

/// Mean squared error of Q(o, a) against the scaled reward.
double critic_loss(const nn::Mlp& critic, const Batch& batch, double reward_scale);

TrainDiagnostics train_step(Agent& agent, const Batch& batch, const TrainingConfig& cfg);

struct EvalRow {
  int episode = 0;
  double eval_avg_reward = 0.0;
  double epsilon = 0.0;
  std::array<double, 4> pct_stage{};
};

struct EpisodeRecord {
  double epsilon = 1.0;  // after this episode's update
  bool curriculum = false;
  std::array<int, 4> stage_count{};
  int curriculum_attempts = 0;
  bool trained = false;
  double critic_loss = 0.0;
};

struct TrainingLog {
  std::vector<EvalRow> evals;
  std::vector<EpisodeRecord> episodes;

  [[nodiscard]] double convergent_fraction(int first_episodes) const;
};

struct TrainingResult {
  Agent agent;
  TrainingLog log;
};

using ProgressFn = std::function<void(int episode, const TrainingLog&)>;

TrainingResult run_training(std::shared_ptr<const GridCase> grid, const EnvConfig& env_cfg,
                            const TrainingConfig& cfg, std::uint64_t seed,
                            const ProgressFn& progress = {});

void write_training_log(const std::filesystem::path& path, const TrainingLog& log);

struct AgentEnsemble {
  std::vector<nn::Mlp> actors;
};

struct EnsembleDecision {
  std::size_t member = 0;
  ActionVector action;
  RewardBreakdown reward;
  std::vector<double> member_rewards;
};

EnsembleDecision ensemble_decide(const AgentEnsemble& ensemble, const CustomState& scenario,
                                 const Environment& env);

struct Metrics {
  std::size_t n = 0;
  double avg_r = 0.0;
  double s = 0.0;
  double f_s = 0.0;
  double f_d = 0.0;
  double f_nc = 0.0;
};

Metrics summarize(std::span<const RewardBreakdown> outcomes);
Metrics evaluate_agent(const AgentEnsemble& ensemble, std::span<const CustomState> scenarios,
                       const Environment& env, int threads = 1);

}  // namespace tscopf
