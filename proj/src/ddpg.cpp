#include "tscopf/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

namespace tscopf {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[head_] = std::move(t);
  }
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay index out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : head_;
  return storage_[(oldest + i) % capacity_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (n == 0 || size_ < n) return {};
  // Floyd's algorithm: n distinct draws with n random numbers.
  std::vector<std::size_t> out;
  out.reserve(n);
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = size_ - n; j < size_; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const auto t = pick(rng);
    const auto chosen = seen.contains(t) ? j : t;
    seen.insert(chosen);
    out.push_back(chosen);
  }
  return out;
}

Batch buffer_push_sample(ReplayBuffer& buf, std::vector<Transition> push, std::size_t n_batch, Rng& rng) {
  for (auto& t : push) buf.push(std::move(t));
  const auto idx = buf.sample_indices(n_batch, rng);
  Batch b;
  if (idx.empty()) return b;
  const auto& first = buf.at(idx[0]);
  const auto n = static_cast<Eigen::Index>(idx.size());
  b.obs.resize(static_cast<Eigen::Index>(first.o.size()), n);
  b.action.resize(static_cast<Eigen::Index>(first.a.size()), n);
  b.reward.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& t = buf.at(idx[static_cast<std::size_t>(k)]);
    b.obs.col(k) = Eigen::Map<const nn::Vector>(t.o.data(), static_cast<Eigen::Index>(t.o.size()));
    b.action.col(k) = Eigen::Map<const nn::Vector>(t.a.data(), static_cast<Eigen::Index>(t.a.size()));
    b.reward(k) = t.r;
  }
  return b;
}

void TrainingConfig::validate() const {
  if (t_epoch < 1) throw std::invalid_argument("t_epoch must be positive");
  if (t_clm < 0 || t_clm > t_epoch) throw std::invalid_argument("require 0 <= t_clm <= t_epoch");
  if (n_p < 1) throw std::invalid_argument("n_p must be at least 1");
  if (n_batch < 1) throw std::invalid_argument("n_batch must be at least 1");
  if (discount != 0.0) throw std::invalid_argument("single-step control requires discount = 0");
  if (eval_every < 1 || eval_scenarios < 0) throw std::invalid_argument("invalid evaluation settings");
  if (hidden.empty()) throw std::invalid_argument("at least one hidden layer required");
  if (!(reward_scale > 0.0)) throw std::invalid_argument("reward_scale must be positive");
  if (threads < 1) throw std::invalid_argument("threads must be at least 1");
}

double epsilon_schedule(double eps, int t_epoch) {
  return std::max(eps - 1.0 / t_epoch, 0.1);
}

double exploration_rate(int episode, int t_epoch, double floor) {
  return std::max(1.0 - static_cast<double>(episode) / t_epoch, floor);
}

ActionVector clip_action(ActionVector a, const ActionBounds& bounds) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i], bounds.lo[i], bounds.hi[i]);
  return a;
}

ActionVector policy_action(const nn::Mlp& actor, const Observation& o) {
  const nn::Vector in = Eigen::Map<const nn::Vector>(o.data(), static_cast<Eigen::Index>(o.size()));
  const nn::Vector out = actor.forward(in);
  return {out.data(), out.data() + out.size()};
}

ActionVector noisy_action(const nn::Mlp& actor, const Observation& o, double eps,
                          const ActionBounds& bounds, Rng& rng) {
  if (eps < 0.0) throw std::invalid_argument("noisy_action: eps must be non-negative");
  auto a = policy_action(actor, o);
  if (eps > 0.0) {
    std::normal_distribution<double> noise(0.0, std::sqrt(eps));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += (bounds.hi[i] - bounds.lo[i]) / 2.0 * noise(rng);
  }
  return clip_action(std::move(a), bounds);
}

CurriculumDraw curriculum_action(const Environment& env, const CustomState& s, Rng& rng) {
  constexpr int kMaxAttempts = 1000;
  const auto& b = env.bounds();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    ActionVector a(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = b.lo[i] + unit(rng) * (b.hi[i] - b.lo[i]);
    if (env.converges(s, a)) return {std::move(a), attempt};
  }
  throw SamplingError("curriculum_action: no convergent action after 1000 attempts");
}

Agent make_agent(std::size_t obs_dim, const ActionBounds& bounds, const TrainingConfig& cfg, Rng& rng) {
  const auto act_dim = static_cast<int>(bounds.size());
  std::vector<int> actor_dims{static_cast<int>(obs_dim)};
  actor_dims.insert(actor_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  actor_dims.push_back(act_dim);
  std::vector<int> critic_dims{static_cast<int>(obs_dim) + act_dim};
  critic_dims.insert(critic_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  critic_dims.push_back(1);

  const nn::Vector lo = Eigen::Map<const nn::Vector>(bounds.lo.data(), act_dim);
  const nn::Vector hi = Eigen::Map<const nn::Vector>(bounds.hi.data(), act_dim);
  Agent agent{nn::Mlp(actor_dims, lo, hi), nn::Mlp(critic_dims), {}, {}};
  agent.actor.initialize(rng);
  agent.critic.initialize(rng);
  agent.actor_opt = nn::AdamState::for_params(agent.actor.params(), cfg.actor_lr);
  agent.critic_opt = nn::AdamState::for_params(agent.critic.params(), cfg.critic_lr);
  return agent;
}

namespace {

nn::Matrix stack(const nn::Matrix& top, const nn::Matrix& bottom) {
  nn::Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

double critic_loss(const nn::Mlp& critic, const Batch& batch, double reward_scale) {
  const nn::Matrix q = critic.forward(stack(batch.obs, batch.action));
  const nn::Vector err = q.row(0).transpose() - reward_scale * batch.reward;
  return err.squaredNorm() / static_cast<double>(err.size());
}

TrainDiagnostics train_step(Agent& agent, const Batch& batch, const TrainingConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto n = static_cast<double>(batch.reward.size());
  TrainDiagnostics diag;

  // Critic: with discount 0 the TD target is the reward itself.
  {
    nn::Mlp::Cache cache;
    const nn::Matrix q = agent.critic.forward(stack(batch.obs, batch.action), &cache);
    const nn::Vector err = q.row(0).transpose() - cfg.reward_scale * batch.reward;
    diag.critic_loss = err.squaredNorm() / n;
    if (!std::isfinite(diag.critic_loss)) {
      std::ostringstream os;
      os << "non-finite critic loss (mean reward " << batch.reward.mean() << ", max |Q| "
         << q.cwiseAbs().maxCoeff() << ", critic |params| " << agent.critic.params().norm() << ")";
      throw TrainingError(os.str());
    }
    const nn::Matrix dq = (2.0 / n) * err.transpose();
    const auto g = agent.critic.backward(cache, dq);
    nn::adam_step(agent.critic_opt, agent.critic.params(), g.params);
  }

  // Actor: ascend mean Q(o, mu(o)) through the updated critic.
  {
    nn::Mlp::Cache actor_cache, critic_cache;
    const nn::Matrix a = agent.actor.forward(batch.obs, &actor_cache);
    const nn::Matrix q = agent.critic.forward(stack(batch.obs, a), &critic_cache);
    diag.mean_q = q.mean();
    const nn::Matrix dq = nn::Matrix::Constant(1, q.cols(), -1.0 / n);
    const auto gc = agent.critic.backward(critic_cache, dq);
    const nn::Matrix da = gc.input.bottomRows(a.rows());
    const auto ga = agent.actor.backward(actor_cache, da);
    nn::adam_step(agent.actor_opt, agent.actor.params(), ga.params);
  }
  return diag;
}

double TrainingLog::convergent_fraction(int first_episodes) const {
  long total = 0, convergent = 0;
  const auto m = std::min<std::size_t>(episodes.size(), static_cast<std::size_t>(std::max(first_episodes, 0)));
  for (std::size_t e = 0; e < m; ++e) {
    for (int s = 0; s < 4; ++s) total += episodes[e].stage_count[static_cast<std::size_t>(s)];
    convergent += episodes[e].stage_count[1] + episodes[e].stage_count[2] + episodes[e].stage_count[3];
  }
  return total ? static_cast<double>(convergent) / static_cast<double>(total) : 0.0;
}

namespace {

Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

enum Purpose : std::uint64_t { kInit = 1, kWorker = 2, kBatch = 3, kEval = 4 };

std::size_t stage_slot(Stage s) { return static_cast<std::size_t>(s) - 1; }

}  // namespace

Metrics summarize(std::span<const RewardBreakdown> outcomes) {
  Metrics m;
  m.n = outcomes.size();
  if (m.n == 0) return m;
  std::array<std::size_t, 4> count{};
  double sum = 0.0;
  for (const auto& o : outcomes) {
    ++count[stage_slot(o.stage)];
    sum += o.value;
  }
  const double n = static_cast<double>(m.n);
  m.avg_r = sum / n;
  m.s = 100.0 * static_cast<double>(count[3]) / n;
  m.f_s = 100.0 * static_cast<double>(count[2]) / n;
  m.f_d = 100.0 * static_cast<double>(count[1]) / n;
  // Residual keeps the four rates summing to exactly 100 in this order.
  m.f_nc = 100.0 - ((m.s + m.f_s) + m.f_d);
  return m;
}

TrainingResult run_training(std::shared_ptr<const GridCase> grid, const EnvConfig& env_cfg,
                            const TrainingConfig& cfg, std::uint64_t seed, const ProgressFn& progress) {
  cfg.validate();
  const int n_workers = cfg.workers();
  std::vector<Environment> envs;
  for (int k = 0; k < n_workers; ++k) envs.emplace_back(grid, env_cfg);
  const auto& env = envs.front();

  auto init_rng = stream(seed, kInit);
  TrainingResult result{make_agent(env.observation_dim(), env.bounds(), cfg, init_rng), {}};
  auto& agent = result.agent;
  auto& log = result.log;

  std::vector<Rng> worker_rng;
  for (int k = 0; k < n_workers; ++k) worker_rng.push_back(stream(seed, kWorker, static_cast<std::uint64_t>(k)));
  auto batch_rng = stream(seed, kBatch);
  auto eval_rng = stream(seed, kEval);

  ReplayBuffer buffer(cfg.replay_capacity);
  double eps = 1.0;
  const int episodes = cfg.episodes();

  struct WorkerOut {
    Transition t;
    Stage stage = Stage::NonConvergent;
    int attempts = 0;
  };
  std::vector<WorkerOut> out(static_cast<std::size_t>(n_workers));

  for (int tau = 1; tau <= episodes; ++tau) {
    const bool curriculum = cfg.curriculum && tau < cfg.t_clm && tau % 2 == 1;
    const nn::Mlp& actor = agent.actor;  // frozen for this episode

    try {
      parallel_for(out.size(), cfg.threads, [&](std::size_t k) {
        auto& rng = worker_rng[k];
        const auto& e = envs[k];
        const auto state = e.sample_state(rng);
        auto o = e.observe(state);
        WorkerOut w;
        if (curriculum) {
          auto draw = curriculum_action(e, state, rng);
          w.t.a = std::move(draw.action);
          w.attempts = draw.attempts;
        } else {
          w.t.a = noisy_action(actor, o, eps, e.bounds(), rng);
        }
        const auto step = e.step(state, w.t.a);
        w.stage = step.reward.stage;
        w.t.r = step.reward.value;
        w.t.o_next = w.stage == Stage::NonConvergent ? o : e.observe(step.next);
        w.t.o = std::move(o);
        out[k] = std::move(w);
      });
    } catch (const std::exception& ex) {
      throw TrainingError("episode " + std::to_string(tau) + ": " + ex.what());
    }

    EpisodeRecord rec;
    rec.curriculum = curriculum;
    std::vector<Transition> push;
    for (auto& w : out) {
      ++rec.stage_count[stage_slot(w.stage)];
      rec.curriculum_attempts += w.attempts;
      push.push_back(std::move(w.t));
    }

    const auto batch = buffer_push_sample(buffer, std::move(push), static_cast<std::size_t>(cfg.n_batch), batch_rng);
    if (!batch.empty()) {
      try {
        const auto diag = train_step(agent, batch, cfg);
        rec.trained = true;
        rec.critic_loss = diag.critic_loss;
      } catch (const std::exception& ex) {
        throw TrainingError("episode " + std::to_string(tau) + ": " + ex.what());
      }
    }

    // Closed form of repeated epsilon_schedule steps, free of rounding drift.
    eps = exploration_rate(tau, cfg.t_epoch, cfg.eps_floor);
    rec.epsilon = eps;
    log.episodes.push_back(rec);

    if (tau % cfg.eval_every == 0 && cfg.eval_scenarios > 0) {
      std::vector<CustomState> scenarios;
      for (int i = 0; i < cfg.eval_scenarios; ++i) scenarios.push_back(env.sample_state(eval_rng));
      const auto m = evaluate_agent(AgentEnsemble{{agent.actor}}, scenarios, env, cfg.threads);
      log.evals.push_back({tau, m.avg_r, eps, {m.f_nc, m.f_d, m.f_s, m.s}});
    }
    if (progress) progress(tau, log);
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log '" + path.string() + "'");
  out << "# schema: tscopf-training-log v1\n";
  out << "episode,eval_avg_reward,epsilon,pct_stage1,pct_stage2,pct_stage3,pct_stage4\n";
  for (const auto& r : log.evals)
    out << fmt::format("{},{},{},{},{},{},{}\n", r.episode, r.eval_avg_reward, r.epsilon, r.pct_stage[0],
                       r.pct_stage[1], r.pct_stage[2], r.pct_stage[3]);
}

EnsembleDecision ensemble_decide(const AgentEnsemble& ensemble, const CustomState& scenario,
                                 const Environment& env) {
  if (ensemble.actors.empty()) throw std::invalid_argument("ensemble_decide: empty ensemble");
  const auto o = env.observe(scenario);
  EnsembleDecision best;
  for (std::size_t k = 0; k < ensemble.actors.size(); ++k) {
    auto a = policy_action(ensemble.actors[k], o);
    auto step = env.step(scenario, a);
    best.member_rewards.push_back(step.reward.value);
    // Strict comparison keeps the lowest index on ties.
    if (k == 0 || step.reward.value > best.reward.value) {
      best.member = k;
      best.action = std::move(a);
      best.reward = std::move(step.reward);
    }
  }
  return best;
}

Metrics evaluate_agent(const AgentEnsemble& ensemble, std::span<const CustomState> scenarios,
                       const Environment& env, int threads) {
  if (scenarios.empty()) throw std::invalid_argument("evaluate_agent: no scenarios");
  std::vector<RewardBreakdown> outcomes(scenarios.size());
  parallel_for(scenarios.size(), threads,
               [&](std::size_t i) { outcomes[i] = ensemble_decide(ensemble, scenarios[i], env).reward; });
  return summarize(outcomes);
}

}  // namespace tscopf
