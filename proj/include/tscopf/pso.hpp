#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace tscopf {

struct SwarmConfig {
  int n_particles = 30;
  // Evaluation rounds; the first round scores the initial positions.
  int n_iters = 50;
  double w = 0.8;
  double c1 = 0.5;
  double c2 = 0.5;
  std::vector<double> lo, hi;
  // Optional starting positions (one per particle); uniform in bounds if empty.
  std::vector<std::vector<double>> initial_positions;
  // Threads for fitness evaluation; never changes the result.
  int threads = 1;

  void validate() const;
};

struct SwarmResult {
  std::vector<double> best;
  double best_reward = 0.0;
  std::vector<double> trace;  // global best after each round
  std::size_t evaluations = 0;
};

using Fitness = std::function<double(const std::vector<double>&)>;

/// Global-best particle swarm maximizing `fitness` over the box [lo, hi].
/// Non-finite fitness values rank below every finite one.
SwarmResult pso_optimize(const Fitness& fitness, const SwarmConfig& cfg, std::mt19937_64& rng);

}  // namespace tscopf
