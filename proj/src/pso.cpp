#include "tscopf/pso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tscopf/parallel.hpp"

namespace tscopf {

void SwarmConfig::validate() const {
  if (n_particles < 1) throw std::invalid_argument("swarm needs at least one particle");
  if (n_iters < 1) throw std::invalid_argument("swarm needs at least one iteration");
  if (!(w >= 0.0 && c1 >= 0.0 && c2 >= 0.0)) throw std::invalid_argument("swarm coefficients must be non-negative");
  if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("swarm bounds must be non-empty and matched");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || lo[i] > hi[i])
      throw std::invalid_argument("swarm bounds must be finite with lo <= hi");
  if (!initial_positions.empty()) {
    if (initial_positions.size() != static_cast<std::size_t>(n_particles))
      throw std::invalid_argument("initial_positions must hold one position per particle");
    for (const auto& x : initial_positions)
      if (x.size() != lo.size()) throw std::invalid_argument("initial position dimension mismatch");
  }
}

SwarmResult pso_optimize(const Fitness& fitness, const SwarmConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_particles);
  const auto dim = cfg.lo.size();
  constexpr double kWorst = -std::numeric_limits<double>::infinity();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> x(n, std::vector<double>(dim));
  std::vector<std::vector<double>> v(n, std::vector<double>(dim, 0.0));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < dim; ++i)
      x[p][i] = cfg.initial_positions.empty()
                    ? cfg.lo[i] + unit(rng) * (cfg.hi[i] - cfg.lo[i])
                    : std::clamp(cfg.initial_positions[p][i], cfg.lo[i], cfg.hi[i]);

  auto pbest = x;
  std::vector<double> pbest_f(n, kWorst);
  SwarmResult res;
  res.best = x.front();
  res.best_reward = kWorst;
  std::vector<double> f(n);

  for (int it = 0; it < cfg.n_iters; ++it) {
    if (it > 0) {
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < dim; ++i) {
          const double r1 = unit(rng), r2 = unit(rng);
          v[p][i] = cfg.w * v[p][i] + cfg.c1 * r1 * (pbest[p][i] - x[p][i]) + cfg.c2 * r2 * (res.best[i] - x[p][i]);
          x[p][i] = std::clamp(x[p][i] + v[p][i], cfg.lo[i], cfg.hi[i]);
        }
    }
    parallel_for(n, cfg.threads, [&](std::size_t p) {
      const double y = fitness(x[p]);
      f[p] = std::isfinite(y) ? y : kWorst;
    });
    res.evaluations += n;
    // Updates in particle order so ties resolve to the lowest index.
    for (std::size_t p = 0; p < n; ++p) {
      if (f[p] > pbest_f[p]) {
        pbest_f[p] = f[p];
        pbest[p] = x[p];
      }
      if (f[p] > res.best_reward) {
        res.best_reward = f[p];
        res.best = x[p];
      }
    }
    res.trace.push_back(res.best_reward);
  }
  return res;
}

}  // namespace tscopf
