#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tscopf/dynsim.hpp"
#include "tscopf/grid.hpp"
#include "tscopf/powerflow.hpp"

namespace tscopf {

using Rng = std::mt19937_64;
using Observation = std::vector<double>;
using ActionVector = std::vector<double>;

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RewardVariant { InstabilityDuration, AngleSpread, Tsi };
enum class ObservationVariant { LoadsOnly, FullState };
enum class Stage { NonConvergent = 1, DynamicViolation = 2, StaticViolation = 3, Feasible = 4 };

const char* to_string(RewardVariant v);
const char* to_string(ObservationVariant v);
const char* to_string(Stage s);
RewardVariant parse_reward_variant(const std::string& s);
ObservationVariant parse_observation_variant(const std::string& s);

inline constexpr double kRewardNonConvergent = -1000.0;
inline constexpr double kRewardDynamicFloor = -999.0;
inline constexpr double kRewardDynamicCeiling = -500.0;
inline constexpr double kRewardStaticFloor = -499.0;

struct EnvConfig {
  // Per-contingency penalty; empty means 499 / (|contingencies| * t_end).
  std::vector<double> lambda_dyn;
  double lambda_st = 100.0;
  double lambda_opt = 2000.0;
  std::array<double, 2> load_range{0.7, 1.2};
  RewardVariant reward_variant = RewardVariant::InstabilityDuration;
  ObservationVariant observation_variant = ObservationVariant::LoadsOnly;
  DynamicConfig dyn_cfg;

  /// Fills defaults that depend on the case and checks every invariant.
  void resolve(const GridCase& c);
};

std::vector<double> default_lambda_dyn(std::size_t n_contingencies, double t_end);

struct CustomState {
  std::vector<double> v_c, p_c;
  std::vector<double> p_d, q_d;

  [[nodiscard]] DispatchPoint dispatch() const { return {v_c, p_c}; }
  [[nodiscard]] std::vector<LoadDemand> demand() const;
  bool operator==(const CustomState&) const = default;
};

struct ActionBounds {
  std::vector<double> lo, hi;
  [[nodiscard]] std::size_t size() const { return lo.size(); }
};

/// [V_C per generator bus, P_C per non-slack generator]
ActionBounds action_bounds(const GridCase& c);
ActionVector action_from_state(const CustomState& s);
CustomState with_action(const GridCase& c, CustomState s, const ActionVector& a);

struct RewardBreakdown {
  Stage stage = Stage::NonConvergent;
  double value = kRewardNonConvergent;
  std::vector<double> dt_s;        // per contingency (s)
  std::vector<double> spread_end;  // per contingency (rad)
  std::vector<double> tsi;
  StaticViolationReport static_report;
  double cost = 0.0;
};

/// Stage implied by a reward value alone (the stage ranges are disjoint).
Stage stage_of(double reward);

// Stage 2 to 4 reward expressions, kept separate so they can be checked in
// isolation.
double dynamic_reward(RewardVariant v, std::span<const double> lambda_dyn,
                      std::span<const double> dt_s, std::span<const double> spread_end_rad,
                      std::span<const double> tsi);
double static_reward(double lambda_st, const StaticViolationReport& report);
double feasible_reward(double lambda_opt, double cost, double max_cost);

/// Whether an outcome counts as a dynamic violation under the given variant.
bool violates_dynamic(RewardVariant v, const SimulationOutcome& o);

double max_cost(const GridCase& c);

CustomState sample_state(const GridCase& c, const EnvConfig& cfg, Rng& rng);
CustomState sample_insecure_scenario(const GridCase& c, const EnvConfig& cfg, Rng& rng);

std::size_t observation_size(const GridCase& c, ObservationVariant v);
Observation observe(const GridCase& c, const CustomState& s, const EnvConfig& cfg);

struct StepResult {
  RewardBreakdown reward;
  CustomState next;
};

StepResult step_reward(const GridCase& c, const CustomState& s, const ActionVector& a,
                       const EnvConfig& cfg);

/// Holds a case and its resolved configuration; one instance per worker.
class Environment {
 public:
  Environment(std::shared_ptr<const GridCase> grid, EnvConfig cfg);

  [[nodiscard]] const GridCase& grid() const { return *grid_; }
  [[nodiscard]] const EnvConfig& config() const { return cfg_; }
  [[nodiscard]] const ActionBounds& bounds() const { return bounds_; }
  [[nodiscard]] std::size_t observation_dim() const;
  [[nodiscard]] std::size_t action_dim() const { return bounds_.size(); }

  CustomState sample_state(Rng& rng) const;
  CustomState sample_insecure(Rng& rng) const;
  [[nodiscard]] Observation observe(const CustomState& s) const;
  [[nodiscard]] StepResult step(const CustomState& s, const ActionVector& a) const;
  /// Power-flow convergence only; used by the curriculum sampler.
  [[nodiscard]] bool converges(const CustomState& s, const ActionVector& a) const;

 private:
  std::shared_ptr<const GridCase> grid_;
  EnvConfig cfg_;
  ActionBounds bounds_;
};

void save_scenarios(const std::filesystem::path& path, const std::vector<CustomState>& scenarios);
std::vector<CustomState> load_scenarios(const std::filesystem::path& path);

}  // namespace tscopf
