#include "tscopf/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tscopf {

const char* to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::InstabilityDuration: return "dt_s";
    case RewardVariant::AngleSpread: return "delta_max";
    case RewardVariant::Tsi: return "tsi";
  }
  return "?";
}

const char* to_string(ObservationVariant v) {
  return v == ObservationVariant::LoadsOnly ? "loads_only" : "full_state";
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::NonConvergent: return "non_convergent";
    case Stage::DynamicViolation: return "dynamic_violation";
    case Stage::StaticViolation: return "static_violation";
    case Stage::Feasible: return "feasible";
  }
  return "?";
}

RewardVariant parse_reward_variant(const std::string& s) {
  if (s == "dt_s") return RewardVariant::InstabilityDuration;
  if (s == "delta_max") return RewardVariant::AngleSpread;
  if (s == "tsi") return RewardVariant::Tsi;
  throw std::invalid_argument("unknown reward variant '" + s + "'");
}

ObservationVariant parse_observation_variant(const std::string& s) {
  if (s == "loads_only") return ObservationVariant::LoadsOnly;
  if (s == "full_state") return ObservationVariant::FullState;
  throw std::invalid_argument("unknown observation variant '" + s + "'");
}

std::vector<double> default_lambda_dyn(std::size_t n_contingencies, double t_end) {
  if (n_contingencies == 0) return {};
  return std::vector<double>(n_contingencies, 499.0 / (static_cast<double>(n_contingencies) * t_end));
}

void EnvConfig::resolve(const GridCase& c) {
  dyn_cfg.validate();
  if (lambda_dyn.empty()) lambda_dyn = default_lambda_dyn(c.contingencies.size(), dyn_cfg.t_end);
  if (lambda_dyn.size() != c.contingencies.size())
    throw PreconditionError("lambda_dyn needs one entry per contingency");
  for (double l : lambda_dyn)
    if (!(l > 0.0)) throw PreconditionError("lambda_dyn entries must be positive");
  if (!(lambda_st > 0.0) || !(lambda_opt > 0.0))
    throw PreconditionError("lambda_st and lambda_opt must be positive");
  if (!(load_range[0] < load_range[1])) throw PreconditionError("load_range requires low < high");
  // The spread and TSI variants are scored on the end-of-horizon spread.
  if (reward_variant != RewardVariant::InstabilityDuration) dyn_cfg.stop_on_instability = false;
}

std::vector<LoadDemand> CustomState::demand() const {
  std::vector<LoadDemand> out(p_d.size());
  for (std::size_t i = 0; i < p_d.size(); ++i) out[i] = {p_d[i], q_d[i]};
  return out;
}

ActionBounds action_bounds(const GridCase& c) {
  ActionBounds b;
  for (const auto& g : c.generators) {
    const auto& bus = c.buses[c.bus_index(g.bus)];
    b.lo.push_back(bus.v_min);
    b.hi.push_back(bus.v_max);
  }
  for (const auto& g : c.generators) {
    if (g.slack) continue;
    b.lo.push_back(g.p_min);
    b.hi.push_back(g.p_max);
  }
  return b;
}

ActionVector action_from_state(const CustomState& s) {
  ActionVector a = s.v_c;
  a.insert(a.end(), s.p_c.begin(), s.p_c.end());
  return a;
}

CustomState with_action(const GridCase& c, CustomState s, const ActionVector& a) {
  const auto ng = c.n_generators();
  if (a.size() != 2 * ng - 1) throw PreconditionError("action length mismatch");
  s.v_c.assign(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(ng));
  s.p_c.assign(a.begin() + static_cast<std::ptrdiff_t>(ng), a.end());
  return s;
}

Stage stage_of(double reward) {
  if (reward <= kRewardNonConvergent) return Stage::NonConvergent;
  if (reward < kRewardDynamicCeiling) return Stage::DynamicViolation;
  if (reward < 0.0) return Stage::StaticViolation;
  return Stage::Feasible;
}

double dynamic_reward(RewardVariant v, std::span<const double> lambda_dyn,
                      std::span<const double> dt_s, std::span<const double> spread_end_rad,
                      std::span<const double> tsi_values) {
  double penalty = 0.0;
  switch (v) {
    case RewardVariant::InstabilityDuration:
      for (std::size_t k = 0; k < lambda_dyn.size(); ++k) penalty += lambda_dyn[k] * dt_s[k];
      return std::max(kRewardDynamicCeiling - penalty, kRewardDynamicFloor);
    case RewardVariant::AngleSpread:
      // Only violated contingencies contribute; a stable one would otherwise
      // lift the value out of the stage-2 band.
      for (std::size_t k = 0; k < lambda_dyn.size(); ++k) {
        const double excess = spread_end_rad[k] * 180.0 / std::numbers::pi - 180.0;
        penalty += lambda_dyn[k] * std::max(std::min(excess, 500.0), 0.0);
      }
      return std::max(kRewardDynamicCeiling - penalty, kRewardDynamicFloor);
    case RewardVariant::Tsi:
      for (std::size_t k = 0; k < lambda_dyn.size(); ++k)
        penalty += lambda_dyn[k] * std::min(tsi_values[k], 0.0);
      return std::max(kRewardDynamicCeiling + penalty, kRewardDynamicFloor);
  }
  return kRewardDynamicFloor;
}

double static_reward(double lambda_st, const StaticViolationReport& report) {
  return std::max(-lambda_st * report.total(), kRewardStaticFloor);
}

double feasible_reward(double lambda_opt, double cost, double max_cost) {
  return std::clamp(lambda_opt * (1.0 - cost / max_cost), 0.0, lambda_opt);
}

bool violates_dynamic(RewardVariant v, const SimulationOutcome& o) {
  if (v == RewardVariant::InstabilityDuration) return o.dt_s > 0.0;
  return o.spread_end > std::numbers::pi || !std::isfinite(o.spread_end);
}

double max_cost(const GridCase& c) {
  std::vector<double> p(c.n_generators());
  for (std::size_t g = 0; g < p.size(); ++g) p[g] = c.generators[g].p_max;
  return generation_cost(c, p);
}

namespace {

CustomState draw_state(const GridCase& c, const EnvConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + unit(rng) * (hi - lo); };
  CustomState s;
  for (const auto& g : c.generators) {
    const auto& bus = c.buses[c.bus_index(g.bus)];
    s.v_c.push_back(between(bus.v_min, bus.v_max));
  }
  for (const auto& g : c.generators)
    if (!g.slack) s.p_c.push_back(between(g.p_min, g.p_max));
  for (const auto& l : c.loads) {
    s.p_d.push_back(l.p_base * between(cfg.load_range[0], cfg.load_range[1]));
    s.q_d.push_back(l.q_base * between(cfg.load_range[0], cfg.load_range[1]));
  }
  return s;
}

}  // namespace

CustomState sample_state(const GridCase& c, const EnvConfig& cfg, Rng& rng) {
  constexpr int kMaxAttempts = 10'000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto s = draw_state(c, cfg, rng);
    const auto loads = s.demand();
    if (solve_nr(c, s.dispatch(), loads).converged) return s;
  }
  throw SamplingError("sample_state: no convergent state after 10000 attempts");
}

CustomState sample_insecure_scenario(const GridCase& c, const EnvConfig& cfg, Rng& rng) {
  if (c.contingencies.empty())
    throw SamplingError("sample_insecure_scenario: contingency set is empty");
  auto dyn = cfg.dyn_cfg;
  dyn.stop_on_instability = true;
  constexpr int kMaxAttempts = 100'000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto s = sample_state(c, cfg, rng);
    const auto loads = s.demand();
    const auto sol = solve_nr(c, s.dispatch(), loads);
    for (const auto& g : c.contingencies)
      if (simulate(c, sol, loads, g, dyn).dt_s > 0.0) return s;
  }
  throw SamplingError("sample_insecure_scenario: no insecure state after 100000 attempts");
}

std::size_t observation_size(const GridCase& c, ObservationVariant v) {
  if (v == ObservationVariant::LoadsOnly) return 2 * c.n_loads();
  return c.n_buses() + 2 * c.n_generators() + 2 * c.n_loads();
}

Observation observe(const GridCase& c, const CustomState& s, const EnvConfig& cfg) {
  Observation o;
  o.reserve(observation_size(c, cfg.observation_variant));
  if (cfg.observation_variant == ObservationVariant::FullState) {
    const auto loads = s.demand();
    const auto sol = solve_nr(c, s.dispatch(), loads);
    o.insert(o.end(), sol.v.begin(), sol.v.end());
    o.insert(o.end(), sol.p_g.begin(), sol.p_g.end());
    o.insert(o.end(), sol.q_g.begin(), sol.q_g.end());
  }
  auto normalized = [](double value, double base) { return base != 0.0 ? value / base : value; };
  for (std::size_t l = 0; l < c.n_loads(); ++l) o.push_back(normalized(s.p_d[l], c.loads[l].p_base));
  for (std::size_t l = 0; l < c.n_loads(); ++l) o.push_back(normalized(s.q_d[l], c.loads[l].q_base));
  return o;
}

StepResult step_reward(const GridCase& c, const CustomState& s, const ActionVector& a,
                       const EnvConfig& cfg) {
  StepResult out{{}, with_action(c, s, a)};
  auto& r = out.reward;
  const auto loads = out.next.demand();
  const auto sol = solve_nr(c, out.next.dispatch(), loads);
  if (!sol.converged) {
    r.stage = Stage::NonConvergent;
    r.value = kRewardNonConvergent;
    return out;
  }

  r.cost = generation_cost(c, sol.p_g);
  r.static_report = static_violations(c, sol);
  bool dynamic_violation = false;
  for (const auto& g : c.contingencies) {
    const auto o = simulate(c, sol, loads, g, cfg.dyn_cfg);
    r.dt_s.push_back(o.dt_s);
    r.spread_end.push_back(o.spread_end);
    r.tsi.push_back(o.tsi);
    dynamic_violation = dynamic_violation || violates_dynamic(cfg.reward_variant, o);
  }

  if (dynamic_violation) {
    r.stage = Stage::DynamicViolation;
    r.value = dynamic_reward(cfg.reward_variant, cfg.lambda_dyn, r.dt_s, r.spread_end, r.tsi);
  } else if (r.static_report.any()) {
    r.stage = Stage::StaticViolation;
    r.value = static_reward(cfg.lambda_st, r.static_report);
  } else {
    r.stage = Stage::Feasible;
    r.value = feasible_reward(cfg.lambda_opt, r.cost, max_cost(c));
  }
  return out;
}

Environment::Environment(std::shared_ptr<const GridCase> grid, EnvConfig cfg)
    : grid_(std::move(grid)), cfg_(std::move(cfg)), bounds_(action_bounds(*grid_)) {
  cfg_.resolve(*grid_);
}

std::size_t Environment::observation_dim() const {
  return observation_size(*grid_, cfg_.observation_variant);
}

CustomState Environment::sample_state(Rng& rng) const { return tscopf::sample_state(*grid_, cfg_, rng); }

CustomState Environment::sample_insecure(Rng& rng) const {
  return sample_insecure_scenario(*grid_, cfg_, rng);
}

Observation Environment::observe(const CustomState& s) const { return tscopf::observe(*grid_, s, cfg_); }

StepResult Environment::step(const CustomState& s, const ActionVector& a) const {
  return step_reward(*grid_, s, a, cfg_);
}

bool Environment::converges(const CustomState& s, const ActionVector& a) const {
  const auto next = with_action(*grid_, s, a);
  const auto loads = next.demand();
  return solve_nr(*grid_, next.dispatch(), loads).converged;
}

using nlohmann::json;

void save_scenarios(const std::filesystem::path& path, const std::vector<CustomState>& scenarios) {
  json doc;
  doc["schema"] = "tscopf-scenarios";
  doc["version"] = 1;
  doc["scenarios"] = json::array();
  for (const auto& s : scenarios)
    doc["scenarios"].push_back({{"v_c", s.v_c}, {"p_c", s.p_c}, {"p_d", s.p_d}, {"q_d", s.q_d}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file '" + path.string() + "'");
  out << doc.dump(1) << '\n';
}

std::vector<CustomState> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (doc.value("schema", "") != "tscopf-scenarios" || doc.value("version", 0) != 1)
    throw std::runtime_error(path.string() + ": not a version 1 scenario file");
  std::vector<CustomState> out;
  for (const auto& o : doc.at("scenarios")) {
    CustomState s;
    o.at("v_c").get_to(s.v_c);
    o.at("p_c").get_to(s.p_c);
    o.at("p_d").get_to(s.p_d);
    o.at("q_d").get_to(s.q_d);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tscopf
