#include <filesystem>
#include <random>

#include "doctest.h"
#include "paths.hpp"
#include "tscopf/env.hpp"

using namespace tscopf;

namespace {

std::shared_ptr<const GridCase> grid9() {
  static const auto g = std::make_shared<const GridCase>(load_case(case_file("wscc9.json")));
  return g;
}

std::shared_ptr<const GridCase> grid39() {
  static const auto g = std::make_shared<const GridCase>(load_case(case_file("ieee39.json")));
  return g;
}

bool in_stage_range(Stage s, double r) {
  switch (s) {
    case Stage::NonConvergent: return r == -1000.0;
    case Stage::DynamicViolation: return r >= -999.0 && r < -500.0;
    case Stage::StaticViolation: return r >= -499.0 && r < 0.0;
    case Stage::Feasible: return r >= 0.0 && r <= 2000.0;
  }
  return false;
}

}  // namespace

TEST_SUITE("env") {
  TEST_CASE("published reward constants") {
    const EnvConfig cfg;
    CHECK(cfg.lambda_st == 100.0);
    CHECK(cfg.lambda_opt == 2000.0);
    CHECK(kRewardNonConvergent == -1000.0);
    CHECK(kRewardDynamicFloor == -999.0);
    CHECK(kRewardDynamicCeiling == -500.0);
    CHECK(kRewardStaticFloor == -499.0);
  }

  TEST_CASE("default dynamic penalty maps the worst case onto the stage floor") {
    const auto lambda = default_lambda_dyn(2, 5.0);
    REQUIRE(lambda.size() == 2);
    CHECK(lambda[0] == doctest::Approx(499.0 / 10.0));
    const std::vector<double> worst{5.0, 5.0}, spread{10.0, 10.0}, tsi{-0.5, -0.5};
    CHECK(dynamic_reward(RewardVariant::InstabilityDuration, lambda, worst, spread, tsi) == doctest::Approx(-999.0));
    const std::vector<double> tiny{0.01, 0.0};
    CHECK(dynamic_reward(RewardVariant::InstabilityDuration, lambda, tiny, spread, tsi) < -500.0);
  }

  TEST_CASE("dimensions of the two observation designs") {
    EnvConfig cfg;
    const Environment loads9(grid9(), cfg);
    CHECK(loads9.observation_dim() == 6);
    CHECK(loads9.action_dim() == 5);
    const Environment loads39(grid39(), cfg);
    CHECK(loads39.observation_dim() == 38);
    CHECK(loads39.action_dim() == 19);
    cfg.observation_variant = ObservationVariant::FullState;
    const Environment full39(grid39(), cfg);
    CHECK(full39.observation_dim() == 97);
    const Environment full9(grid9(), cfg);
    Rng rng(1);
    const auto s = full9.sample_state(rng);
    CHECK(full9.observe(s).size() == full9.observation_dim());
  }

  TEST_CASE("action layout round-trips through the custom state") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(2);
    const auto s = env.sample_state(rng);
    const auto a = action_from_state(s);
    CHECK(a.size() == env.action_dim());
    CHECK(with_action(env.grid(), s, a) == s);
    const auto& b = env.bounds();
    for (std::size_t g = 0; g < 3; ++g) {
      CHECK(b.lo[g] == 0.9);
      CHECK(b.hi[g] == 1.1);
    }
    CHECK(b.lo[3] == env.grid().generators[1].p_min);
    CHECK(b.hi[4] == env.grid().generators[2].p_max);
    ActionVector moved = a;
    moved[0] = 1.01;
    moved[4] = 0.5;
    const auto t = with_action(env.grid(), s, moved);
    CHECK(t.v_c[0] == 1.01);
    CHECK(t.p_c[1] == 0.5);
    CHECK(t.p_d == s.p_d);
  }

  TEST_CASE("observations are loads relative to base") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(3);
    const auto s = env.sample_state(rng);
    const auto o = env.observe(s);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(o[l] == doctest::Approx(s.p_d[l] / env.grid().loads[l].p_base));
      CHECK(o[3 + l] == doctest::Approx(s.q_d[l] / env.grid().loads[l].q_base));
      CHECK(o[l] >= 0.7);
      CHECK(o[l] <= 1.2);
    }
  }

  TEST_CASE("sampled states converge and insecure states are insecure") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      const auto s = env.sample_state(rng);
      CHECK(solve_nr(env.grid(), s.dispatch(), s.demand()).converged);
    }
    for (int i = 0; i < 5; ++i) {
      const auto s = env.sample_insecure(rng);
      const auto r = env.step(s, action_from_state(s));
      CHECK(r.reward.stage == Stage::DynamicViolation);
    }
    Rng a(9), b(9);
    CHECK(env.sample_state(a) == env.sample_state(b));
  }

  TEST_CASE("insecure sampling needs a contingency") {
    auto c = *grid9();
    c.contingencies.clear();
    Rng rng(1);
    CHECK_THROWS_AS(sample_insecure_scenario(c, EnvConfig{}, rng), SamplingError);
  }

  TEST_CASE("step reward follows the staged definition") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& b = env.bounds();
    const double max_c = max_cost(env.grid());
    int seen[4] = {0, 0, 0, 0};
    for (int i = 0; i < 150; ++i) {
      const auto s = env.sample_state(rng);
      ActionVector a(b.size());
      for (std::size_t k = 0; k < a.size(); ++k) a[k] = b.lo[k] + unit(rng) * (b.hi[k] - b.lo[k]);
      const auto r = env.step(s, a).reward;
      ++seen[static_cast<int>(r.stage) - 1];
      CHECK(in_stage_range(r.stage, r.value));
      CHECK(stage_of(r.value) == r.stage);
      if (r.stage == Stage::Feasible) {
        CHECK(r.value == doctest::Approx(2000.0 * (1.0 - r.cost / max_c)));
      } else if (r.stage == Stage::StaticViolation) {
        CHECK(r.value == doctest::Approx(std::max(-100.0 * r.static_report.total(), -499.0)));
      } else if (r.stage == Stage::DynamicViolation) {
        const double lambda = 499.0 / 5.0;
        CHECK(r.value == doctest::Approx(std::max(-500.0 - lambda * r.dt_s[0], -999.0)));
      }
    }
    CHECK(seen[1] > 0);
    CHECK(seen[3] > 0);
  }

  TEST_CASE("non-convergent dispatch scores -1000") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(6);
    auto s = env.sample_state(rng);
    for (auto& p : s.p_d) p *= 8.0;
    const auto r = env.step(s, action_from_state(s)).reward;
    CHECK(r.stage == Stage::NonConvergent);
    CHECK(r.value == -1000.0);
  }

  TEST_CASE("ablation variants stay inside the dynamic band") {
    const std::vector<double> lambda{0.5, 0.5};
    Rng rng(8);
    std::uniform_real_distribution<double> spread(0.0, 20.0);
    for (int i = 0; i < 500; ++i) {
      const std::vector<double> s{spread(rng), spread(rng)};
      std::vector<double> t{tsi(s[0]), tsi(s[1])};
      SimulationOutcome o0, o1;
      o0.spread_end = s[0];
      o0.tsi = t[0];
      o1.spread_end = s[1];
      o1.tsi = t[1];
      for (auto v : {RewardVariant::AngleSpread, RewardVariant::Tsi}) {
        if (!violates_dynamic(v, o0) && !violates_dynamic(v, o1)) continue;
        const double r = dynamic_reward(v, lambda, {}, s, t);
        CHECK(in_stage_range(Stage::DynamicViolation, r));
      }
    }
    // End-of-horizon spread 200 degrees, one contingency.
    const double rad = 200.0 * std::numbers::pi / 180.0;
    const std::vector<double> one{1.0}, sp{rad}, ts{tsi(rad)};
    CHECK(dynamic_reward(RewardVariant::AngleSpread, one, {}, sp, ts) == doctest::Approx(-520.0));
    CHECK(dynamic_reward(RewardVariant::Tsi, one, {}, sp, ts) == doctest::Approx(-500.0 - 20.0 / 380.0));
  }

  TEST_CASE("resolve switches off early stop for end-of-horizon variants") {
    EnvConfig cfg;
    cfg.reward_variant = RewardVariant::AngleSpread;
    cfg.resolve(*grid9());
    CHECK_FALSE(cfg.dyn_cfg.stop_on_instability);
    CHECK(cfg.lambda_dyn.size() == 1);
    EnvConfig bad;
    bad.lambda_dyn = {1.0, 2.0};
    CHECK_THROWS(bad.resolve(*grid9()));
    EnvConfig neg;
    neg.load_range = {1.2, 0.7};
    CHECK_THROWS(neg.resolve(*grid9()));
  }

  TEST_CASE("scenario files round-trip exactly") {
    const Environment env(grid9(), EnvConfig{});
    Rng rng(10);
    std::vector<CustomState> all;
    for (int i = 0; i < 4; ++i) all.push_back(env.sample_state(rng));
    const auto path = std::filesystem::temp_directory_path() / "tscopf_scenarios_test.json";
    save_scenarios(path, all);
    CHECK(load_scenarios(path) == all);
    std::filesystem::remove(path);
  }

  TEST_CASE("variant names") {
    CHECK(parse_reward_variant("dt_s") == RewardVariant::InstabilityDuration);
    CHECK(parse_reward_variant("delta_max") == RewardVariant::AngleSpread);
    CHECK(parse_reward_variant("tsi") == RewardVariant::Tsi);
    CHECK(parse_observation_variant("loads_only") == ObservationVariant::LoadsOnly);
    CHECK(parse_observation_variant("full_state") == ObservationVariant::FullState);
    CHECK_THROWS(parse_reward_variant("other"));
  }
}

#include "oracles/reward_properties.hpp"

TEST_SUITE("env") {
  TEST_CASE("stage partition and monotonicity properties") {
    std::mt19937_64 rng(2024);
    const double mc = max_cost(*grid9());
    for (std::size_t n_cont : {1u, 2u, 5u}) {
      const auto part = oracle::check_stage_partition(rng, 1000, n_cont, 5.0, mc);
      CHECK_MESSAGE(part.failures == 0, part.first_failure);
      const auto mono = oracle::check_monotonicity(rng, 1000, n_cont, 5.0, mc);
      CHECK_MESSAGE(mono.failures == 0, mono.first_failure);
    }
  }
}
