#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles/equal_area.hpp"
#include "oracles/smib_run.hpp"
#include "oracles/test_cases.hpp"
#include "paths.hpp"
#include "tscopf/dynsim.hpp"
#include "tscopf/env.hpp"

using namespace tscopf;

namespace {

double energy(const ClassicalSystem& sys, const std::vector<MachineState>& x, double ws) {
  double w = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    w += ws * sys.h[i] * x[i].omega * x[i].omega - sys.p_m[i] * x[i].delta;
    for (std::size_t j = i + 1; j < x.size(); ++j)
      w -= x[i].e_p * x[j].e_p * sys.y_post(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)).imag() *
           std::cos(x[i].delta - x[j].delta);
  }
  return w;
}

ClassicalSystem lossless_three_machine() {
  ClassicalSystem sys;
  ComplexMatrix y = ComplexMatrix::Zero(3, 3);
  const double b[3][3] = {{0, 2.0, 1.5}, {2.0, 0, 1.0}, {1.5, 1.0, 0}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) {
        y(i, j) = Complex(0, b[i][j]);
        y(i, i) -= Complex(0, b[i][j] + 0.3);
      }
  sys.y_pre = sys.y_fault = sys.y_post = y;
  sys.initial = {{0.3, 0.01, 1.05}, {0.0, -0.02, 1.02}, {-0.2, 0.0, 1.0}};
  sys.h = {5.0, 3.0, 4.0};
  sys.d = {0, 0, 0};
  const auto pe = electrical_power(y, sys.initial);
  sys.p_m = {pe[0] + 0.1, pe[1] - 0.05, pe[2] - 0.05};
  sys.t_fault = 0.0;
  sys.t_clear = 0.1;
  return sys;
}

}  // namespace

TEST_SUITE("dynsim") {
  TEST_CASE("equal-area oracle has the textbook structure") {
    const oracle::Smib s{0.8, 2.0, 1.5, 5.0};
    CHECK(oracle::initial_angle(s) == doctest::Approx(std::asin(0.4)));
    CHECK(oracle::critical_angle(s) > oracle::initial_angle(s));
    CHECK(oracle::critical_angle(s) < std::numbers::pi - std::asin(0.8 / 1.5));
    // Areas balance at the critical angle.
    const double d0 = oracle::initial_angle(s), dc = oracle::critical_angle(s);
    const double dm = std::numbers::pi - std::asin(0.8 / 1.5);
    const double acc = s.p_m * (dc - d0);
    const double dec = s.p_max_post * (std::cos(dc) - std::cos(dm)) - s.p_m * (dm - dc);
    CHECK(acc == doctest::Approx(dec).epsilon(1e-12));
  }

  TEST_CASE("SMIB critical clearing time brackets the equal-area value") {
    const double p_m = 0.9;
    const double cct = oracle::critical_clearing_time(oracle::smib_setup(p_m, 0.1).eac);
    REQUIRE(cct > 0.05);
    REQUIRE(cct < 1.0);
    const double below = std::floor(cct / 0.01) * 0.01;
    CHECK(oracle::smib_stable(p_m, below - 0.01, 10.0));
    CHECK_FALSE(oracle::smib_stable(p_m, below + 0.02, 10.0));
    // The simulated boundary lies within one step of the analytic value.
    double t = 0.01;
    while (t < 1.0 && oracle::smib_stable(p_m, t, 10.0)) t += 0.01;
    CHECK(std::abs(t - cct) <= 0.01 + 1e-9);
  }

  TEST_CASE("pre-fault state is an exact equilibrium") {
    const auto c = load_case(case_file("wscc9.json"));
    const Environment env(std::make_shared<const GridCase>(c), EnvConfig{});
    Rng rng(3);
    const auto s = env.sample_state(rng);
    const auto loads = s.demand();
    const auto sol = solve_nr(c, s.dispatch(), loads);
    REQUIRE(sol.converged);
    const auto sys = build_classical_system(c, sol, loads, c.contingencies[0]);
    const auto pe = electrical_power(sys.y_pre, sys.initial);
    for (std::size_t i = 0; i < sys.size(); ++i) {
      CHECK(pe[i] == doctest::Approx(sys.p_m[i]).epsilon(1e-12));
      // Mechanical power equals the generator's electrical output at the terminal.
      CHECK(sys.p_m[i] == doctest::Approx(sol.p_g[i]).epsilon(1e-7));
    }
    auto quiet = sys;
    quiet.y_fault = quiet.y_post = quiet.y_pre;
    DynamicConfig cfg;
    cfg.keep_trace = true;
    const auto out = integrate(quiet, quiet.initial, cfg);
    CHECK(out.stable);
    for (double sp : out.trace) CHECK(sp == doctest::Approx(out.trace.front()).epsilon(1e-9));
  }

  TEST_CASE("internal EMF sits behind the transient reactance") {
    const auto c = load_case(case_file("wscc9.json"));
    const auto loads = base_demand(c);
    const auto sol = solve_nr(c, {{1.04, 1.025, 1.025}, {1.63, 0.85}}, loads);
    REQUIRE(sol.converged);
    const auto sys = build_classical_system(c, sol, loads, c.contingencies[0]);
    for (std::size_t g = 0; g < c.n_generators(); ++g) {
      const auto b = c.bus_index(c.generators[g].bus);
      const Complex v = std::polar(sol.v[b], sol.theta[b]);
      const Complex e = v + Complex(0, c.generators[g].xd_p) * std::conj(Complex(sol.p_g[g], sol.q_g[g]) / v);
      CHECK(sys.initial[g].e_p == doctest::Approx(std::abs(e)).epsilon(1e-12));
      CHECK(sys.initial[g].delta == doctest::Approx(std::arg(e)).epsilon(1e-12));
      CHECK(sys.initial[g].omega == 0.0);
    }
    // Anderson-Fouad reference values for this operating point.
    CHECK(sys.initial[0].e_p == doctest::Approx(1.0566).epsilon(1e-3));
    CHECK(sys.initial[1].e_p == doctest::Approx(1.0502).epsilon(1e-3));
    CHECK(sys.initial[2].e_p == doctest::Approx(1.0170).epsilon(1e-3));
  }

  TEST_CASE("Kron reduction preserves the retained port behaviour") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    const Eigen::Index n = 7;
    ComplexMatrix y = ComplexMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Complex yij(std::abs(n01(rng)), -3 - std::abs(n01(rng)));
        y(i, j) -= yij;
        y(j, i) -= yij;
        y(i, i) += yij;
        y(j, j) += yij;
      }
    for (Eigen::Index i = 0; i < n; ++i) y(i, i) += Complex(0.1, 0.2);
    const std::vector<std::size_t> keep{1, 4, 6};
    const auto red = kron_reduce({y}, keep).y;
    // Drive retained nodes, let the rest float with zero injection.
    ComplexVector vr(3);
    vr << Complex(1, 0.1), Complex(0.9, -0.2), Complex(1.05, 0);
    const std::vector<Eigen::Index> elim{0, 2, 3, 5};
    ComplexMatrix yee(4, 4), yer(4, 3), yre(3, 4), yrr(3, 3);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) yee(a, b) = y(elim[a], elim[b]);
      for (int b = 0; b < 3; ++b) yer(a, b) = y(elim[a], static_cast<Eigen::Index>(keep[b]));
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 4; ++b) yre(a, b) = y(static_cast<Eigen::Index>(keep[a]), elim[b]);
      for (int b = 0; b < 3; ++b) yrr(a, b) = y(static_cast<Eigen::Index>(keep[a]), static_cast<Eigen::Index>(keep[b]));
    }
    const ComplexVector ve = yee.fullPivLu().solve(-yer * vr);
    const ComplexVector ir = yrr * vr + yre * ve;
    CHECK((red * vr - ir).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("energy drift on a lossless undamped system vanishes at fourth order or better") {
    const auto sys = lossless_three_machine();
    auto drift = [&](double dt) {
      DynamicConfig cfg;
      cfg.dt = dt;
      cfg.stop_on_instability = false;
      const auto out = integrate(sys, sys.initial, cfg);
      return std::abs(energy(sys, out.final_state, cfg.omega_s()) - energy(sys, sys.initial, cfg.omega_s()));
    };
    const double d1 = drift(0.01), d2 = drift(0.005), d3 = drift(0.0025);
    CHECK(d1 / d2 > 16.0);
    CHECK(d2 / d3 > 16.0);
    CHECK(d3 < 1e-6);
  }

  TEST_CASE("RK4 error shrinks sixteen-fold when the step halves") {
    const auto sys = lossless_three_machine();
    auto run = [&](double dt) {
      DynamicConfig cfg;
      cfg.t_end = 1.0;
      cfg.dt = dt;
      cfg.stop_on_instability = false;
      return integrate(sys, sys.initial, cfg).final_state;
    };
    const auto a = run(0.01), b = run(0.005), c = run(0.0025);
    double e1 = 0, e2 = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      e1 = std::max(e1, std::abs(a[i].delta - b[i].delta));
      e2 = std::max(e2, std::abs(b[i].delta - c[i].delta));
    }
    const double ratio = e1 / e2;
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
  }

  TEST_CASE("off-grid switching keeps fourth-order accuracy") {
    // A switch inside a step that is not split degrades the error to first order.
    auto sys = lossless_three_machine();
    sys.y_fault = sys.y_pre * 0.2;
    sys.t_clear = 0.1234;
    auto run = [&](double dt) {
      DynamicConfig cfg;
      cfg.t_end = 0.5;
      cfg.dt = dt;
      cfg.stop_on_instability = false;
      return integrate(sys, sys.initial, cfg).final_state;
    };
    const auto ref = run(0.0001);
    auto err = [&](double dt) {
      const auto x = run(dt);
      double e = 0;
      for (std::size_t i = 0; i < 3; ++i) e = std::max(e, std::abs(x[i].delta - ref[i].delta));
      return e;
    };
    CHECK(err(0.01) / err(0.005) > 12.0);
  }

  TEST_CASE("stability metrics") {
    const std::vector<double> d{0.1, -0.4, 0.3};
    CHECK(angle_spread(d) == doctest::Approx(0.7));
    CHECK(instability_duration(2.0, 5.0, true) == 3.0);
    CHECK(instability_duration(5.0, 5.0, false) == 0.0);
    CHECK(tsi(0.0) == 1.0);
    CHECK(tsi(std::numbers::pi) == doctest::Approx(0.0));
    CHECK(tsi(std::numbers::pi / 2) == doctest::Approx((180.0 - 90.0) / (180.0 + 90.0)));
    CHECK(tsi(2 * std::numbers::pi) < 0.0);
  }

  TEST_CASE("trace and onset bookkeeping on an unstable run") {
    const auto r = oracle::smib_setup(0.9, 0.5);
    DynamicConfig cfg;
    cfg.keep_trace = true;
    const auto out = simulate(r.grid, r.sol, {}, r.grid.contingencies[0], cfg);
    REQUIRE_FALSE(out.stable);
    const auto k = static_cast<std::size_t>(std::lround(out.t_s / cfg.dt));
    REQUIRE(out.trace.size() == k + 1);
    CHECK(out.trace.back() > cfg.spread_limit);
    CHECK(out.trace[k - 1] <= cfg.spread_limit);
    CHECK(out.dt_s == doctest::Approx(cfg.t_end - out.t_s));

    auto full = cfg;
    full.stop_on_instability = false;
    const auto all = simulate(r.grid, r.sol, {}, r.grid.contingencies[0], full);
    CHECK(all.trace.size() == static_cast<std::size_t>(cfg.steps()) + 1);
    CHECK(all.t_s == out.t_s);
    CHECK(all.spread_end == all.trace.back());
  }

  TEST_CASE("a crossing on the final sample counts as stable") {
    const auto r = oracle::smib_setup(0.9, 0.5);
    DynamicConfig cfg;
    const auto first = simulate(r.grid, r.sol, {}, r.grid.contingencies[0], cfg);
    REQUIRE_FALSE(first.stable);
    cfg.t_end = first.t_s;
    const auto edge = simulate(r.grid, r.sol, {}, r.grid.contingencies[0], cfg);
    CHECK(edge.stable);
    CHECK(edge.dt_s == 0.0);
  }

  TEST_CASE("configuration validation") {
    DynamicConfig cfg;
    cfg.dt = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.t_end = -1;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    CHECK(cfg.steps() == 500);
  }
}
