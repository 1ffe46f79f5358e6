#pragma once

// Small hand-built grids shared by unit and acceptance tests.

#include "tscopf/grid.hpp"

namespace oracle {

/// Slack generator at bus 1 feeding a load at bus 2 through one line.
inline tscopf::GridCase two_bus() {
  tscopf::GridCase c;
  c.buses = {{1, 0.9, 1.1, 0, 0}, {2, 0.9, 1.1, 0, 0}};
  c.branches = {{1, 2, 0.02, 0.08, 0.04, -5, 5, 1.0}};
  tscopf::Generator g;
  g.bus = 1;
  g.slack = true;
  g.p_min = 0;
  g.p_max = 3;
  g.q_min = -3;
  g.q_max = 3;
  g.c1 = 10;
  c.generators = {g};
  c.loads = {{2, 0.8, 0.3}};
  c.validate();
  return c;
}

struct SmibLayout {
  double x_gen = 0.2;      // machine transient reactance
  double x_tr = 0.1;       // step-up line, bus 1 - bus 2
  double x_line = 0.4;     // each of the two parallel lines, bus 2 - bus 3
  double x_inf = 1e-6;     // infinite-bus source reactance
  double h = 5.0;
  double h_inf = 1e6;
};

/// Machine at bus 1, double circuit 2-3 to an "infinite" bus 3 (huge inertia,
/// negligible reactance). Lossless, no loads. The fault is at bus 2 on one
/// circuit, which is tripped at t_clear.
inline tscopf::GridCase smib(const SmibLayout& l, double t_clear) {
  tscopf::GridCase c;
  c.buses = {{1, 0.5, 1.5, 0, 0}, {2, 0.5, 1.5, 0, 0}, {3, 0.5, 1.5, 0, 0}};
  c.branches = {{1, 2, 0, l.x_tr, 0, -9, 9, 1.0}, {2, 3, 0, l.x_line, 0, -9, 9, 1.0}, {2, 3, 0, l.x_line, 0, -9, 9, 1.0}};
  tscopf::Generator m;
  m.bus = 1;
  m.p_min = 0;
  m.p_max = 2;
  m.q_min = -5;
  m.q_max = 5;
  m.h = l.h;
  m.xd_p = l.x_gen;
  tscopf::Generator inf = m;
  inf.bus = 3;
  inf.slack = true;
  inf.p_min = -5;
  inf.p_max = 5;
  inf.h = l.h_inf;
  inf.xd_p = l.x_inf;
  c.generators = {m, inf};
  c.contingencies = {{1, tscopf::FaultEnd::From, 0.0, t_clear}};
  c.validate();
  return c;
}

}  // namespace oracle
