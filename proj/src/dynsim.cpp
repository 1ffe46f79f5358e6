#include "tscopf/dynsim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tscopf {

using Eigen::Index;

void DynamicConfig::validate() const {
  if (!(dt > 0.0 && dt <= t_end)) throw PreconditionError("DynamicConfig: require 0 < dt <= t_end");
  if (spread_limit != std::numbers::pi) throw PreconditionError("DynamicConfig: spread_limit must be pi");
  if (!(f_nominal > 0.0)) throw PreconditionError("DynamicConfig: f_nominal must be positive");
}

int DynamicConfig::steps() const { return static_cast<int>(std::lround(t_end / dt)); }

AdmittanceMatrix kron_reduce(const AdmittanceMatrix& y, std::span<const std::size_t> retained) {
  const auto n = static_cast<Index>(y.n());
  std::vector<bool> keep(static_cast<std::size_t>(n), false);
  for (auto r : retained) {
    if (r >= static_cast<std::size_t>(n)) throw KronError("retained index out of range");
    keep[r] = true;
  }
  std::vector<Index> rr(retained.begin(), retained.end()), ee;
  for (Index i = 0; i < n; ++i)
    if (!keep[static_cast<std::size_t>(i)]) ee.push_back(i);

  const auto nr = static_cast<Index>(rr.size());
  const auto ne = static_cast<Index>(ee.size());
  ComplexMatrix yrr(nr, nr), yre(nr, ne), yer(ne, nr), yee(ne, ne);
  for (Index a = 0; a < nr; ++a) {
    for (Index b = 0; b < nr; ++b) yrr(a, b) = y.y(rr[a], rr[b]);
    for (Index b = 0; b < ne; ++b) yre(a, b) = y.y(rr[a], ee[b]);
  }
  for (Index a = 0; a < ne; ++a) {
    for (Index b = 0; b < nr; ++b) yer(a, b) = y.y(ee[a], rr[b]);
    for (Index b = 0; b < ne; ++b) yee(a, b) = y.y(ee[a], ee[b]);
  }
  if (ne == 0) return {yrr};

  Eigen::PartialPivLU<ComplexMatrix> lu(yee);
  if (!(lu.rcond() > 1e-14)) throw KronError("eliminated block is singular (disconnected subnetwork)");
  ComplexMatrix red = yrr - yre * lu.solve(yer);
  if (!red.allFinite()) throw KronError("eliminated block is singular (disconnected subnetwork)");
  return {red};
}

ComplexMatrix augment_with_machines(const GridCase& c, const ComplexMatrix& ybus,
                                    std::span<const LoadDemand> loads, std::span<const double> v) {
  const auto nb = static_cast<Index>(c.n_buses());
  const auto ng = static_cast<Index>(c.n_generators());
  ComplexMatrix y = ComplexMatrix::Zero(nb + ng, nb + ng);
  y.topLeftCorner(nb, nb) = ybus;
  for (std::size_t l = 0; l < c.n_loads(); ++l) {
    const auto b = static_cast<Index>(c.bus_index(c.loads[l].bus));
    const double vm = v[static_cast<std::size_t>(b)];
    y(b, b) += Complex(loads[l].p, -loads[l].q) / (vm * vm);
  }
  for (Index g = 0; g < ng; ++g) {
    const auto& gen = c.generators[static_cast<std::size_t>(g)];
    const auto b = static_cast<Index>(c.bus_index(gen.bus));
    const Complex yg = 1.0 / Complex(0.0, gen.xd_p);
    const Index k = nb + g;
    y(k, k) += yg;
    y(b, b) += yg;
    y(k, b) -= yg;
    y(b, k) -= yg;
  }
  return y;
}

std::vector<double> electrical_power(const ComplexMatrix& y_red, std::span<const MachineState> m) {
  const auto n = static_cast<Index>(m.size());
  ComplexVector e(n);
  for (Index i = 0; i < n; ++i) e(i) = std::polar(m[static_cast<std::size_t>(i)].e_p, m[static_cast<std::size_t>(i)].delta);
  const ComplexVector current = y_red * e;
  std::vector<double> p(m.size());
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = (e(i) * std::conj(current(i))).real();
  return p;
}

ClassicalSystem build_classical_system(const GridCase& c, const PowerFlowSolution& sol,
                                       std::span<const LoadDemand> loads, const ContingencySpec& g) {
  if (!sol.converged) throw PreconditionError("simulation requires a converged power flow");
  const auto nb = c.n_buses();
  const auto ng = c.n_generators();

  ClassicalSystem sys;
  sys.t_fault = g.t_fault;
  sys.t_clear = g.t_clear;
  sys.initial.resize(ng);
  sys.h.resize(ng);
  sys.d.resize(ng);
  for (std::size_t k = 0; k < ng; ++k) {
    const auto& gen = c.generators[k];
    const auto b = c.bus_index(gen.bus);
    const Complex vt = std::polar(sol.v[b], sol.theta[b]);
    const Complex ig = std::conj(Complex(sol.p_g[k], sol.q_g[k]) / vt);
    const Complex e = vt + Complex(0.0, gen.xd_p) * ig;
    sys.initial[k] = {std::arg(e), 0.0, std::abs(e)};
    sys.h[k] = gen.h;
    sys.d[k] = gen.d;
  }

  std::vector<std::size_t> internal(ng);
  for (std::size_t k = 0; k < ng; ++k) internal[k] = nb + k;

  const auto ybus = build_ybus(c);
  const auto pair = fault_ybus_pair(c, g);
  sys.y_pre = kron_reduce({augment_with_machines(c, ybus.y, loads, sol.v)}, internal).y;
  sys.y_fault = kron_reduce({augment_with_machines(c, pair.faulted.y, loads, sol.v)}, internal).y;
  sys.y_post = kron_reduce({augment_with_machines(c, pair.postfault.y, loads, sol.v)}, internal).y;
  // Mechanical power balances the pre-fault network exactly at t = 0.
  sys.p_m = electrical_power(sys.y_pre, sys.initial);
  return sys;
}

double angle_spread(std::span<const double> deltas) {
  if (deltas.empty()) throw PreconditionError("angle_spread: no machines");
  const auto [lo, hi] = std::minmax_element(deltas.begin(), deltas.end());
  return *hi - *lo;
}

double instability_duration(double t_s, double t_end, bool unstable) {
  return unstable ? t_end - t_s : 0.0;
}

double tsi(double spread_end_rad) {
  const double deg = spread_end_rad * 180.0 / std::numbers::pi;
  return (180.0 - deg) / (180.0 + deg);
}

namespace {

double spread_of(std::span<const MachineState> m) {
  double lo = m[0].delta, hi = m[0].delta;
  for (const auto& s : m) {
    lo = std::min(lo, s.delta);
    hi = std::max(hi, s.delta);
  }
  return hi - lo;
}

bool all_finite(std::span<const MachineState> m) {
  return std::all_of(m.begin(), m.end(),
                     [](const MachineState& s) { return std::isfinite(s.delta) && std::isfinite(s.omega); });
}

struct Derivative {
  std::vector<double> d_delta, d_omega;
};

class SwingModel {
 public:
  SwingModel(const ClassicalSystem& sys, double omega_s) : sys_(sys), omega_s_(omega_s) {}

  [[nodiscard]] const ComplexMatrix& network_at(double t) const {
    if (t < sys_.t_fault) return sys_.y_pre;
    if (t < sys_.t_clear) return sys_.y_fault;
    return sys_.y_post;
  }

  // 2H dw/dt = Pm - Pe - D w ;  d(delta)/dt = ws w
  void derivative(const ComplexMatrix& y, std::span<const MachineState> x, Derivative& out) const {
    const auto pe = electrical_power(y, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      out.d_delta[i] = omega_s_ * x[i].omega;
      out.d_omega[i] = (sys_.p_m[i] - pe[i] - sys_.d[i] * x[i].omega) / (2.0 * sys_.h[i]);
    }
  }

  void rk4(std::vector<MachineState>& x, double h, const ComplexMatrix& y) {
    const auto n = x.size();
    for (auto* k : {&k1_, &k2_, &k3_, &k4_}) {
      k->d_delta.resize(n);
      k->d_omega.resize(n);
    }
    tmp_ = x;
    auto shifted = [&](const Derivative& k, double a) {
      for (std::size_t i = 0; i < n; ++i) {
        tmp_[i].delta = x[i].delta + a * k.d_delta[i];
        tmp_[i].omega = x[i].omega + a * k.d_omega[i];
      }
      return std::span<const MachineState>(tmp_);
    };
    derivative(y, x, k1_);
    derivative(y, shifted(k1_, h / 2), k2_);
    derivative(y, shifted(k2_, h / 2), k3_);
    derivative(y, shifted(k3_, h), k4_);
    for (std::size_t i = 0; i < n; ++i) {
      x[i].delta += h / 6 * (k1_.d_delta[i] + 2 * k2_.d_delta[i] + 2 * k3_.d_delta[i] + k4_.d_delta[i]);
      x[i].omega += h / 6 * (k1_.d_omega[i] + 2 * k2_.d_omega[i] + 2 * k3_.d_omega[i] + k4_.d_omega[i]);
    }
  }

 private:
  const ClassicalSystem& sys_;
  double omega_s_;
  Derivative k1_, k2_, k3_, k4_;
  std::vector<MachineState> tmp_;
};

}  // namespace

SimulationOutcome integrate(const ClassicalSystem& sys, std::vector<MachineState> x,
                            const DynamicConfig& cfg) {
  cfg.validate();
  if (x.empty()) throw PreconditionError("integrate: no machines");
  SwingModel model(sys, cfg.omega_s());

  const int n_steps = cfg.steps();
  const double eps = 1e-9 * cfg.dt;
  SimulationOutcome out;
  out.t_s = cfg.t_end;
  bool crossed = false;
  double spread = spread_of(x);
  if (cfg.keep_trace) {
    out.trace.reserve(static_cast<std::size_t>(n_steps) + 1);
    out.trace.push_back(spread);
  }

  const double switches[] = {sys.t_fault, sys.t_clear};
  for (int k = 0; k < n_steps; ++k) {
    const double t0 = k * cfg.dt;
    const double t1 = (k + 1) * cfg.dt;
    const auto before = x;
    // Split the step at any network switching instant inside it.
    double t = t0;
    for (double s : switches) {
      if (s > t + eps && s < t1 - eps) {
        model.rk4(x, s - t, model.network_at(t + eps));
        t = s;
      }
    }
    model.rk4(x, t1 - t, model.network_at(t + eps));

    if (!all_finite(x)) {
      x = before;
      if (!crossed) {
        crossed = true;
        out.t_s = t0;
      }
      break;
    }
    spread = spread_of(x);
    if (cfg.keep_trace) out.trace.push_back(spread);
    if (!crossed && spread > cfg.spread_limit) {
      crossed = true;
      out.t_s = k + 1 == n_steps ? cfg.t_end : t1;
      if (cfg.stop_on_instability) break;
    }
  }

  out.spread_end = spread_of(x);
  out.final_state = x;
  out.dt_s = instability_duration(out.t_s, cfg.t_end, crossed);
  // A crossing on the final sample leaves zero remaining horizon.
  out.stable = !(out.dt_s > 0.0);
  if (out.stable) {
    out.t_s = cfg.t_end;
    out.dt_s = 0.0;
  }
  out.tsi = tsi(out.spread_end);
  return out;
}

SimulationOutcome simulate(const GridCase& c, const PowerFlowSolution& sol,
                           std::span<const LoadDemand> loads, const ContingencySpec& g,
                           const DynamicConfig& cfg) {
  const auto sys = build_classical_system(c, sol, loads, g);
  return integrate(sys, sys.initial, cfg);
}

}  // namespace tscopf
