#include "tscopf/powerflow.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace tscopf {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class BusKind { PQ, PV, Slack };

struct BusSetup {
  std::vector<BusKind> kind;
  std::vector<double> v_set;  // meaningful for PV and slack buses
  VectorXd p_spec;            // generation minus demand, non-slack gens only
  VectorXd q_demand;
  VectorXd p_demand;
};

BusSetup setup_buses(const GridCase& c, const DispatchPoint& dispatch,
                     std::span<const LoadDemand> loads) {
  const auto n = c.n_buses();
  BusSetup s{std::vector<BusKind>(n, BusKind::PQ), std::vector<double>(n, 1.0),
             VectorXd::Zero(static_cast<Index>(n)), VectorXd::Zero(static_cast<Index>(n)),
             VectorXd::Zero(static_cast<Index>(n))};
  std::vector<bool> voltage_set(n, false);
  std::size_t pc = 0;
  for (std::size_t g = 0; g < c.n_generators(); ++g) {
    const auto& gen = c.generators[g];
    const auto b = c.bus_index(gen.bus);
    if (gen.slack) {
      s.kind[b] = BusKind::Slack;
    } else {
      if (s.kind[b] == BusKind::PQ) s.kind[b] = BusKind::PV;
      s.p_spec(static_cast<Index>(b)) += dispatch.p_c[pc++];
    }
    // The first generator on a bus sets its voltage.
    if (!voltage_set[b]) {
      s.v_set[b] = dispatch.v_c[g];
      voltage_set[b] = true;
    }
  }
  const auto slack_bus = c.bus_index(c.generators[c.slack_generator()].bus);
  s.v_set[slack_bus] = dispatch.v_c[c.slack_generator()];
  for (std::size_t l = 0; l < c.n_loads(); ++l) {
    const auto b = static_cast<Index>(c.bus_index(c.loads[l].bus));
    s.p_demand(b) += loads[l].p;
    s.q_demand(b) += loads[l].q;
  }
  s.p_spec -= s.p_demand;
  return s;
}

ComplexVector phasors(std::span<const double> v, std::span<const double> theta) {
  ComplexVector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = std::polar(v[i], theta[i]);
  return out;
}

}  // namespace

std::vector<LoadDemand> base_demand(const GridCase& c) {
  std::vector<LoadDemand> out;
  out.reserve(c.n_loads());
  for (const auto& l : c.loads) out.push_back({l.p_base, l.q_base});
  return out;
}

ComplexVector bus_injections(const AdmittanceMatrix& y, std::span<const double> v,
                             std::span<const double> theta) {
  const ComplexVector vv = phasors(v, theta);
  const ComplexVector current = y.y * vv;
  return vv.cwiseProduct(current.conjugate());
}

PowerFlowSolution solve_nr(const GridCase& c, const DispatchPoint& dispatch,
                           std::span<const LoadDemand> loads, const NewtonOptions& opt) {
  const auto n = c.n_buses();
  if (dispatch.v_c.size() != c.n_generators() || dispatch.p_c.size() + 1 != c.n_generators())
    throw PreconditionError("dispatch length does not match generator count");
  if (loads.size() != c.n_loads()) throw PreconditionError("load vector length mismatch");

  const auto bus = setup_buses(c, dispatch, loads);
  const auto ybus = build_ybus(c);

  // Unknown ordering: angles of non-slack buses, then magnitudes of PQ buses.
  std::vector<Index> ang_idx, mag_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (bus.kind[i] != BusKind::Slack) ang_idx.push_back(static_cast<Index>(i));
    if (bus.kind[i] == BusKind::PQ) mag_idx.push_back(static_cast<Index>(i));
  }
  const auto na = static_cast<Index>(ang_idx.size());
  const auto nm = static_cast<Index>(mag_idx.size());

  VectorXd vm(static_cast<Index>(n)), va = VectorXd::Zero(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    vm(static_cast<Index>(i)) = bus.kind[i] == BusKind::PQ ? 1.0 : bus.v_set[i];

  PowerFlowSolution sol;
  ComplexVector v(static_cast<Index>(n));
  VectorXd mismatch(na + nm);
  auto evaluate = [&] {
    for (Index i = 0; i < static_cast<Index>(n); ++i) v(i) = std::polar(vm(i), va(i));
    const ComplexVector s = v.cwiseProduct((ybus.y * v).conjugate());
    for (Index k = 0; k < na; ++k) mismatch(k) = s(ang_idx[k]).real() - bus.p_spec(ang_idx[k]);
    for (Index k = 0; k < nm; ++k)
      mismatch(na + k) = s(mag_idx[k]).imag() + bus.q_demand(mag_idx[k]);
    return mismatch.size() ? mismatch.cwiseAbs().maxCoeff() : 0.0;
  };

  double err = evaluate();
  int it = 0;
  while (std::isfinite(err) && err > opt.tolerance && it < opt.max_iterations) {
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)),
    // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    const ComplexVector current = ybus.y * v;
    const ComplexVector unit = v.cwiseQuotient(vm.cast<Complex>());
    ComplexMatrix ds_dva = -(ybus.y * v.asDiagonal());
    ds_dva.diagonal() += current;
    ds_dva = (Complex(0.0, 1.0) * v.asDiagonal() * ds_dva.conjugate()).eval();
    ComplexMatrix ds_dvm = v.asDiagonal() * (ybus.y * unit.asDiagonal()).conjugate();
    ds_dvm.diagonal() += current.conjugate().cwiseProduct(unit);

    MatrixXd jac(na + nm, na + nm);
    for (Index r = 0; r < na; ++r) {
      for (Index k = 0; k < na; ++k) jac(r, k) = ds_dva(ang_idx[r], ang_idx[k]).real();
      for (Index k = 0; k < nm; ++k) jac(r, na + k) = ds_dvm(ang_idx[r], mag_idx[k]).real();
    }
    for (Index r = 0; r < nm; ++r) {
      for (Index k = 0; k < na; ++k) jac(na + r, k) = ds_dva(mag_idx[r], ang_idx[k]).imag();
      for (Index k = 0; k < nm; ++k) jac(na + r, na + k) = ds_dvm(mag_idx[r], mag_idx[k]).imag();
    }

    Eigen::PartialPivLU<MatrixXd> lu(jac);
    if (!(lu.rcond() > 1e-14)) {
      sol.singular_jacobian = true;
      break;
    }
    const VectorXd dx = lu.solve(-mismatch);
    for (Index k = 0; k < na; ++k) va(ang_idx[k]) += dx(k);
    for (Index k = 0; k < nm; ++k) vm(mag_idx[k]) += dx(na + k);
    ++it;
    err = evaluate();
  }

  sol.iterations = it;
  sol.max_mismatch = err;
  sol.converged = std::isfinite(err) && err <= opt.tolerance && !sol.singular_jacobian &&
                  vm.allFinite() && va.allFinite();
  sol.v.assign(vm.data(), vm.data() + vm.size());
  sol.theta.assign(va.data(), va.data() + va.size());

  // Generator outputs from the solved injections.
  const ComplexVector s = v.cwiseProduct((ybus.y * v).conjugate());
  sol.p_g.assign(c.n_generators(), 0.0);
  sol.q_g.assign(c.n_generators(), 0.0);
  std::vector<int> gens_at(n, 0);
  for (const auto& g : c.generators) ++gens_at[c.bus_index(g.bus)];
  std::size_t pc = 0;
  const auto slack = c.slack_generator();
  for (std::size_t g = 0; g < c.n_generators(); ++g) {
    const auto b = c.bus_index(c.generators[g].bus);
    const auto bi = static_cast<Index>(b);
    sol.q_g[g] = (s(bi).imag() + bus.q_demand(bi)) / gens_at[b];
    if (g != slack) sol.p_g[g] = dispatch.p_c[pc++];
  }
  {
    const auto b = c.bus_index(c.generators[slack].bus);
    double p = s(static_cast<Index>(b)).real() + bus.p_demand(static_cast<Index>(b));
    for (std::size_t g = 0; g < c.n_generators(); ++g)
      if (g != slack && c.bus_index(c.generators[g].bus) == b) p -= sol.p_g[g];
    sol.p_g[slack] = p;
  }

  sol.p_line.reserve(c.branches.size());
  for (const auto& br : c.branches) {
    const auto f = static_cast<Index>(c.bus_index(br.from_bus));
    const auto t = static_cast<Index>(c.bus_index(br.to_bus));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex yff = (ys + Complex(0.0, br.b_sh / 2.0)) / (br.tap * br.tap);
    const Complex yft = -ys / br.tap;
    const Complex i_f = yff * v(f) + yft * v(t);
    sol.p_line.push_back((v(f) * std::conj(i_f)).real());
  }
  return sol;
}

double StaticViolationReport::total() const {
  auto sum = [](const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0); };
  return sum(v_over) + sum(pg_over) + sum(qg_over) + sum(pl_over);
}

StaticViolationReport static_violations(const GridCase& c, const PowerFlowSolution& sol) {
  if (!sol.converged) throw PreconditionError("static_violations requires a converged solution");
  StaticViolationReport r;
  for (std::size_t i = 0; i < c.n_buses(); ++i)
    r.v_over.push_back(over_limit(sol.v[i], c.buses[i].v_min, c.buses[i].v_max));
  for (std::size_t g = 0; g < c.n_generators(); ++g) {
    const auto& gen = c.generators[g];
    r.pg_over.push_back(over_limit(sol.p_g[g], gen.p_min, gen.p_max));
    r.qg_over.push_back(over_limit(sol.q_g[g], gen.q_min, gen.q_max));
  }
  for (std::size_t k = 0; k < c.branches.size(); ++k)
    r.pl_over.push_back(over_limit(sol.p_line[k], c.branches[k].p_min, c.branches[k].p_max));
  return r;
}

double generation_cost(const GridCase& c, std::span<const double> p_g) {
  if (p_g.size() != c.n_generators())
    throw PreconditionError("generation_cost: p_g length mismatch");
  double cost = 0.0;
  for (std::size_t g = 0; g < p_g.size(); ++g) {
    const auto& gen = c.generators[g];
    cost += gen.c0 + gen.c1 * p_g[g] + gen.c2 * p_g[g] * p_g[g];
  }
  return cost;
}

}  // namespace tscopf
