#pragma once

#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "tscopf/grid.hpp"
#include "tscopf/powerflow.hpp"

namespace tscopf {

class KronError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DynamicConfig {
  double t_end = 5.0;
  double dt = 0.01;
  double spread_limit = std::numbers::pi;
  double f_nominal = 60.0;
  // Stop at the first sample whose spread exceeds the limit. The end-of-horizon
  // spread reward variants need the full horizon and switch this off.
  bool stop_on_instability = true;
  bool keep_trace = false;

  void validate() const;
  [[nodiscard]] double omega_s() const { return 2.0 * std::numbers::pi * f_nominal; }
  [[nodiscard]] int steps() const;
};

struct MachineState {
  double delta = 0.0;  // rad
  double omega = 0.0;  // p.u. speed deviation
  double e_p = 1.0;    // internal EMF magnitude (constant)
};

struct SimulationOutcome {
  bool stable = true;
  double t_s = 0.0;         // instability onset, t_end when stable
  double dt_s = 0.0;        // instability duration
  double spread_end = 0.0;  // spread at the last simulated sample (rad)
  double tsi = 1.0;
  std::vector<double> trace;  // spread at t = k*dt, when requested
  std::vector<MachineState> final_state;
};

/// Y_rr - Y_re Y_ee^-1 Y_er for the given retained node set.
AdmittanceMatrix kron_reduce(const AdmittanceMatrix& y, std::span<const std::size_t> retained);

/// Bus matrix extended with one internal node per generator (index n_bus + g)
/// tied to its terminal through 1/(j xd'), plus constant-impedance loads.
ComplexMatrix augment_with_machines(const GridCase& c, const ComplexMatrix& ybus,
                                    std::span<const LoadDemand> loads, std::span<const double> v);

/// Classical multi-machine model reduced to generator internal nodes.
struct ClassicalSystem {
  ComplexMatrix y_pre, y_fault, y_post;
  std::vector<MachineState> initial;
  std::vector<double> p_m, h, d;
  double t_fault = 0.0;
  double t_clear = 0.0;

  [[nodiscard]] std::size_t size() const { return initial.size(); }
};

ClassicalSystem build_classical_system(const GridCase& c, const PowerFlowSolution& sol,
                                       std::span<const LoadDemand> loads, const ContingencySpec& g);

/// Electrical output of every machine for a given rotor-angle vector.
std::vector<double> electrical_power(const ComplexMatrix& y_red, std::span<const MachineState> m);

/// Fixed-step RK4 across the three network phases of `sys`.
SimulationOutcome integrate(const ClassicalSystem& sys, std::vector<MachineState> state,
                            const DynamicConfig& cfg);

SimulationOutcome simulate(const GridCase& c, const PowerFlowSolution& sol,
                           std::span<const LoadDemand> loads, const ContingencySpec& g,
                           const DynamicConfig& cfg);

double angle_spread(std::span<const double> deltas);
double instability_duration(double t_s, double t_end, bool unstable);
double tsi(double spread_end_rad);

}  // namespace tscopf
