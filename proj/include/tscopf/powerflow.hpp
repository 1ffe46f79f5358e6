#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include "tscopf/grid.hpp"

namespace tscopf {

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Control vector: one voltage setpoint per generator and one active setpoint
/// per non-slack generator (generator order, slack skipped).
struct DispatchPoint {
  std::vector<double> v_c;
  std::vector<double> p_c;
};

struct LoadDemand {
  double p = 0.0;
  double q = 0.0;
};

std::vector<LoadDemand> base_demand(const GridCase& c);

struct PowerFlowSolution {
  bool converged = false;
  bool singular_jacobian = false;
  std::vector<double> v;      // per bus
  std::vector<double> theta;  // per bus (rad)
  std::vector<double> p_g;    // per generator, slack included
  std::vector<double> q_g;
  std::vector<double> p_line;  // per branch, from-end
  int iterations = 0;
  double max_mismatch = 0.0;
};

struct NewtonOptions {
  double tolerance = 1e-8;
  int max_iterations = 20;
};

/// Full Newton-Raphson from a flat start. Non-convergence is reported through
/// `converged`, never thrown. Reactive limits are not enforced.
PowerFlowSolution solve_nr(const GridCase& c, const DispatchPoint& dispatch,
                           std::span<const LoadDemand> loads, const NewtonOptions& opt = {});

/// Complex bus injections S_i = V_i conj((Y V)_i) of a voltage state.
ComplexVector bus_injections(const AdmittanceMatrix& y, std::span<const double> v,
                             std::span<const double> theta);

struct StaticViolationReport {
  std::vector<double> v_over;
  std::vector<double> pg_over;
  std::vector<double> qg_over;
  std::vector<double> pl_over;

  [[nodiscard]] double total() const;
  [[nodiscard]] bool any() const { return total() > 0.0; }
};

/// max(value - upper, 0) + max(lower - value, 0)
inline double over_limit(double value, double lower, double upper) {
  return std::max(value - upper, 0.0) + std::max(lower - value, 0.0);
}

StaticViolationReport static_violations(const GridCase& c, const PowerFlowSolution& sol);

double generation_cost(const GridCase& c, std::span<const double> p_g);

}  // namespace tscopf
