#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace tscopf {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Raised when a case document cannot be parsed or fails validation.
class CaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a network switching leaves the bus graph disconnected.
class IslandedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;
  double v_min = 0.95;
  double v_max = 1.05;
  // Fixed shunt admittance to ground (p.u.).
  double g_sh = 0.0;
  double b_sh = 0.0;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;  // total line charging
  double p_min = -1e9;
  double p_max = 1e9;
  double tap = 1.0;  // off-nominal ratio on the from side
};

struct Generator {
  int bus = 0;
  bool slack = false;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double h = 1.0;     // inertia constant (s)
  double d = 0.0;     // damping (p.u.)
  double xd_p = 0.1;  // transient reactance (p.u.)
};

struct Load {
  int bus = 0;
  double p_base = 0.0;
  double q_base = 0.0;
};

enum class FaultEnd { From, To };

struct ContingencySpec {
  std::size_t branch = 0;  // index into GridCase::branches
  FaultEnd fault_end = FaultEnd::From;
  double t_fault = 0.0;
  double t_clear = 0.1;
};

/// Static network description. Bus references in branches, generators and
/// loads are external bus ids; bus_index() maps them to matrix rows.
class GridCase {
 public:
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  std::vector<ContingencySpec> contingencies;

  /// Checks every structural invariant and rebuilds the id lookup.
  /// Throws CaseError naming the offending element.
  void validate();

  [[nodiscard]] std::size_t bus_index(int id) const;
  [[nodiscard]] std::size_t slack_generator() const;
  [[nodiscard]] std::size_t n_buses() const { return buses.size(); }
  [[nodiscard]] std::size_t n_generators() const { return generators.size(); }
  [[nodiscard]] std::size_t n_loads() const { return loads.size(); }

 private:
  std::unordered_map<int, std::size_t> index_;
};

/// Dense complex bus admittance matrix (p.u.).
struct AdmittanceMatrix {
  ComplexMatrix y;
  [[nodiscard]] std::size_t n() const { return static_cast<std::size_t>(y.rows()); }
};

GridCase parse_case(std::string_view text, const std::string& origin = "<string>");
GridCase load_case(const std::filesystem::path& path);
std::string dump_case(const GridCase& c);

/// Stamps one branch's pi-model into an existing matrix.
void stamp_branch(ComplexMatrix& y, const GridCase& c, const Branch& br);

AdmittanceMatrix build_ybus(const GridCase& c);

/// Large shunt conductance used to represent a bolted three-phase fault.
inline constexpr double kFaultConductance = 1e7;

struct FaultPair {
  AdmittanceMatrix faulted;
  AdmittanceMatrix postfault;
};

/// Bus index (row) at which contingency `g` applies its fault.
std::size_t fault_bus_index(const GridCase& c, const ContingencySpec& g);

/// Admittance matrices for the fault-on period and after clearing (faulted
/// branch tripped). Throws IslandedError if tripping disconnects the grid.
FaultPair fault_ybus_pair(const GridCase& c, const ContingencySpec& g);

/// Returns true when the bus graph, excluding `skip_branch`, is connected.
bool is_connected(const GridCase& c, std::optional<std::size_t> skip_branch = std::nullopt);

}  // namespace tscopf
