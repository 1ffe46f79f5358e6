#include "tscopf/grid.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tscopf {

using nlohmann::json;

namespace {

std::string element(std::string_view kind, std::size_t i) {
  std::ostringstream os;
  os << kind << "[" << i << "]";
  return os.str();
}

double number_field(const json& obj, const std::string& where, const char* key,
                    std::optional<double> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw CaseError(where + ": missing field '" + key + "'");
  }
  if (!it->is_number()) throw CaseError(where + "." + key + ": expected a number");
  return it->get<double>();
}

int int_field(const json& obj, const std::string& where, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw CaseError(where + ": missing field '" + key + "'");
  if (!it->is_number_integer()) throw CaseError(where + "." + key + ": expected an integer");
  return it->get<int>();
}

const json& array_field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw CaseError(std::string("missing section '") + key + "'");
  if (!it->is_array()) throw CaseError(std::string("section '") + key + "' must be an array");
  return *it;
}

// Maps a byte offset reported by the JSON parser to "line L, column C".
std::string line_context(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < offset; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

void GridCase::validate() {
  if (!(base_mva > 0.0)) throw CaseError("base_mva must be positive");
  if (buses.empty()) throw CaseError("case has no buses");

  index_.clear();
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const auto& b = buses[i];
    if (!index_.emplace(b.id, i).second)
      throw CaseError(element("buses", i) + ": duplicate bus id " + std::to_string(b.id));
    if (!(0.0 < b.v_min && b.v_min < b.v_max))
      throw CaseError(element("buses", i) + ": require 0 < v_min < v_max");
  }
  auto check_bus = [&](int id, const std::string& where) {
    if (!index_.contains(id))
      throw CaseError(where + ": unknown bus " + std::to_string(id));
  };

  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& br = branches[i];
    const auto where = element("branches", i);
    check_bus(br.from_bus, where);
    check_bus(br.to_bus, where);
    if (br.from_bus == br.to_bus) throw CaseError(where + ": branch connects a bus to itself");
    if (br.x == 0.0) throw CaseError(where + ": x must be nonzero");
    if (br.p_min > br.p_max) throw CaseError(where + ": p_min > p_max");
    if (!(br.tap > 0.0)) throw CaseError(where + ": tap must be positive");
  }

  std::size_t n_slack = 0;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    const auto& g = generators[i];
    const auto where = element("generators", i);
    check_bus(g.bus, where);
    if (g.p_min > g.p_max) throw CaseError(where + ": p_min > p_max");
    if (g.q_min > g.q_max) throw CaseError(where + ": q_min > q_max");
    if (!(g.h > 0.0)) throw CaseError(where + ": h must be positive");
    if (!(g.xd_p > 0.0)) throw CaseError(where + ": xd_p must be positive");
    if (g.slack) ++n_slack;
  }
  if (n_slack != 1)
    throw CaseError("exactly one generator must be flagged slack (found " +
                    std::to_string(n_slack) + ")");

  for (std::size_t i = 0; i < loads.size(); ++i) {
    const auto& l = loads[i];
    check_bus(l.bus, element("loads", i));
    if (l.p_base < 0.0) throw CaseError(element("loads", i) + ": p_base must be non-negative");
  }

  for (std::size_t i = 0; i < contingencies.size(); ++i) {
    const auto& g = contingencies[i];
    const auto where = element("contingencies", i);
    if (g.branch >= branches.size())
      throw CaseError(where + ": unknown branch " + std::to_string(g.branch));
    if (!(0.0 <= g.t_fault && g.t_fault < g.t_clear))
      throw CaseError(where + ": require 0 <= t_fault < t_clear");
  }
}

std::size_t GridCase::bus_index(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw CaseError("unknown bus " + std::to_string(id));
  return it->second;
}

std::size_t GridCase::slack_generator() const {
  for (std::size_t i = 0; i < generators.size(); ++i)
    if (generators[i].slack) return i;
  throw CaseError("no slack generator");
}

GridCase parse_case(std::string_view text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw CaseError(origin + ": parse error at " + line_context(text, e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw CaseError(origin + ": top level must be an object");

  GridCase c;
  try {
    c.base_mva = number_field(doc, "case", "base_mva");

    const auto& buses = array_field(doc, "buses");
    for (std::size_t i = 0; i < buses.size(); ++i) {
      const auto& o = buses[i];
      const auto w = element("buses", i);
      Bus b;
      b.id = int_field(o, w, "id");
      b.v_min = number_field(o, w, "v_min");
      b.v_max = number_field(o, w, "v_max");
      b.g_sh = number_field(o, w, "g_sh", 0.0);
      b.b_sh = number_field(o, w, "b_sh", 0.0);
      c.buses.push_back(b);
    }

    const auto& branches = array_field(doc, "branches");
    for (std::size_t i = 0; i < branches.size(); ++i) {
      const auto& o = branches[i];
      const auto w = element("branches", i);
      Branch br;
      br.from_bus = int_field(o, w, "from_bus");
      br.to_bus = int_field(o, w, "to_bus");
      br.r = number_field(o, w, "r");
      br.x = number_field(o, w, "x");
      br.b_sh = number_field(o, w, "b_sh", 0.0);
      br.p_min = number_field(o, w, "p_min", -1e9);
      br.p_max = number_field(o, w, "p_max", 1e9);
      br.tap = number_field(o, w, "tap", 1.0);
      c.branches.push_back(br);
    }

    const auto& gens = array_field(doc, "generators");
    for (std::size_t i = 0; i < gens.size(); ++i) {
      const auto& o = gens[i];
      const auto w = element("generators", i);
      Generator g;
      g.bus = int_field(o, w, "bus");
      if (auto it = o.find("slack"); it != o.end()) {
        if (!it->is_boolean()) throw CaseError(w + ".slack: expected a boolean");
        g.slack = it->get<bool>();
      }
      g.p_min = number_field(o, w, "p_min");
      g.p_max = number_field(o, w, "p_max");
      g.q_min = number_field(o, w, "q_min");
      g.q_max = number_field(o, w, "q_max");
      g.c0 = number_field(o, w, "c0");
      g.c1 = number_field(o, w, "c1");
      g.c2 = number_field(o, w, "c2");
      g.h = number_field(o, w, "h");
      g.d = number_field(o, w, "d", 0.0);
      g.xd_p = number_field(o, w, "xd_p");
      c.generators.push_back(g);
    }

    const auto& loads = array_field(doc, "loads");
    for (std::size_t i = 0; i < loads.size(); ++i) {
      const auto& o = loads[i];
      const auto w = element("loads", i);
      Load l;
      l.bus = int_field(o, w, "bus");
      l.p_base = number_field(o, w, "p_base");
      l.q_base = number_field(o, w, "q_base");
      c.loads.push_back(l);
    }

    if (doc.contains("contingencies")) {
      const auto& cons = array_field(doc, "contingencies");
      for (std::size_t i = 0; i < cons.size(); ++i) {
        const auto& o = cons[i];
        const auto w = element("contingencies", i);
        ContingencySpec g;
        const int br = int_field(o, w, "branch");
        if (br < 0) throw CaseError(w + ".branch: must be non-negative");
        g.branch = static_cast<std::size_t>(br);
        auto end = o.value("fault_end", std::string("from"));
        if (end == "from") {
          g.fault_end = FaultEnd::From;
        } else if (end == "to") {
          g.fault_end = FaultEnd::To;
        } else {
          throw CaseError(w + ".fault_end: expected \"from\" or \"to\"");
        }
        g.t_fault = number_field(o, w, "t_fault");
        g.t_clear = number_field(o, w, "t_clear");
        c.contingencies.push_back(g);
      }
    }
  } catch (const json::exception& e) {
    throw CaseError(origin + ": " + e.what());
  } catch (const CaseError& e) {
    throw CaseError(origin + ": " + e.what());
  }

  try {
    c.validate();
  } catch (const CaseError& e) {
    throw CaseError(origin + ": " + e.what());
  }
  return c;
}

GridCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open case file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), path.string());
}

std::string dump_case(const GridCase& c) {
  json doc;
  doc["base_mva"] = c.base_mva;
  doc["buses"] = json::array();
  for (const auto& b : c.buses)
    doc["buses"].push_back(
        {{"id", b.id}, {"v_min", b.v_min}, {"v_max", b.v_max}, {"g_sh", b.g_sh}, {"b_sh", b.b_sh}});
  doc["branches"] = json::array();
  for (const auto& br : c.branches)
    doc["branches"].push_back({{"from_bus", br.from_bus},
                               {"to_bus", br.to_bus},
                               {"r", br.r},
                               {"x", br.x},
                               {"b_sh", br.b_sh},
                               {"p_min", br.p_min},
                               {"p_max", br.p_max},
                               {"tap", br.tap}});
  doc["generators"] = json::array();
  for (const auto& g : c.generators)
    doc["generators"].push_back({{"bus", g.bus},
                                 {"slack", g.slack},
                                 {"p_min", g.p_min},
                                 {"p_max", g.p_max},
                                 {"q_min", g.q_min},
                                 {"q_max", g.q_max},
                                 {"c0", g.c0},
                                 {"c1", g.c1},
                                 {"c2", g.c2},
                                 {"h", g.h},
                                 {"d", g.d},
                                 {"xd_p", g.xd_p}});
  doc["loads"] = json::array();
  for (const auto& l : c.loads)
    doc["loads"].push_back({{"bus", l.bus}, {"p_base", l.p_base}, {"q_base", l.q_base}});
  doc["contingencies"] = json::array();
  for (const auto& g : c.contingencies)
    doc["contingencies"].push_back({{"branch", g.branch},
                                    {"fault_end", g.fault_end == FaultEnd::From ? "from" : "to"},
                                    {"t_fault", g.t_fault},
                                    {"t_clear", g.t_clear}});
  return doc.dump(2);
}

void stamp_branch(ComplexMatrix& y, const GridCase& c, const Branch& br) {
  const auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
  const auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
  const Complex ys = 1.0 / Complex(br.r, br.x);
  const Complex half_charging(0.0, br.b_sh / 2.0);
  const double tap = br.tap;
  y(f, f) += (ys + half_charging) / (tap * tap);
  y(t, t) += ys + half_charging;
  y(f, t) -= ys / tap;
  y(t, f) -= ys / tap;
}

AdmittanceMatrix build_ybus(const GridCase& c) {
  const auto n = static_cast<Eigen::Index>(c.n_buses());
  AdmittanceMatrix out{ComplexMatrix::Zero(n, n)};
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out.y(k, k) += Complex(c.buses[i].g_sh, c.buses[i].b_sh);
  }
  for (const auto& br : c.branches) stamp_branch(out.y, c, br);
  return out;
}

std::size_t fault_bus_index(const GridCase& c, const ContingencySpec& g) {
  if (g.branch >= c.branches.size())
    throw CaseError("unknown branch " + std::to_string(g.branch));
  const auto& br = c.branches[g.branch];
  return c.bus_index(g.fault_end == FaultEnd::From ? br.from_bus : br.to_bus);
}

bool is_connected(const GridCase& c, std::optional<std::size_t> skip_branch) {
  const std::size_t n = c.n_buses();
  if (n == 0) return true;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::size_t components = n;
  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    if (skip_branch && *skip_branch == k) continue;
    const auto a = find(c.bus_index(c.branches[k].from_bus));
    const auto b = find(c.bus_index(c.branches[k].to_bus));
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

FaultPair fault_ybus_pair(const GridCase& c, const ContingencySpec& g) {
  const auto fb = static_cast<Eigen::Index>(fault_bus_index(c, g));
  if (!is_connected(c, g.branch))
    throw IslandedError("tripping branch " + std::to_string(g.branch) + " islands the network");

  FaultPair out{build_ybus(c), {}};
  out.faulted.y(fb, fb) += Complex(kFaultConductance, 0.0);

  // Same as build_ybus on a copy without the branch, minus the copy.
  const auto n = static_cast<Eigen::Index>(c.n_buses());
  out.postfault.y = ComplexMatrix::Zero(n, n);
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out.postfault.y(k, k) += Complex(c.buses[i].g_sh, c.buses[i].b_sh);
  }
  for (std::size_t k = 0; k < c.branches.size(); ++k)
    if (k != g.branch) stamp_branch(out.postfault.y, c, c.branches[k]);
  return out;
}

}  // namespace tscopf
