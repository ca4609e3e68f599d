#pragma once

// Transmission network description and the DC power-flow matrices built from it.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "riskopf/errors.hpp"

namespace riskopf {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct Bus {
  int id = 0;
  double base_load = 0.0;  // MW

  bool operator==(const Bus&) const = default;
};

struct Line {
  int from_bus = 0;
  int to_bus = 0;
  double reactance = 0.0;  // per-unit
  double flow_limit = std::numeric_limits<double>::infinity();  // MW; infinity drops the limit

  bool operator==(const Line&) const = default;
};

/// Conventional unit with cost cost_quad * P^2 + cost_lin * P ($/h, P in MW).
struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double cost_quad = 0.0;
  double cost_lin = 0.0;

  bool operator==(const Generator&) const = default;
};

struct WindFarm {
  int bus = 0;
  double purchase_price = 0.0;  // $/MWh paid for shortfall
  double forecast = 0.0;        // MW
  std::optional<double> capacity;  // MW; caps the committed injection when set

  bool operator==(const WindFarm&) const = default;
};

struct GridCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<WindFarm> wind_farms;
  int reference_bus = 0;
  double base_mva = 100.0;

  bool operator==(const GridCase&) const = default;

  std::size_t bus_count() const { return buses.size(); }

  /// Position of `id` in `buses`. Throws ValidationError for unknown ids.
  std::size_t bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    throw ValidationError("unknown bus id " + std::to_string(id));
  }

  std::size_t reference_index() const { return bus_index(reference_bus); }

  /// Base loads as an M-vector (MW), in bus order.
  Eigen::VectorXd load_vector() const {
    Eigen::VectorXd p(buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) p[i] = buses[i].base_load;
    return p;
  }

  Eigen::VectorXd forecast_vector() const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(buses.size());
    for (const auto& f : wind_farms) w[bus_index(f.bus)] = f.forecast;
    return w;
  }

  Eigen::VectorXd wind_price_vector() const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(buses.size());
    for (const auto& f : wind_farms) c[bus_index(f.bus)] = f.purchase_price;
    return c;
  }

  /// Bus indices hosting a wind farm, in wind_farms order.
  std::vector<std::size_t> wind_bus_indices() const {
    std::vector<std::size_t> idx;
    idx.reserve(wind_farms.size());
    for (const auto& f : wind_farms) idx.push_back(bus_index(f.bus));
    return idx;
  }

  const Generator* generator_at(std::size_t bus_idx) const {
    for (const auto& g : generators)
      if (bus_index(g.bus) == bus_idx) return &g;
    return nullptr;
  }

  const WindFarm* wind_farm_at(std::size_t bus_idx) const {
    for (const auto& f : wind_farms)
      if (bus_index(f.bus) == bus_idx) return &f;
    return nullptr;
  }
};

namespace detail {

inline bool network_connected(const GridCase& grid) {
  const std::size_t m = grid.bus_count();
  if (m == 0) return false;
  std::vector<std::size_t> parent(m);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::size_t components = m;
  for (const auto& l : grid.lines) {
    const auto a = find(grid.bus_index(l.from_bus));
    const auto b = find(grid.bus_index(l.to_bus));
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

}  // namespace detail

/// Checks every GridCase invariant. Throws ValidationError naming the offending
/// record, or StructuralError for an islanded network.
inline void validate(const GridCase& grid) {
  if (grid.buses.empty()) throw ValidationError("buses: list is empty");
  if (!(grid.base_mva > 0.0) || !std::isfinite(grid.base_mva))
    throw ValidationError("base_mva: must be positive and finite");

  std::map<int, std::size_t> seen;
  for (std::size_t i = 0; i < grid.buses.size(); ++i) {
    const auto& b = grid.buses[i];
    const std::string where = "buses[" + std::to_string(i) + "]";
    if (!seen.emplace(b.id, i).second)
      throw ValidationError(where + ".id: duplicate bus id " + std::to_string(b.id));
    if (!(b.base_load >= 0.0) || !std::isfinite(b.base_load))
      throw ValidationError(where + ".load_mw: must be finite and >= 0");
  }
  auto known = [&](int id, const std::string& where) {
    if (!seen.count(id)) throw ValidationError(where + ": unknown bus id " + std::to_string(id));
  };

  for (std::size_t i = 0; i < grid.lines.size(); ++i) {
    const auto& l = grid.lines[i];
    const std::string where = "lines[" + std::to_string(i) + "]";
    known(l.from_bus, where + ".from");
    known(l.to_bus, where + ".to");
    if (l.from_bus == l.to_bus) throw ValidationError(where + ": from and to are the same bus");
    if (!(l.reactance > 0.0) || !std::isfinite(l.reactance))
      throw ValidationError(where + ".x_pu: reactance must be positive");
    if (!(l.flow_limit > 0.0)) throw ValidationError(where + ".limit_mw: must be positive");
  }

  std::map<int, int> gen_count;
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& g = grid.generators[i];
    const std::string where = "generators[" + std::to_string(i) + "]";
    known(g.bus, where + ".bus");
    if (++gen_count[g.bus] > 1)
      throw ValidationError(where + ".bus: more than one generator at bus " + std::to_string(g.bus));
    if (!(g.p_min >= 0.0) || !(g.p_min <= g.p_max) || !std::isfinite(g.p_max))
      throw ValidationError(where + ": need 0 <= pmin_mw <= pmax_mw");
    if (!(g.cost_quad >= 0.0) || !std::isfinite(g.cost_quad))
      throw ValidationError(where + ".c_quad: must be >= 0");
    if (!std::isfinite(g.cost_lin)) throw ValidationError(where + ".d_lin: must be finite");
  }

  std::map<int, int> farm_count;
  for (std::size_t i = 0; i < grid.wind_farms.size(); ++i) {
    const auto& f = grid.wind_farms[i];
    const std::string where = "wind_farms[" + std::to_string(i) + "]";
    known(f.bus, where + ".bus");
    if (++farm_count[f.bus] > 1)
      throw ValidationError(where + ".bus: more than one wind farm at bus " + std::to_string(f.bus));
    if (!(f.purchase_price >= 0.0) || !std::isfinite(f.purchase_price))
      throw ValidationError(where + ".price: must be >= 0");
    if (!(f.forecast >= 0.0) || !std::isfinite(f.forecast))
      throw ValidationError(where + ".forecast_mw: must be >= 0");
    if (f.capacity && !(*f.capacity > 0.0))
      throw ValidationError(where + ".capacity_mw: must be positive");
  }

  known(grid.reference_bus, "reference_bus");
  if (grid.bus_count() > 1 && !detail::network_connected(grid))
    throw StructuralError("network is not connected");
}

/// DC flow model matrices. Flows are `flow * theta` in per-unit; multiply by
/// base_mva for MW.
struct FlowMatrices {
  SparseMatrix incidence;          // A, N x M
  Eigen::VectorXd reactance_diag;  // diagonal of D = diag(1/x_n)
  SparseMatrix flow;               // H = D A
  SparseMatrix admittance;         // B = A^T D A
  double base_mva = 100.0;

  Eigen::MatrixXd reactance_matrix() const { return reactance_diag.asDiagonal(); }
};

inline FlowMatrices build_flow_matrices(const GridCase& grid) {
  validate(grid);
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  const auto n = static_cast<Eigen::Index>(grid.lines.size());

  FlowMatrices fm;
  fm.base_mva = grid.base_mva;
  fm.reactance_diag.resize(n);
  std::vector<Triplet> a;
  a.reserve(2 * grid.lines.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& l = grid.lines[static_cast<std::size_t>(k)];
    a.emplace_back(k, static_cast<Eigen::Index>(grid.bus_index(l.from_bus)), 1.0);
    a.emplace_back(k, static_cast<Eigen::Index>(grid.bus_index(l.to_bus)), -1.0);
    fm.reactance_diag[k] = 1.0 / l.reactance;
  }
  fm.incidence.resize(n, m);
  fm.incidence.setFromTriplets(a.begin(), a.end());
  fm.flow = fm.reactance_diag.asDiagonal() * fm.incidence;
  fm.admittance = SparseMatrix(fm.incidence.transpose()) * fm.flow;
  return fm;
}

/// Line flows in MW for a full M-vector of phase angles (radians).
inline Eigen::VectorXd line_flows(const FlowMatrices& fm, const Eigen::VectorXd& theta) {
  detail::require_dims(theta.size() == fm.flow.cols(),
                       "line_flows: theta has " + std::to_string(theta.size()) + " entries, expected " +
                           std::to_string(fm.flow.cols()));
  return fm.base_mva * (fm.flow * theta);
}

/// Uniform overload: every base load becomes (1 + gamma) * load.
inline GridCase scale_loads(GridCase grid, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw ValidationError("scale_loads: gamma must be finite and >= 0");
  for (auto& b : grid.buses) b.base_load *= (1.0 + gamma);
  return grid;
}

}  // namespace riskopf
