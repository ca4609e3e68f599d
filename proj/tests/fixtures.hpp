#pragma once

// Small hand-built networks and random instances shared by the tests.

#include <algorithm>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskopf/grid_model.hpp"
#include "riskopf/io.hpp"
#include "riskopf/scenario.hpp"

#ifndef RISKOPF_DATA_DIR
#define RISKOPF_DATA_DIR "data"
#endif

namespace riskopf::fixture {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline std::string data_path(const std::string& name) { return std::string(RISKOPF_DATA_DIR) + "/" + name; }

inline GridCase bundled_case() { return load_case(data_path("ieee30.json")); }

inline Eigen::MatrixXd bundled_covariance(const GridCase& grid) {
  return read_covariance(data_path("ieee30_wind_cov.csv"), grid);
}

/// 1 -> 2 with x = 0.5, generator at 1, load at 2.
inline GridCase two_bus() {
  GridCase g;
  g.buses = {{1, 0.0}, {2, 50.0}};
  g.lines = {{1, 2, 0.5, kInf}};
  g.generators = {{1, 0.0, 100.0, 0.01, 2.0}};
  g.reference_bus = 1;
  return g;
}

/// One bus, one quadratic generator, no lines.
inline GridCase single_bus(double c, double d, double load) {
  GridCase g;
  g.buses = {{1, load}};
  g.generators = {{1, 0.0, 1000.0, c, d}};
  g.reference_bus = 1;
  return g;
}

/// Triangle with a cheap unit at bus 1, an expensive unit at bus 2 and the
/// load at bus 3. The 1-3 line limit decides whether the network congests.
inline GridCase three_bus(double limit_13 = 60.0) {
  GridCase g;
  g.buses = {{1, 0.0}, {2, 20.0}, {3, 150.0}};
  g.lines = {{1, 2, 0.1, kInf}, {2, 3, 0.1, kInf}, {1, 3, 0.1, limit_13}};
  g.generators = {{1, 0.0, 250.0, 0.01, 1.0}, {2, 0.0, 250.0, 0.02, 5.0}};
  g.reference_bus = 1;
  return g;
}

/// Connected random network with up to `max_buses` buses, at most one
/// generator and one wind farm per bus, and enough generation for the load.
inline GridCase random_grid(std::mt19937_64& rng, int max_buses = 6, int max_farms = 3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int nb = pick(2, max_buses);
  GridCase g;
  for (int i = 1; i <= nb; ++i) g.buses.push_back({i, 60.0 * u(rng)});
  std::vector<std::pair<int, int>> edges;
  for (int i = 2; i <= nb; ++i) edges.emplace_back(pick(1, i - 1), i);
  for (int extra = pick(0, 2); extra > 0; --extra) {
    const int a = pick(1, nb), b = pick(1, nb);
    if (a == b) continue;
    const auto e = std::make_pair(std::min(a, b), std::max(a, b));
    if (std::find(edges.begin(), edges.end(), e) != edges.end()) continue;
    edges.push_back(e);
  }
  for (const auto& [a, b] : edges) g.lines.push_back({a, b, 0.05 + 0.45 * u(rng), u(rng) < 0.5 ? kInf : 80.0 + 150.0 * u(rng)});

  std::vector<int> order(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) order[static_cast<std::size_t>(i)] = i + 1;
  std::shuffle(order.begin(), order.end(), rng);
  const int ng = pick(1, std::min(3, nb));
  double load = 0.0;
  for (const auto& b : g.buses) load += b.base_load;
  for (int k = 0; k < ng; ++k)
    g.generators.push_back({order[static_cast<std::size_t>(k)], 0.0, 1.5 * load / ng + 20.0, 0.005 + 0.045 * u(rng),
                            1.0 + 4.0 * u(rng)});
  std::shuffle(order.begin(), order.end(), rng);
  const int nf = pick(1, std::min(max_farms, nb));
  for (int k = 0; k < nf; ++k) g.wind_farms.push_back({order[static_cast<std::size_t>(k)], 1.0 + 7.0 * u(rng), 20.0 * u(rng), {}});
  g.reference_bus = pick(1, nb);
  validate(g);
  return g;
}

/// Correlated truncated-Gaussian scenarios around the grid's forecast.
inline ScenarioSet random_scenarios(const GridCase& grid, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  const auto idx = grid.wind_bus_indices();
  const double rho = 0.8 * u(rng);
  std::vector<double> sd;
  for (std::size_t k = 0; k < idx.size(); ++k) sd.push_back(1.0 + 4.0 * u(rng));
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b)
      cov(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b])) = (a == b ? 1.0 : rho) * sd[a] * sd[b];
  return sample_scenarios(grid.forecast_vector(), cov, n, rng());
}

}  // namespace riskopf::fixture
