#pragma once

// Correlated wind-power scenarios w_s = max(forecast + n_s, 0), n_s ~ N(0, Sigma).
//
// Randomness: std::mt19937_64 seeded with the caller's 64-bit seed, normals
// drawn with std::normal_distribution<double>, one draw per wind bus per
// scenario in row-major order. Output is bit-reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "riskopf/errors.hpp"
#include "riskopf/grid_model.hpp"

namespace riskopf {

/// Hourly wind output of W farms (T x W, MW), one column per farm bus.
struct WindHistory {
  Eigen::MatrixXd records;
  std::vector<int> farm_buses;
};

struct ScenarioSet {
  Eigen::MatrixXd samples;     // N_s x M, MW
  Eigen::VectorXd forecast;    // M, MW
  std::uint64_t seed = 0;
  Eigen::MatrixXd covariance;  // M x M, MW^2

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index bus_count() const { return samples.cols(); }
};

/// Sample covariance (divide by T - 1) of the history's deviations from its
/// column means, embedded into the grid's M-bus index space. No regularization.
inline Eigen::MatrixXd estimate_covariance(const WindHistory& history, const GridCase& grid) {
  const auto t = history.records.rows();
  if (t < 2) throw ValidationError("estimate_covariance: need at least 2 records, got " + std::to_string(t));
  detail::require_dims(static_cast<std::size_t>(history.records.cols()) == history.farm_buses.size(),
                       "estimate_covariance: column count does not match farm bus list");
  if ((history.records.array() < 0.0).any()) throw ValidationError("estimate_covariance: negative wind record");

  const Eigen::RowVectorXd mean = history.records.colwise().mean();
  const Eigen::MatrixXd centered = history.records.rowwise() - mean;
  const Eigen::MatrixXd block = (centered.transpose() * centered) / static_cast<double>(t - 1);

  std::vector<Eigen::Index> at;
  for (int id : history.farm_buses) at.push_back(static_cast<Eigen::Index>(grid.bus_index(id)));
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < at.size(); ++i)
    for (std::size_t j = 0; j < at.size(); ++j)
      cov(at[i], at[j]) = block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return cov;
}

namespace detail {

/// Indices with positive variance; only these receive noise.
inline std::vector<Eigen::Index> noisy_indices(const Eigen::MatrixXd& cov) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < cov.rows(); ++i)
    if (cov(i, i) > 0.0) idx.push_back(i);
  return idx;
}

/// Lower Cholesky factor of cov[idx, idx] + eps I, eps = 1e-9 * max diagonal.
inline Eigen::MatrixXd noise_factor(const Eigen::MatrixXd& cov, const std::vector<Eigen::Index>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd block(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) block(i, j) = cov(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  if (k == 0) return block;
  const double eps = 1e-9 * block.diagonal().maxCoeff();
  block.diagonal().array() += eps;
  Eigen::LLT<Eigen::MatrixXd> llt(block);
  if (llt.info() != Eigen::Success) throw ValidationError("sample_scenarios: covariance is not positive semidefinite");
  return llt.matrixL();
}

}  // namespace detail

inline ScenarioSet sample_scenarios(const Eigen::VectorXd& forecast, const Eigen::MatrixXd& covariance, Eigen::Index n_s,
                                    std::uint64_t seed) {
  const auto m = forecast.size();
  detail::require_dims(covariance.rows() == m && covariance.cols() == m,
                       "sample_scenarios: covariance must be " + std::to_string(m) + "x" + std::to_string(m));
  if (n_s < 1) throw ValidationError("sample_scenarios: n_s must be >= 1");
  if ((forecast.array() < 0.0).any() || !forecast.allFinite())
    throw ValidationError("sample_scenarios: forecast must be finite and >= 0");
  if (!covariance.allFinite()) throw ValidationError("sample_scenarios: covariance has non-finite entries");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ValidationError("sample_scenarios: covariance is not symmetric");
  if ((covariance.diagonal().array() < 0.0).any())
    throw ValidationError("sample_scenarios: covariance has a negative variance");

  const auto idx = detail::noisy_indices(covariance);
  const Eigen::MatrixXd factor = detail::noise_factor(covariance, idx);
  const auto k = static_cast<Eigen::Index>(idx.size());

  ScenarioSet set;
  set.forecast = forecast;
  set.seed = seed;
  set.covariance = covariance;
  set.samples.resize(n_s, m);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(k);
  for (Eigen::Index s = 0; s < n_s; ++s) {
    for (Eigen::Index j = 0; j < k; ++j) z[j] = normal(rng);
    const Eigen::VectorXd noise = factor.triangularView<Eigen::Lower>() * z;
    Eigen::VectorXd row = forecast;
    for (Eigen::Index j = 0; j < k; ++j) row[idx[static_cast<std::size_t>(j)]] += noise[j];
    set.samples.row(s) = row.cwiseMax(0.0).transpose();
  }
  return set;
}

}  // namespace riskopf
