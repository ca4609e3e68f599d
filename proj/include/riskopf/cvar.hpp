#pragma once

// Value-at-risk / conditional value-at-risk over loss samples, and the
// wind-shortfall transaction cost used as the loss.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskopf/errors.hpp"

namespace riskopf {

/// Probability level beta, strictly inside (0, 1).
class RiskLevel {
public:
  explicit RiskLevel(double beta) : beta_(beta) {
    if (!(beta > 0.0 && beta < 1.0))
      throw ValidationError("beta must lie in (0, 1), got " + std::to_string(beta));
  }
  double value() const { return beta_; }
  double tail_mass() const { return 1.0 - beta_; }

private:
  double beta_;
};

struct RiskResult {
  double var = 0.0;
  double cvar = 0.0;
};

namespace detail {

inline void require_samples(std::span<const double> losses, const char* who) {
  if (losses.empty()) throw ValidationError(std::string(who) + ": loss sample set is empty");
}

}  // namespace detail

/// Fraction of samples with value <= eta.
inline double empirical_cdf_at(std::span<const double> losses, double eta) {
  detail::require_samples(losses, "empirical_cdf_at");
  const auto below = std::count_if(losses.begin(), losses.end(), [eta](double l) { return l <= eta; });
  return static_cast<double>(below) / static_cast<double>(losses.size());
}

/// Sample-average auxiliary function: eta + sum_s [L_s - eta]^+ / (N (1 - beta)).
/// Convex and piecewise linear in eta; its minimum over eta is the sample CVaR.
inline double f_beta_hat(std::span<const double> losses, double eta, RiskLevel beta) {
  detail::require_samples(losses, "f_beta_hat");
  double excess = 0.0;
  for (double l : losses) excess += std::max(l - eta, 0.0);
  return eta + excess / (static_cast<double>(losses.size()) * beta.tail_mass());
}

/// Closed-form minimization of f_beta_hat over eta.
///
/// On sorted samples the right-derivative of f_beta_hat past the k-th order
/// statistic is 1 - (N - k) / (N (1 - beta)), which first becomes
/// nonnegative at k* = ceil(N beta). The minimizer set is therefore
/// [L_(k*), L_(k*+1)] when N beta is integral and {L_(k*)} otherwise; var is
/// its left endpoint and cvar the function value there.
inline RiskResult var_cvar_oracle(std::span<const double> losses, RiskLevel beta) {
  detail::require_samples(losses, "var_cvar_oracle");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::stable_sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // Guard against n * beta landing a hair above an integer in floating point.
  const double target = n * beta.value() - 1e-9;
  auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(target)));
  k = std::min(k, sorted.size());
  const double eta = sorted[k - 1];
  double tail = 0.0;
  for (std::size_t i = k; i < sorted.size(); ++i) tail += sorted[i] - eta;
  return {eta, eta + tail / (n * beta.tail_mass())};
}

/// Per-bus shortfall cost T_m: convex and nondecreasing on [0, inf).
template <typename F>
concept ShortfallCost = requires(const F& f, double shortfall) {
  { f(shortfall) } -> std::convertible_to<double>;
};

/// T_m(x) = price * x, the only form wired into the dispatch programs.
struct LinearShortfallCost {
  double price = 0.0;
  double operator()(double shortfall) const { return price * shortfall; }
};

/// sum_m T_m([p_w_m - w_m]^+) for arbitrary per-bus cost functions.
template <ShortfallCost Cost>
double transaction_cost(const Eigen::VectorXd& p_w, const Eigen::VectorXd& w, std::span<const Cost> costs) {
  detail::require_dims(p_w.size() == w.size() && static_cast<std::size_t>(p_w.size()) == costs.size(),
                       "transaction_cost: p_w, w and costs must have equal length");
  double total = 0.0;
  for (Eigen::Index m = 0; m < p_w.size(); ++m)
    total += costs[static_cast<std::size_t>(m)](std::max(p_w[m] - w[m], 0.0));
  return total;
}

/// Linear transaction cost: sum_m price_m * [p_w_m - w_m]^+. Surplus is free.
inline double transaction_cost(const Eigen::VectorXd& p_w, const Eigen::VectorXd& w, const Eigen::VectorXd& prices) {
  detail::require_dims(p_w.size() == w.size() && p_w.size() == prices.size(),
                       "transaction_cost: p_w, w and prices must have equal length");
  if ((prices.array() < 0.0).any()) throw ValidationError("transaction_cost: negative purchase price");
  return (prices.array() * (p_w - w).array().max(0.0)).sum();
}

/// Transaction cost of a fixed commitment under each row of `scenarios` (N_s x M).
inline std::vector<double> scenario_transaction_costs(const Eigen::VectorXd& p_w, const Eigen::MatrixXd& scenarios,
                                                      const Eigen::VectorXd& prices) {
  detail::require_dims(scenarios.cols() == p_w.size(), "scenario_transaction_costs: column count mismatch");
  std::vector<double> out(static_cast<std::size_t>(scenarios.rows()));
  for (Eigen::Index s = 0; s < scenarios.rows(); ++s)
    out[static_cast<std::size_t>(s)] = transaction_cost(p_w, scenarios.row(s).transpose(), prices);
  return out;
}

}  // namespace riskopf
