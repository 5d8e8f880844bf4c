#pragma once

#include <string>

#include "qfbsde/problem.hpp"

namespace qfbsde {

// Market with a non-tradable risk process R and k traded assets whose returns
// load on the martingale M; external risk may enter R through the orthogonal
// component N.
struct MarketSpec {
  std::size_t n = 1;  // risk process dimension
  std::size_t d = 1;  // martingale dimension
  std::size_t k = 1;  // asset count, k <= d excludes arbitrage
  CoeffFn sigma;      // risk loading on M: n x d, args (t, r, m)
  CoeffFn b;          // risk drift against the clock: n
  CoeffFn sigma_orth; // optional risk loading on N: n x 1
  CoeffFn beta;       // asset loadings: k x d
  CoeffFn alpha;      // asset drifts: k
  double kappa = 1.0; // risk aversion
  TerminalCondition payoff;  // bounded F(r), evaluated on the risk state
  bool m_free_independent = false;  // reduced delta formula applies

  void validate() const;
};

struct HedgeProblem {
  MartingaleModel model;
  TimeGrid grid;
  MarketSpec market;
  RegressionBasis basis;
  QuadOptions quad;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
};

// Minimal market price of risk: theta solves beta q q* theta = alpha; written
// in rotated coordinates theta_rot = q theta = (beta q)+ alpha.
void utility_theta_rotated(const MarketSpec& market, double t,
                           std::span<const double> r, std::span<const double> m,
                           const double* q, double* theta_rot);

// Exponential-utility generator in rotated-control form:
//   f(t,r,m,v) = -<v, theta_rot> - |theta_rot|^2 / (2 kappa).
double utility_driver_value(const MarketSpec& market, double t,
                            std::span<const double> r, std::span<const double> m,
                            const double* q, std::span<const double> v);

struct UtilityDriver {
  StepDriverFn f;  // bound to the bundle's per-step density
  DriverGrowth growth;
};
UtilityDriver build_utility_driver(const MarketSpec& market,
                                   const PathBundle& bundle);

// Euler simulation of the risk process R on the bundle, including the
// optional orthogonal loading: dR = sigma dM + sigma_orth dN + b dC.
ForwardSolution simulate_risk(const MarketSpec& market, const PathBundle& bundle,
                              std::span<const double> r0, std::size_t start_index);

struct PriceResult {
  double price = 0.0;
  double se = 0.0;  // paired over common random numbers
  double y_claim = 0.0, y_zero = 0.0;
  std::vector<double> samples;  // per-path price samples (claim minus zero)
};

// Indifference price p = Y^F - Y^0 from two solves on the same bundle.
PriceResult indifference_price(const HedgeProblem& problem, double t,
                               std::span<const double> r, std::span<const double> m,
                               std::uint64_t seed);

struct PricePartials {
  double d2p = 0.0, d2p_se = 0.0;
  double d3p = 0.0, d3p_se = 0.0;
};
// Central differences of the indifference price with common random numbers
// across bumps and across the claim/zero pair (scalar r and m).
PricePartials price_partials(const HedgeProblem& problem, double t, double r,
                             double m, double h, std::uint64_t seed);

// Delta formula: [d2p sigma + d3p] q* beta* (beta beta*)^{-1}; the reduced
// form drops the d3p term for m-free independent-increment markets.
std::vector<double> delta_hedge(const MarketSpec& market, double t,
                                std::span<const double> r, std::span<const double> m,
                                const double* q, std::span<const double> d2p,
                                std::span<const double> d3p);

using DeltaPolicy = std::function<void(double t, std::span<const double> r,
                                       std::span<const double> m,
                                       std::span<double> out_k)>;

struct HedgeReport {
  double price = 0.0;
  std::vector<double> delta;
  std::vector<double> pnl;  // hedged terminal wealth minus payoff
  double pnl_mean = 0.0;
  double pnl_var_hedged = 0.0;
  double pnl_var_unhedged = 0.0;
  double certainty_equiv_hedged = 0.0;
  double certainty_equiv_unhedged = 0.0;
};

// Terminal wealth x0 + sum lambda (beta dM + alpha dC) - F(R_T) against the
// zero-hedge baseline.
HedgeReport hedge_backtest(const MarketSpec& market, const DeltaPolicy& policy,
                           const PathBundle& bundle, const ForwardSolution& risk,
                           double initial_wealth);

void write_hedge_csv(const HedgeReport& report, double t, double r, double m,
                     const std::string& file);

}  // namespace qfbsde
