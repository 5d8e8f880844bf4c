#pragma once

#include <string>

#include "qfbsde/problem.hpp"

namespace qfbsde {

// Node estimate u(t,x,m) = Y_t^{t,x,m} from a restarted solve on fresh noise.
struct NodeValue {
  double u = 0.0;
  double se = 0.0;
  // Per-path value samples; identical seeds give pathwise-paired samples
  // across bumped solves (common random numbers).
  std::vector<double> samples;
};

NodeValue estimate_u_node(const ProblemSpec& spec, double t,
                          std::span<const double> x, std::span<const double> m,
                          std::uint64_t seed);

struct PartialEstimate {
  double d2u = 0.0, d2u_se = 0.0;  // d/dx
  double d3u = 0.0, d3u_se = 0.0;  // d/dm
  bool noise_dominated = false;
};

// Central differences of estimate_u with common random numbers across the
// four bumped solves (scalar state and martingale).
PartialEstimate finite_diff_partials(const ProblemSpec& spec, double t, double x,
                                     double m, double h, std::uint64_t seed);

// Grid estimate of u with finite-difference partials on every node.
struct MarkovSurface {
  std::vector<double> ts, xs, ms;
  std::vector<double> u, se, d2u, d3u, d2u_se, d3u_se;  // ts x xs x ms tensors
  double bump_h = 0.0;

  std::size_t index(std::size_t it, std::size_t ix, std::size_t im) const {
    return (it * xs.size() + ix) * ms.size() + im;
  }
  // Multilinear interpolation of the partials over the (x, m) box of the
  // t-slice; false when (x, m) leaves the box (extrapolation disabled).
  bool interpolate_partials(std::size_t it, double x, double m, double& d2,
                            double& d3) const;
};

MarkovSurface build_surface(const ProblemSpec& spec, const std::vector<double>& ts,
                            const std::vector<double>& xs,
                            const std::vector<double>& ms, double h,
                            std::uint64_t seed);

void write_surface_csv(const MarkovSurface& surface, const std::string& file);

// Derivative-equation estimate of (d2u, d3u) at a node: solves the linear
// backward equation satisfied by dY/dx and dY/dm, driven by the variational
// flows, with the same Picard machinery.
PartialEstimate derivative_bsde_solve(const ProblemSpec& spec, double t, double x,
                                      double m, std::uint64_t seed);

// Control representation check along solved paths: residual between the
// regression Z and d2u sigma + d3u with partials interpolated off a surface.
struct RepresentationReport {
  struct Cell {
    double t, x, m, z, pred, resid;
  };
  std::vector<Cell> cells;
  double median_rel = 0.0;            // median |resid| / (|Z| + delta)
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;  // quantiles of |resid|
  double median_abs_d3u_term = 0.0;
  std::size_t excluded = 0;
};

RepresentationReport representation_check(const BsdeSolution& solution,
                                          const ForwardSolution& forward,
                                          const PathBundle& bundle,
                                          const MarkovSurface& surface,
                                          const SdeCoefficients& coeffs,
                                          std::size_t max_cells = 20000);

void write_representation_csv(const RepresentationReport& report,
                              const std::string& file);

// Bracket identity <Y, M^(i)>_s - sum Z q q* dC: per-path sup over time of the
// residual, and its median across paths.
struct BracketCheck {
  std::vector<double> sup_residual;
  double median_sup = 0.0;
};
BracketCheck bracket_check(const BsdeSolution& solution, const PathBundle& bundle);

// Conditional-expectation identity for the half-window stochastic-exponential
// forward with log payoff: E[log(1+X_T) | F_t] equals
// log(1+X_t) - E[M_T^2 - M_{max(t,T/2)}^2 | M_t] / 2. Closed form on the
// Brownian basis, nested Monte Carlo on a diffusion basis.
struct OracleValue {
  double value = 0.0;
  double se = 0.0;
};
OracleValue half_window_log_oracle(const MartingaleModel& model, double T, double t,
                                   double x, double m, std::size_t oracle_paths,
                                   std::uint64_t seed);

}  // namespace qfbsde
