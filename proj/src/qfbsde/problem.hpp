#pragma once

#include "qfbsde/mrp.hpp"

namespace qfbsde {

// A complete forward-backward problem definition: everything needed to
// simulate a basis, run the forward process and solve the backward equation.
struct ProblemSpec {
  enum class SolveKind { lipschitz, quadratic, quadratic_orthogonal };

  MartingaleModel model;
  TimeGrid grid;
  SdeCoefficients coeffs;
  std::vector<double> x0;
  Driver driver;
  TerminalCondition terminal;
  RegressionBasis basis;
  QuadOptions quad;
  SolveKind kind = SolveKind::lipschitz;
  double kappa = 0.0;  // bracket coefficient of the orthogonal penalty
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
};

// Bracket level carried into a restart at time t so the restarted clock
// matches the running system's clock. Exact for the Brownian kind; for
// diffusion martingales the level is the constant-volatility proxy
// a(t,m) a(t,m)* t (restarts at t = 0 are always exact).
std::vector<double> restart_bracket_level(const MartingaleModel& model, double t,
                                          std::span<const double> m);

// Generates the bundle and forward solution for a restart of the problem at
// (t, x, m) and runs the configured solver.
struct NodeSolve {
  PathBundle bundle;
  ForwardSolution forward;
  BsdeSolution solution;
};
NodeSolve solve_problem_at(const ProblemSpec& spec, double t,
                           std::span<const double> x, std::span<const double> m,
                           std::uint64_t seed);

inline NodeSolve solve_problem(const ProblemSpec& spec) {
  return solve_problem_at(spec, 0.0, spec.x0,
                          spec.model.m0.empty()
                              ? std::vector<double>(spec.model.d, 0.0)
                              : spec.model.m0,
                          spec.seed);
}

}  // namespace qfbsde
