#pragma once

#include "qfbsde/bsde.hpp"

namespace qfbsde {

// Two-block reformulation of the backward equation under an orthogonal
// component: the pair (M, N) becomes the driving martingale, the clock turns
// into arctan(sum <M_i> + <N>), and the bracket penalty (kappa/2) d<L,L> is
// absorbed into the transformed generator h.
struct MrpTransform {
  PathBundle augmented;  // d+1 dimensional basis (M, N) with its own clock and q
  double kappa = 0.0;

  // Per (path, step): split of the augmented clock between the M and N parts.
  // phi1 + phi2 = 1 exactly on every step.
  std::vector<double> phi1, phi2;
  // Per (path, step) scales making the generator integral exact at the
  // discrete level: f_scale = dC/dC~ and z_scale maps the augmented rotated
  // control back onto Z q*.
  std::vector<double> f_scale, z_scale;

  StepDriverFn h;  // generator of the transformed equation

  // The block density [[q sqrt(phi1), 0], [0, sqrt(phi2)]] at (p, i),
  // row-major (d+1) x (d+1).
  void q_tilde(std::size_t p, std::size_t i, double* out) const;
  std::size_t base_d = 1;
};

// Plain (M, N) pair promoted to a (d+1)-dimensional bundle: block brackets,
// the combined clock, and its canonical density.
PathBundle augment_orthogonal(const PathBundle& bundle);

MrpTransform mrp_transform(const PathBundle& bundle, const StepDriverFn& f,
                           double kappa);
MrpTransform mrp_transform(const PathBundle& bundle, const Driver& driver,
                           double kappa);

// Solves the original equation with the orthogonal component by running the
// quadratic solver on the transformed two-block system and splitting the
// control into (Z, U). The per-step residual of the original telescoped
// equation is reported on the solution.
BsdeSolution solve_quadratic_with_orthogonal(const StepDriverFn& f,
                                             const DriverGrowth& growth,
                                             const TerminalCondition& terminal,
                                             const ForwardSolution& forward,
                                             const PathBundle& bundle, double kappa,
                                             const RegressionBasis& basis,
                                             const QuadOptions& opts);
BsdeSolution solve_quadratic_with_orthogonal(const Driver& driver,
                                             const TerminalCondition& terminal,
                                             const ForwardSolution& forward,
                                             const PathBundle& bundle, double kappa,
                                             const RegressionBasis& basis,
                                             const QuadOptions& opts);

// Mean absolute per-(path, step) residual of the discrete original equation
//   Y_{i+1} - Y_i - Z dM - U dN + f dC + (kappa/2) U^2 d<N>.
double orth_equation_residual(const BsdeSolution& solution, const PathBundle& bundle,
                              const StepDriverFn& f, const ForwardSolution& forward,
                              double kappa);

}  // namespace qfbsde
