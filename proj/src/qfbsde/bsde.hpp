#pragma once

#include <atomic>
#include <limits>
#include <string>

#include "qfbsde/driver.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/regression.hpp"

namespace qfbsde {

// Generator evaluated along simulated paths. Transformed systems capture
// per-(path, step) context (densities, scale factors) through this hook;
// plain drivers ignore the indices.
using StepDriverFn = std::function<double(
    std::size_t p, std::size_t i, double t, std::span<const double> x,
    std::span<const double> m, double y, std::span<const double> v)>;

StepDriverFn as_step_driver(const Driver& driver);

struct PicardOptions {
  double tol = 1e-8;
  std::size_t max_iter = 25;
  double z_truncation = std::numeric_limits<double>::infinity();
  // Truncation audits measure activity at convergence, not on the early
  // iterates (those start from zero). The solver closes this gate during the
  // sweeps and opens it for the final evaluation pass.
  std::shared_ptr<std::atomic<bool>> audit_gate;
  // Fitted values are projected onto the a-priori value range when one is
  // known (quadratic solves derive it from the growth metadata). Projection
  // counts are reported, not audited: they capture polynomial edge
  // excursions of the regression, not generator truncation.
  double y_fit_lo = -std::numeric_limits<double>::infinity();
  double y_fit_hi = std::numeric_limits<double>::infinity();
};

struct PicardReport {
  std::vector<double> sup_diffs;  // d_k = sup_{p,t} |Y^k - Y^{k-1}|
  double eps_hat = 0.0;           // max d_{k+1}/d_k over k >= 2
  bool converged = false;

  std::vector<double> ratios() const {
    std::vector<double> r;
    for (std::size_t k = 1; k < sup_diffs.size(); ++k)
      r.push_back(sup_diffs[k] / std::max(sup_diffs[k - 1], 1e-300));
    return r;
  }
};

struct TruncationAudit {
  long long y_clamped = 0;
  long long z_clamped = 0;
  long long u_clamped = 0;
  bool any() const { return y_clamped + z_clamped + u_clamped > 0; }
};

struct BsdeSolution {
  std::size_t paths = 0, nodes = 0, d = 1, start_index = 0;
  std::vector<double> Y;       // P x nodes
  std::vector<double> Z;       // P x nodes x d
  std::vector<double> U_orth;  // P x nodes, filled by the orthogonal solve
  PicardReport picard;
  TruncationAudit audit;
  long long value_projections = 0;  // fitted values moved onto the known range
  double max_condition = 0.0;       // worst regression condition across steps
  double value = 0.0;         // mean of Y at the start index
  double value_stderr = 0.0;  // Monte-Carlo error of the start value
  double sup_abs_y = 0.0;     // empirical bound, finite by construction
  double orth_step_residual_mean = 0.0;  // from the orthogonal reconstruction
  // Per-path value samples in Y-space (linearized through the exponential
  // change of variables when one was applied): mean equals `value` at
  // restart-style starts, and pairing them across common-random-number runs
  // gives tight error bars for differences.
  std::vector<double> value_samples;
  std::vector<std::vector<double>> coefficients;  // per step, (1+d) stacked rows

  double y_at(std::size_t p, std::size_t i) const { return Y[p * nodes + i]; }
  const double* z_at(std::size_t p, std::size_t i) const {
    return &Z[(p * nodes + i) * d];
  }
};

// Picard iteration with least-squares Monte-Carlo conditional expectations:
//   Y^{k+1}_i = E[ F + sum_{j>=i} f(t_j, X_j, M_j, Y^k_j, Z^k_j q_j) dC_j | X_i, M_i ]
// and Z from the regression of Y^{k+1}_{i+1} dM_i (q q* dC)^{-1}.
BsdeSolution solve_lipschitz(const StepDriverFn& f, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const PicardOptions& opts,
                             TruncationAudit* audit_out = nullptr);
BsdeSolution solve_lipschitz(const Driver& driver, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const PicardOptions& opts);
// Variant with precomputed per-path terminal values (derivative equations
// carry path-dependent terminal data).
BsdeSolution solve_lipschitz_values(const StepDriverFn& f,
                                    const std::vector<double>& terminal_values,
                                    const ForwardSolution& forward,
                                    const PathBundle& bundle,
                                    const RegressionBasis& basis,
                                    const PicardOptions& opts);

enum class QuadMode { transform, direct };

struct QuadOptions {
  QuadMode mode = QuadMode::transform;
  PicardOptions picard;
  double K_level = 0.0;  // 0 = auto: 2 (||F|| + a)
  double R = 0.0;        // 0 = auto; z-truncation level of the Lipschitz stand-in
  double c1 = 0.0, c2 = 0.0;  // 0 = auto clamps of the transformed driver
  bool strict = true;         // binding truncation escalates to an error
};

// Quadratic-growth solve. Transform mode runs truncation, the exponential
// change of variables, a z-truncated Lipschitz solve, and the inverse change;
// direct mode runs the Picard solver on the z-truncated driver itself.
BsdeSolution solve_quadratic(const Driver& driver, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const QuadOptions& opts);
BsdeSolution solve_quadratic(const StepDriverFn& f, const DriverGrowth& growth,
                             const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const QuadOptions& opts);

// Effective exponent of the exponential change of variables: the bracket
// coefficient when present, otherwise the signed z-curvature of the driver.
double transform_exponent(const DriverGrowth& growth);

// BMO_2 norm estimate restricted to deterministic grid times: the square root
// of the max over t of the per-path max fitted E[int_t^T |q Z*|^2 dC | X_t, M_t].
double bmo_norm_estimate(const BsdeSolution& solution, const PathBundle& bundle,
                         const RegressionBasis& basis,
                         const ForwardSolution* forward = nullptr);

// Discrete martingale-difference check of the backward equation: per grid
// time, mean over paths of Y_t - Y_T - sum f dC - (kappa/2) sum U^2 d<N> and
// the standard error of that mean.
struct TowerCheck {
  std::vector<double> mean;
  std::vector<double> se;
};
TowerCheck tower_residuals(const BsdeSolution& solution, const PathBundle& bundle,
                           const StepDriverFn& f, const ForwardSolution& forward,
                           double kappa = 0.0);

void write_convergence_csv(const PicardReport& report, const std::string& file);

}  // namespace qfbsde
