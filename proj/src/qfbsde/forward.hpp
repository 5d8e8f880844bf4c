#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "qfbsde/martingale.hpp"

namespace qfbsde {

// sigma(t, x, m) fills n x d row-major; b(t, x, m) fills n.
using CoeffFn = std::function<void(double t, std::span<const double> x,
                                   std::span<const double> m, std::span<double> out)>;

struct SdeCoefficients {
  std::size_t n = 1;
  std::size_t d = 1;
  CoeffFn sigma;
  CoeffFn b;

  // Partial derivatives, required for variational flows.
  // dsigma_dx: [i*d*n + a*n + j] = d sigma_{ia} / d x_j
  // dsigma_dm: [i*d*d + a*d + k] = d sigma_{ia} / d m_k
  // db_dx:     [i*n + j],  db_dm: [i*d + k]
  CoeffFn dsigma_dx;
  CoeffFn dsigma_dm;
  CoeffFn db_dx;
  CoeffFn db_dm;

  double lipschitz = 0.0;  // metadata only

  bool has_partials() const { return dsigma_dx && dsigma_dm && db_dx && db_dm; }
};

struct ForwardStart {
  std::size_t index = 0;
  std::vector<double> x;
};

struct ForwardSolution {
  std::size_t paths = 0;
  std::size_t n = 1;
  std::size_t d = 1;
  std::size_t nodes = 0;
  ForwardStart start;
  std::vector<double> X;   // P x nodes x n
  std::vector<double> Dx;  // P x nodes x n x n, identity at start
  std::vector<double> Dm;  // P x nodes x n x d, zero at start

  const double* x_at(std::size_t p, std::size_t i) const {
    return &X[(p * nodes + i) * n];
  }
  bool has_flows() const { return !Dx.empty(); }
};

// Euler scheme X_{i+1} = X_i + sigma dM_i + b dC_i on [t_start, T].
// A nonzero m_offset shifts the martingale argument additively (the bumped
// system m -> m + h shares the bundle's increments).
ForwardSolution simulate_forward(const SdeCoefficients& coeffs,
                                 const PathBundle& bundle, const ForwardStart& start,
                                 std::span<const double> m_offset = {});

// Euler scheme for the linear variational systems dX/dx and dX/dm driven by
// the same increments as the forward pass.
void simulate_variational(const SdeCoefficients& coeffs, const PathBundle& bundle,
                          ForwardSolution& forward);

struct Bump {
  std::size_t coordinate = 0;  // < n bumps x, >= n bumps m component (coordinate - n)
  double h = 0.0;
};

// Re-simulates from perturbed initial data with identical noise increments.
ForwardSolution bump_restart(const SdeCoefficients& coeffs, const PathBundle& bundle,
                             const ForwardStart& start, const Bump& bump);

// Max relative disagreement between supplied partials and central finite
// differences at one sample point; used by configuration audits.
double spot_check_partials(const SdeCoefficients& coeffs, double t,
                           std::span<const double> x, std::span<const double> m,
                           double h = 1e-5);

}  // namespace qfbsde
