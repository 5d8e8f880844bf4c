#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qfbsde/errors.hpp"

namespace qfbsde {

struct RegressionBasis {
  std::size_t degree = 3;
  double ridge = 1e-8;  // scaled by trace(Gram)/k; the intercept is never penalized
};

// Fills the state variables of one sample row.
using RowFn = std::function<void(std::size_t p, double* out)>;

// Polynomial ridge regression on standardized state variables. Standardizing
// is an affine reparametrization of the monomial span, so fitted values are
// unchanged; it keeps the Gram matrix conditioned. All reductions run over
// fixed-size sample blocks in index order, so results do not depend on the
// worker count.
class PolyFit {
public:
  PolyFit(std::size_t vars, RegressionBasis basis);

  std::size_t feature_count() const { return k_; }
  std::size_t var_count() const { return vars_; }

  // Moments, Gram matrix and Cholesky factor; call once per design.
  void prepare(std::size_t samples, const RowFn& rows);
  // Appends one coefficient vector per target, reusing the cached factor.
  // Returns the index of the first new target.
  std::size_t solve_targets(std::size_t samples, const RowFn& rows,
                            std::span<const double* const> targets);

  void expand(const double* vals, double* phi) const;
  double fitted(const double* vals, std::size_t target = 0) const;
  void fitted_all(const double* vals, double* out) const;

  // Plain prediction standard error s * sqrt(phi^T G^{-1} phi) for the ridged
  // Gram; requires compute_residual_rms for the target first.
  double compute_residual_rms(std::size_t samples, const RowFn& rows,
                              const double* target, std::size_t target_index);
  double prediction_se(const double* vals, std::size_t target = 0) const;

  std::size_t target_count() const { return coeffs_.size(); }
  const std::vector<double>& coefficients(std::size_t target = 0) const;
  double condition_hint() const { return condition_hint_; }

private:
  std::size_t vars_;
  RegressionBasis basis_;
  std::size_t k_;
  std::size_t samples_ = 0;
  std::vector<std::uint8_t> exponents_;  // k x vars
  std::vector<double> mean_, inv_std_;
  std::vector<double> chol_;  // Cholesky factor of the ridged Gram
  std::vector<std::vector<double>> coeffs_;
  std::vector<double> residual_rms_;
  double condition_hint_ = 1.0;
  bool prepared_ = false;
};

// Conditional-expectation regression: fits targets on polynomial features of
// the state vectors and returns per-sample fitted values.
struct RegressOutput {
  std::vector<double> coefficients;
  std::vector<double> fitted;
  double residual_rms = 0.0;
};
RegressOutput regress_conditional(std::span<const double> states, std::size_t vars,
                                  std::span<const double> targets,
                                  const RegressionBasis& basis);

}  // namespace qfbsde
