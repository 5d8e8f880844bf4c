#pragma once

#include "qfbsde/driver.hpp"
#include "qfbsde/forward.hpp"

namespace qfbsde::presets {

// Martingale volatility families (scalar unless noted).
VolatilityFn identity_volatility(std::size_t d);
VolatilityFn scaled_volatility(std::size_t d, double a0);
VolatilityFn sqrt_one_plus_m2();  // a(m) = sqrt(1 + m^2), d = 1

// Forward coefficient families; all fill n x d (sigma) or n (b).
CoeffFn zero_coeff(std::size_t rows, std::size_t cols);
CoeffFn constant_coeff(std::size_t rows, std::size_t cols, double value);
CoeffFn constant_matrix(std::size_t rows, std::size_t cols,
                        std::vector<double> values);
// sigma(x) = scale * x, scalar state; linear SDE
CoeffFn state_linear_sigma(double scale);
// sigma(t,x) = (1 + x) for t >= t_jump, 0 before; scalar
CoeffFn half_window_exp_sigma(double t_jump);
// sigma(x) = s0 (1 + c tanh(x)); smooth nonlinear, scalar
CoeffFn tanh_sigma(double s0, double c);

// Partial-derivative bundles matching the families above.
struct CoeffWithPartials {
  CoeffFn sigma, b, dsigma_dx, dsigma_dm, db_dx, db_dm;
};
CoeffWithPartials state_linear_with_partials(double scale);
CoeffWithPartials half_window_exp_with_partials(double t_jump);
CoeffWithPartials tanh_with_partials(double s0, double c);
CoeffWithPartials constant_with_partials(double sigma0, double b0);

// Driver families.
Driver zero_driver();
Driver linear_driver(double rate);         // f = -rate * y
Driver entropic_driver(double gamma);      // f = -(gamma/2) |v|^2

// Terminal families (evaluated on the first state coordinate).
TerminalCondition constant_terminal(double c);
TerminalCondition identity_terminal();  // unbounded; validation flags it
TerminalCondition linear_clip_terminal(double lo, double hi);
TerminalCondition clipped_call_terminal(double strike, double cap);
TerminalCondition logistic_terminal(double strike, double width, double cap);
TerminalCondition log1p_clip_terminal(double clip);

}  // namespace qfbsde::presets
