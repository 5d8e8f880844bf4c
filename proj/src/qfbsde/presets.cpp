#include "qfbsde/presets.hpp"

#include <cmath>

namespace qfbsde::presets {

VolatilityFn identity_volatility(std::size_t d) {
  return [d](double, std::span<const double>, std::span<double> out) {
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (r == c) ? 1.0 : 0.0;
  };
}

VolatilityFn scaled_volatility(std::size_t d, double a0) {
  return [d, a0](double, std::span<const double>, std::span<double> out) {
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (r == c) ? a0 : 0.0;
  };
}

VolatilityFn sqrt_one_plus_m2() {
  return [](double, std::span<const double> m, std::span<double> out) {
    out[0] = std::sqrt(1.0 + m[0] * m[0]);
  };
}

CoeffFn zero_coeff(std::size_t rows, std::size_t cols) {
  return [rows, cols](double, std::span<const double>, std::span<const double>,
                      std::span<double> out) {
    for (std::size_t j = 0; j < rows * cols; ++j) out[j] = 0.0;
  };
}

CoeffFn constant_coeff(std::size_t rows, std::size_t cols, double value) {
  return [rows, cols, value](double, std::span<const double>,
                             std::span<const double>, std::span<double> out) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[r * cols + c] = (cols == 1 || r == c) ? value : 0.0;
  };
}

CoeffFn constant_matrix(std::size_t rows, std::size_t cols,
                        std::vector<double> values) {
  if (values.size() != rows * cols)
    throw config_error("constant coefficient matrix has the wrong size");
  return [values](double, std::span<const double>, std::span<const double>,
                  std::span<double> out) {
    for (std::size_t j = 0; j < values.size(); ++j) out[j] = values[j];
  };
}

CoeffFn state_linear_sigma(double scale) {
  return [scale](double, std::span<const double> x, std::span<const double>,
                 std::span<double> out) { out[0] = scale * x[0]; };
}

CoeffFn half_window_exp_sigma(double t_jump) {
  return [t_jump](double t, std::span<const double> x, std::span<const double>,
                  std::span<double> out) {
    out[0] = (t >= t_jump) ? 1.0 + x[0] : 0.0;
  };
}

CoeffFn tanh_sigma(double s0, double c) {
  return [s0, c](double, std::span<const double> x, std::span<const double>,
                 std::span<double> out) { out[0] = s0 * (1.0 + c * std::tanh(x[0])); };
}

CoeffWithPartials state_linear_with_partials(double scale) {
  CoeffWithPartials out;
  out.sigma = state_linear_sigma(scale);
  out.b = zero_coeff(1, 1);
  out.dsigma_dx = constant_coeff(1, 1, scale);
  out.dsigma_dm = zero_coeff(1, 1);
  out.db_dx = zero_coeff(1, 1);
  out.db_dm = zero_coeff(1, 1);
  return out;
}

CoeffWithPartials half_window_exp_with_partials(double t_jump) {
  CoeffWithPartials out;
  out.sigma = half_window_exp_sigma(t_jump);
  out.b = zero_coeff(1, 1);
  out.dsigma_dx = [t_jump](double t, std::span<const double>, std::span<const double>,
                           std::span<double> o) { o[0] = (t >= t_jump) ? 1.0 : 0.0; };
  out.dsigma_dm = zero_coeff(1, 1);
  out.db_dx = zero_coeff(1, 1);
  out.db_dm = zero_coeff(1, 1);
  return out;
}

CoeffWithPartials tanh_with_partials(double s0, double c) {
  CoeffWithPartials out;
  out.sigma = tanh_sigma(s0, c);
  out.b = zero_coeff(1, 1);
  out.dsigma_dx = [s0, c](double, std::span<const double> x, std::span<const double>,
                          std::span<double> o) {
    const double th = std::tanh(x[0]);
    o[0] = s0 * c * (1.0 - th * th);
  };
  out.dsigma_dm = zero_coeff(1, 1);
  out.db_dx = zero_coeff(1, 1);
  out.db_dm = zero_coeff(1, 1);
  return out;
}

CoeffWithPartials constant_with_partials(double sigma0, double b0) {
  CoeffWithPartials out;
  out.sigma = constant_coeff(1, 1, sigma0);
  out.b = constant_coeff(1, 1, b0);
  out.dsigma_dx = zero_coeff(1, 1);
  out.dsigma_dm = zero_coeff(1, 1);
  out.db_dx = zero_coeff(1, 1);
  out.db_dm = zero_coeff(1, 1);
  return out;
}

Driver zero_driver() {
  Driver d;
  d.f = [](double, std::span<const double>, std::span<const double>, double,
           std::span<const double>) { return 0.0; };
  d.df_dy = [](double, std::span<const double>, std::span<const double>, double,
               std::span<const double>) { return 0.0; };
  auto zg = [](double, std::span<const double>, std::span<const double>, double,
               std::span<const double>, std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  d.df_dx = zg;
  d.df_dm = zg;
  d.df_dv = zg;
  return d;
}

Driver linear_driver(double rate) {
  Driver d = zero_driver();
  d.f = [rate](double, std::span<const double>, std::span<const double>, double y,
               std::span<const double>) { return -rate * y; };
  d.df_dy = [rate](double, std::span<const double>, std::span<const double>, double,
                   std::span<const double>) { return -rate; };
  d.growth.eta_bound = std::fabs(rate);
  d.growth.y_growth = 1.0;
  d.growth.lipschitz_yz = true;
  return d;
}

Driver entropic_driver(double gamma) {
  Driver d = zero_driver();
  d.f = [gamma](double, std::span<const double>, std::span<const double>, double,
                std::span<const double> v) {
    double s = 0.0;
    for (double c : v) s += c * c;
    return -0.5 * gamma * s;
  };
  d.df_dv = [gamma](double, std::span<const double>, std::span<const double>, double,
                    std::span<const double> v, std::span<double> o) {
    for (std::size_t c = 0; c < v.size(); ++c) o[c] = -gamma * v[c];
  };
  d.growth.gamma = gamma;
  d.growth.curvature = -gamma;
  d.growth.lipschitz_yz = false;
  return d;
}

TerminalCondition constant_terminal(double c) {
  TerminalCondition t;
  t.F = [c](std::span<const double>, std::span<const double>) { return c; };
  t.bound = std::fabs(c);
  auto zg = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  t.dF_dx = zg;
  t.dF_dm = zg;
  return t;
}

TerminalCondition identity_terminal() {
  TerminalCondition t;
  t.F = [](std::span<const double> x, std::span<const double>) { return x[0]; };
  t.bound = std::numeric_limits<double>::infinity();
  t.dF_dx = [](std::span<const double>, std::span<const double>,
               std::span<double> o) { o[0] = 1.0; };
  t.dF_dm = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  return t;
}

TerminalCondition linear_clip_terminal(double lo, double hi) {
  if (!(lo < hi)) throw config_error("linear clip needs lo < hi");
  TerminalCondition t;
  t.F = [lo, hi](std::span<const double> x, std::span<const double>) {
    return std::min(std::max(x[0], lo), hi);
  };
  t.bound = std::max(std::fabs(lo), std::fabs(hi));
  t.dF_dx = [lo, hi](std::span<const double> x, std::span<const double>,
                     std::span<double> o) {
    o[0] = (x[0] > lo && x[0] < hi) ? 1.0 : 0.0;
  };
  t.dF_dm = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  return t;
}

TerminalCondition clipped_call_terminal(double strike, double cap) {
  if (!(cap > 0.0)) throw config_error("clipped call needs a positive cap");
  TerminalCondition t;
  t.F = [strike, cap](std::span<const double> x, std::span<const double>) {
    return std::min(std::max(x[0] - strike, 0.0), cap);
  };
  t.bound = cap;
  t.dF_dx = [strike, cap](std::span<const double> x, std::span<const double>,
                          std::span<double> o) {
    o[0] = (x[0] > strike && x[0] < strike + cap) ? 1.0 : 0.0;
  };
  t.dF_dm = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  return t;
}

TerminalCondition logistic_terminal(double strike, double width, double cap) {
  if (!(width > 0.0) || !(cap > 0.0))
    throw config_error("logistic payoff needs positive width and cap");
  TerminalCondition t;
  t.F = [strike, width, cap](std::span<const double> x, std::span<const double>) {
    return cap / (1.0 + std::exp(-(x[0] - strike) / width));
  };
  t.bound = cap;
  t.dF_dx = [strike, width, cap](std::span<const double> x, std::span<const double>,
                                 std::span<double> o) {
    const double e = std::exp(-(x[0] - strike) / width);
    o[0] = cap * e / (width * (1.0 + e) * (1.0 + e));
  };
  t.dF_dm = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  return t;
}

TerminalCondition log1p_clip_terminal(double clip) {
  if (!(clip > 0.0)) throw config_error("log payoff clip must be positive");
  TerminalCondition t;
  t.F = [clip](std::span<const double> x, std::span<const double>) {
    const double arg = std::max(1.0 + x[0], std::exp(-clip));
    return std::min(std::log(arg), clip);
  };
  t.bound = clip;
  t.dF_dx = [clip](std::span<const double> x, std::span<const double>,
                   std::span<double> o) {
    const double arg = 1.0 + x[0];
    o[0] = (arg > std::exp(-clip) && std::log(arg) < clip) ? 1.0 / arg : 0.0;
  };
  t.dF_dm = [](std::span<const double>, std::span<const double>,
               std::span<double> o) {
    for (auto& v : o) v = 0.0;
  };
  return t;
}

}  // namespace qfbsde::presets
