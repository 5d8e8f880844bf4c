#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "qfbsde/errors.hpp"

namespace qfbsde {

// Generator f(t, x, m, y, v) where v is the rotated control Z q*.
using DriverFn =
    std::function<double(double t, std::span<const double> x, std::span<const double> m,
                         double y, std::span<const double> v)>;
// Gradient variants fill their output span.
using DriverGradFn =
    std::function<void(double t, std::span<const double> x, std::span<const double> m,
                       double y, std::span<const double> v, std::span<double> out)>;
using DriverYGradFn =
    std::function<double(double t, std::span<const double> x, std::span<const double> m,
                         double y, std::span<const double> v)>;

struct DriverGrowth {
  double gamma = 0.0;      // quadratic z-coefficient magnitude of the (H2) bound
  double kappa = 0.0;      // orthogonal-bracket coefficient
  double eta_bound = 0.0;  // a: bound on the integrated eta process
  double y_growth = 0.0;   // b
  double c_theta = 0.0;    // Lipschitz process bound (metadata only)
  double curvature = 0.0;  // signed z-curvature, fixes the exponential transform sign
  bool lipschitz_yz = true;
};

struct Driver {
  DriverFn f;
  DriverYGradFn df_dy;
  DriverGradFn df_dx, df_dm, df_dv;
  DriverGrowth growth;

  bool has_partials() const { return df_dy && df_dx && df_dm && df_dv; }
};

struct TerminalCondition {
  std::function<double(std::span<const double> x, std::span<const double> m)> F;
  double bound = std::numeric_limits<double>::infinity();
  // Optional gradients for the derivative BSDE.
  std::function<void(std::span<const double> x, std::span<const double> m,
                     std::span<double> out)>
      dF_dx, dF_dm;
};

inline double clamp_level(double y, double K) {
  return y < -K ? -K : (y > K ? K : y);
}

// Generator truncated in y at level K: f_K(., y, .) = f(., rho_K(y), .).
// The counter (when provided) is bumped whenever the clamp is active.
Driver truncate_driver(const Driver& driver, double K_level,
                       std::shared_ptr<std::atomic<long long>> clamp_hits = {});

// U = exp(kappa Y), V = kappa U Z, componentwise over path arrays.
void exp_transform(std::span<const double> Y, std::span<const double> Z,
                   std::size_t d, double kappa, std::span<double> U,
                   std::span<double> V);
// Inverse: Y = log(U)/kappa, Z = V/(kappa U); fails on U <= 0.
void exp_transform_inverse(std::span<const double> U, std::span<const double> V,
                           std::size_t d, double kappa, std::span<double> Y,
                           std::span<double> Z);

// Transformed generator of the exponential change of variables:
//   g(s,x,m,u,v) = kappa rho_{c2}(u) f_K(s,x,m, ln(u v c1)/kappa, v/(kappa (u v c1)))
//                  - |v|^2 / (2 (u v c1))
// The clamp counter (when provided) is bumped whenever u leaves [c1, c2].
Driver transformed_driver_g(const Driver& f_K, double kappa, double c1, double c2,
                            std::shared_ptr<std::atomic<long long>> clamp_hits = {});

}  // namespace qfbsde
