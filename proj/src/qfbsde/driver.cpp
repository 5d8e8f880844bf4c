#include "qfbsde/driver.hpp"

#include <atomic>

namespace qfbsde {

Driver truncate_driver(const Driver& driver, double K_level,
                       std::shared_ptr<std::atomic<long long>> clamp_hits) {
  if (!(K_level > 0.0)) throw config_error("truncation level must be positive");
  Driver out;
  out.growth = driver.growth;
  auto base = driver;  // capture by value, the wrapper owns its input
  out.f = [base, K_level, clamp_hits](double t, std::span<const double> x,
                                      std::span<const double> m, double y,
                                      std::span<const double> v) {
    if (clamp_hits && (y < -K_level || y > K_level))
      clamp_hits->fetch_add(1, std::memory_order_relaxed);
    return base.f(t, x, m, clamp_level(y, K_level), v);
  };
  if (base.df_dy)
    out.df_dy = [base, K_level](double t, std::span<const double> x,
                                std::span<const double> m, double y,
                                std::span<const double> v) {
      if (y < -K_level || y > K_level) return 0.0;
      return base.df_dy(t, x, m, y, v);
    };
  if (base.df_dx)
    out.df_dx = [base, K_level](double t, std::span<const double> x,
                                std::span<const double> m, double y,
                                std::span<const double> v, std::span<double> o) {
      base.df_dx(t, x, m, clamp_level(y, K_level), v, o);
    };
  if (base.df_dm)
    out.df_dm = [base, K_level](double t, std::span<const double> x,
                                std::span<const double> m, double y,
                                std::span<const double> v, std::span<double> o) {
      base.df_dm(t, x, m, clamp_level(y, K_level), v, o);
    };
  if (base.df_dv)
    out.df_dv = [base, K_level](double t, std::span<const double> x,
                                std::span<const double> m, double y,
                                std::span<const double> v, std::span<double> o) {
      base.df_dv(t, x, m, clamp_level(y, K_level), v, o);
    };
  return out;
}

void exp_transform(std::span<const double> Y, std::span<const double> Z,
                   std::size_t d, double kappa, std::span<double> U,
                   std::span<double> V) {
  if (kappa == 0.0) throw config_error("exponential transform needs kappa != 0");
  if (Z.size() != Y.size() * d || U.size() != Y.size() || V.size() != Z.size())
    throw config_error("exp_transform: array sizes disagree");
  for (std::size_t i = 0; i < Y.size(); ++i) {
    const double u = std::exp(kappa * Y[i]);
    U[i] = u;
    for (std::size_t c = 0; c < d; ++c) V[i * d + c] = kappa * u * Z[i * d + c];
  }
}

void exp_transform_inverse(std::span<const double> U, std::span<const double> V,
                           std::size_t d, double kappa, std::span<double> Y,
                           std::span<double> Z) {
  if (kappa == 0.0) throw config_error("exponential transform needs kappa != 0");
  if (V.size() != U.size() * d || Y.size() != U.size() || Z.size() != V.size())
    throw config_error("exp_transform_inverse: array sizes disagree");
  for (std::size_t i = 0; i < U.size(); ++i) {
    if (!(U[i] > 0.0))
      throw solver_error("exponential transform inverse hit U <= 0");
    Y[i] = std::log(U[i]) / kappa;
    for (std::size_t c = 0; c < d; ++c) Z[i * d + c] = V[i * d + c] / (kappa * U[i]);
  }
}

Driver transformed_driver_g(const Driver& f_K, double kappa, double c1, double c2,
                            std::shared_ptr<std::atomic<long long>> clamp_hits) {
  if (!(c1 > 0.0) || !(c1 <= c2))
    throw config_error("transformed driver needs 0 < c1 <= c2");
  if (kappa == 0.0) throw config_error("transformed driver needs kappa != 0");
  Driver out;
  out.growth = f_K.growth;
  out.growth.lipschitz_yz = false;
  auto base = f_K;
  out.f = [base, kappa, c1, c2, clamp_hits](double t, std::span<const double> x,
                                            std::span<const double> m, double u,
                                            std::span<const double> v) {
    if (clamp_hits && (u < c1 || u > c2))
      clamp_hits->fetch_add(1, std::memory_order_relaxed);
    const double uc = u > c1 ? u : c1;
    const double y = std::log(uc) / kappa;
    double vsq = 0.0;
    double zbuf[16];
    for (std::size_t c = 0; c < v.size(); ++c) {
      zbuf[c] = v[c] / (kappa * uc);
      vsq += v[c] * v[c];
    }
    const double fval =
        base.f(t, x, m, y, std::span<const double>(zbuf, v.size()));
    return kappa * clamp_level(u, c2) * fval - vsq / (2.0 * uc);
  };
  return out;
}

}  // namespace qfbsde
