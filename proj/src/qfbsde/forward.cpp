#include "qfbsde/forward.hpp"

#include <atomic>
#include <cmath>
#include <mutex>

#include "qfbsde/parallel.hpp"

namespace qfbsde {

namespace {

void check_dims(const SdeCoefficients& coeffs, const PathBundle& bundle) {
  if (coeffs.n == 0) throw config_error("state dimension must be positive");
  if (coeffs.d != bundle.d)
    throw config_error("coefficient martingale dimension does not match the bundle");
  if (!coeffs.sigma || !coeffs.b) throw config_error("sigma and b are required");
}

}  // namespace

ForwardSolution simulate_forward(const SdeCoefficients& coeffs,
                                 const PathBundle& bundle, const ForwardStart& start,
                                 std::span<const double> m_offset) {
  check_dims(coeffs, bundle);
  const std::size_t n = coeffs.n, d = coeffs.d;
  if (start.x.size() != n) throw config_error("start state has wrong dimension");
  const std::size_t nodes = bundle.nodes();
  if (start.index < bundle.start_index || start.index >= nodes)
    throw config_error("forward start is outside the simulated window");
  if (!m_offset.empty() && m_offset.size() != d)
    throw config_error("martingale offset has wrong dimension");

  ForwardSolution sol;
  sol.paths = bundle.paths;
  sol.n = n;
  sol.d = d;
  sol.nodes = nodes;
  sol.start = start;
  sol.X.assign(bundle.paths * nodes * n, 0.0);

  std::atomic<bool> failed{false};
  std::string fail_what;
  std::mutex fail_mutex;

  for_blocks(bundle.paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> sig(n * d), bvec(n), m_arg(d);
    for (std::size_t p = pa; p < pe && !failed.load(std::memory_order_relaxed); ++p) {
      double* Xrow = &sol.X[(p * nodes) * n];
      for (std::size_t i = 0; i <= start.index; ++i)
        for (std::size_t j = 0; j < n; ++j) Xrow[i * n + j] = start.x[j];
      for (std::size_t i = start.index; i + 1 < nodes; ++i) {
        const double t = bundle.grid.points[i];
        const double* m = bundle.m_at(p, i);
        for (std::size_t k = 0; k < d; ++k)
          m_arg[k] = m[k] + (m_offset.empty() ? 0.0 : m_offset[k]);
        const double* x = &Xrow[i * n];
        coeffs.sigma(t, std::span<const double>(x, n), m_arg, sig);
        coeffs.b(t, std::span<const double>(x, n), m_arg, bvec);
        const double dC = bundle.dC(p, i);
        const double* m1 = bundle.m_at(p, i + 1);
        for (std::size_t r = 0; r < n; ++r) {
          double s = x[r] + bvec[r] * dC;
          for (std::size_t c = 0; c < d; ++c) s += sig[r * d + c] * (m1[c] - m[c]);
          Xrow[(i + 1) * n + r] = s;
          if (!std::isfinite(s)) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            fail_what = "forward state blew up at path " + std::to_string(p) +
                        ", step " + std::to_string(i);
            failed.store(true);
            break;
          }
        }
        if (failed.load(std::memory_order_relaxed)) break;
      }
    }
  });
  if (failed.load()) throw solver_error(fail_what);
  return sol;
}

void simulate_variational(const SdeCoefficients& coeffs, const PathBundle& bundle,
                          ForwardSolution& forward) {
  if (!coeffs.has_partials())
    throw config_error("variational flows need the coefficient partial derivatives");
  if (forward.paths != bundle.paths || forward.nodes != bundle.nodes())
    throw config_error("forward solution does not match the bundle");
  const std::size_t n = coeffs.n, d = coeffs.d, nodes = forward.nodes;
  const std::size_t i0 = forward.start.index;
  forward.Dx.assign(forward.paths * nodes * n * n, 0.0);
  forward.Dm.assign(forward.paths * nodes * n * d, 0.0);

  for_blocks(forward.paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> dsx(n * d * n), dsm(n * d * d), dbx(n * n), dbm(n * d);
    std::vector<double> dxn(n * n), dmn(n * d);
    for (std::size_t p = pa; p < pe; ++p) {
      double* Dx = &forward.Dx[(p * nodes) * n * n];
      double* Dm = &forward.Dm[(p * nodes) * n * d];
      for (std::size_t i = 0; i <= i0; ++i)
        for (std::size_t r = 0; r < n; ++r) Dx[i * n * n + r * n + r] = 1.0;
      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double t = bundle.grid.points[i];
        const double* x = forward.x_at(p, i);
        const double* m = bundle.m_at(p, i);
        std::span<const double> xs(x, n), ms(m, d);
        coeffs.dsigma_dx(t, xs, ms, dsx);
        coeffs.dsigma_dm(t, xs, ms, dsm);
        coeffs.db_dx(t, xs, ms, dbx);
        coeffs.db_dm(t, xs, ms, dbm);
        const double dC = bundle.dC(p, i);
        const double* m1 = bundle.m_at(p, i + 1);
        const double* dxc = &Dx[i * n * n];
        const double* dmc = &Dm[i * n * d];
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < n; ++k) {
            double s = dxc[r * n + k];
            for (std::size_t j = 0; j < n; ++j) {
              double coef = dbx[r * n + j] * dC;
              for (std::size_t a = 0; a < d; ++a)
                coef += dsx[r * d * n + a * n + j] * (m1[a] - m[a]);
              s += coef * dxc[j * n + k];
            }
            dxn[r * n + k] = s;
          }
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < d; ++k) {
            double s = dmc[r * d + k];
            for (std::size_t j = 0; j < n; ++j) {
              double coef = dbx[r * n + j] * dC;
              for (std::size_t a = 0; a < d; ++a)
                coef += dsx[r * d * n + a * n + j] * (m1[a] - m[a]);
              s += coef * dmc[j * d + k];
            }
            s += dbm[r * d + k] * dC;
            for (std::size_t a = 0; a < d; ++a)
              s += dsm[r * d * d + a * d + k] * (m1[a] - m[a]);
            dmn[r * d + k] = s;
          }
        for (std::size_t j = 0; j < n * n; ++j) Dx[(i + 1) * n * n + j] = dxn[j];
        for (std::size_t j = 0; j < n * d; ++j) Dm[(i + 1) * n * d + j] = dmn[j];
      }
    }
  });
}

ForwardSolution bump_restart(const SdeCoefficients& coeffs, const PathBundle& bundle,
                             const ForwardStart& start, const Bump& bump) {
  if (!(bump.h != 0.0)) throw config_error("bump size must be nonzero");
  if (bump.coordinate < coeffs.n) {
    ForwardStart s = start;
    s.x[bump.coordinate] += bump.h;
    return simulate_forward(coeffs, bundle, s);
  }
  const std::size_t k = bump.coordinate - coeffs.n;
  if (k >= coeffs.d) throw config_error("bump coordinate out of range");
  std::vector<double> offset(coeffs.d, 0.0);
  offset[k] = bump.h;
  return simulate_forward(coeffs, bundle, start, offset);
}

double spot_check_partials(const SdeCoefficients& coeffs, double t,
                           std::span<const double> x, std::span<const double> m,
                           double h) {
  if (!coeffs.has_partials()) throw config_error("no partials to check");
  const std::size_t n = coeffs.n, d = coeffs.d;
  std::vector<double> sp(n * d), sm(n * d), bp(n), bm(n);
  std::vector<double> dsx(n * d * n), dsm(n * d * d), dbx(n * n), dbm(n * d);
  std::vector<double> xb(x.begin(), x.end()), mb(m.begin(), m.end());
  coeffs.dsigma_dx(t, x, m, dsx);
  coeffs.dsigma_dm(t, x, m, dsm);
  coeffs.db_dx(t, x, m, dbx);
  coeffs.db_dm(t, x, m, dbm);
  double worst = 0.0;
  auto rel = [](double got, double want) {
    const double scale = std::max({std::fabs(want), std::fabs(got), 1.0});
    return std::fabs(got - want) / scale;
  };
  for (std::size_t j = 0; j < n; ++j) {
    xb[j] = x[j] + h;
    coeffs.sigma(t, xb, m, sp);
    coeffs.b(t, xb, m, bp);
    xb[j] = x[j] - h;
    coeffs.sigma(t, xb, m, sm);
    coeffs.b(t, xb, m, bm);
    xb[j] = x[j];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < d; ++a)
        worst = std::max(worst, rel(dsx[i * d * n + a * n + j],
                                    (sp[i * d + a] - sm[i * d + a]) / (2 * h)));
      worst = std::max(worst, rel(dbx[i * n + j], (bp[i] - bm[i]) / (2 * h)));
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    mb[k] = m[k] + h;
    coeffs.sigma(t, x, mb, sp);
    coeffs.b(t, x, mb, bp);
    mb[k] = m[k] - h;
    coeffs.sigma(t, x, mb, sm);
    coeffs.b(t, x, mb, bm);
    mb[k] = m[k];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < d; ++a)
        worst = std::max(worst, rel(dsm[i * d * d + a * d + k],
                                    (sp[i * d + a] - sm[i * d + a]) / (2 * h)));
      worst = std::max(worst, rel(dbm[i * d + k], (bp[i] - bm[i]) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace qfbsde
