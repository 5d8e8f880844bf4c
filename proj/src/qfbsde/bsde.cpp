#include "qfbsde/bsde.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

#include "qfbsde/csv.hpp"
#include "qfbsde/linalg.hpp"
#include "qfbsde/parallel.hpp"

namespace qfbsde {

StepDriverFn as_step_driver(const Driver& driver) {
  auto f = driver.f;
  if (!f) throw config_error("driver has no generator function");
  return [f](std::size_t, std::size_t, double t, std::span<const double> x,
             std::span<const double> m, double y, std::span<const double> v) {
    return f(t, x, m, y, v);
  };
}

double transform_exponent(const DriverGrowth& growth) {
  return growth.kappa != 0.0 ? growth.kappa : growth.curvature;
}

namespace {

struct SolveContext {
  const StepDriverFn& f;
  const ForwardSolution& fw;
  const PathBundle& bu;
  std::size_t P, nodes, d, n, i0, vars;
  double z_trunc;
  std::atomic<long long>* z_hits;
};

// Rotated control v = Z q (q symmetric), optionally projected onto the ball
// of radius z_trunc.
inline void rotate_control(const double* z, const double* q, std::size_t d,
                           double z_trunc, std::atomic<long long>* hits,
                           double* v) {
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) s += z[a] * q[a * d + c];
    v[c] = s;
  }
  if (z_trunc < std::numeric_limits<double>::infinity()) {
    double nv = 0.0;
    for (std::size_t c = 0; c < d; ++c) nv += v[c] * v[c];
    nv = std::sqrt(nv);
    if (nv > z_trunc) {
      const double scale = z_trunc / nv;
      for (std::size_t c = 0; c < d; ++c) v[c] *= scale;
      if (hits) hits->fetch_add(1, std::memory_order_relaxed);
    }
  }
}

// Fills S with the running suffix sums of f dC evaluated on (Y, Z).
void driver_suffix_pass(const SolveContext& cx, const std::vector<double>& Y,
                        const std::vector<double>& Z, std::vector<double>& S) {
  std::atomic<bool> failed{false};
  std::string what;
  std::mutex mtx;
  for_blocks(cx.P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    double v[8];
    for (std::size_t p = pa; p < pe; ++p) {
      S[p * cx.nodes + cx.nodes - 1] = 0.0;
      for (std::size_t j = cx.nodes - 1; j-- > cx.i0;) {
        rotate_control(&Z[(p * cx.nodes + j) * cx.d], cx.bu.q_at(p, j), cx.d,
                       cx.z_trunc, cx.z_hits, v);
        const double fv =
            cx.f(p, j, cx.bu.grid.points[j],
                 std::span<const double>(cx.fw.x_at(p, j), cx.n),
                 std::span<const double>(cx.bu.m_at(p, j), cx.d),
                 Y[p * cx.nodes + j], std::span<const double>(v, cx.d));
        if (!std::isfinite(fv)) {
          std::lock_guard<std::mutex> lock(mtx);
          what = "driver returned a non-finite value at path " + std::to_string(p) +
                 ", step " + std::to_string(j);
          failed.store(true);
          return;
        }
        S[p * cx.nodes + j] = S[p * cx.nodes + j + 1] + fv * cx.bu.dC(p, j);
      }
    }
  });
  if (failed.load()) throw solver_error(what);
}

}  // namespace

BsdeSolution solve_lipschitz_values(const StepDriverFn& f,
                                    const std::vector<double>& terminal_values,
                                    const ForwardSolution& forward,
                                    const PathBundle& bundle,
                                    const RegressionBasis& basis,
                                    const PicardOptions& opts) {
  if (forward.paths != bundle.paths || forward.nodes != bundle.nodes())
    throw config_error("forward solution does not match the bundle");
  if (forward.start.index < bundle.start_index)
    throw config_error("forward starts before the bundle window");
  if (terminal_values.size() != bundle.paths)
    throw config_error("terminal value array does not match the path count");
  const std::size_t P = bundle.paths, nodes = bundle.nodes(), d = bundle.d,
                    n = forward.n;
  const std::size_t i0 = forward.start.index;
  const std::size_t vars = n + d;
  const std::size_t last = nodes - 1;

  std::atomic<long long> z_hits{0};
  // Truncation is applied on every sweep but only counted at convergence.
  SolveContext cx{f,     forward, bundle, P,
                  nodes, d,       n,      i0,
                  vars,  opts.z_truncation, nullptr};
  SolveContext cx_final = cx;
  cx_final.z_hits = &z_hits;
  if (opts.audit_gate) opts.audit_gate->store(false);

  BsdeSolution sol;
  sol.paths = P;
  sol.nodes = nodes;
  sol.d = d;
  sol.start_index = i0;
  sol.Y.assign(P * nodes, 0.0);
  sol.Z.assign(P * nodes * d, 0.0);
  sol.coefficients.assign(nodes, {});

  // Terminal values; Y_T is exact by construction in every iteration.
  const std::vector<double>& Fv = terminal_values;
  for (std::size_t p = 0; p < P; ++p) sol.Y[p * nodes + last] = Fv[p];

  std::vector<double> S(P * nodes, 0.0);
  std::vector<double> tY(P), tZ(d * P), newY(P);
  std::atomic<long long> projections{0};

  const std::size_t nblocks = block_count(P);
  std::vector<double> block_max(nblocks, 0.0);

  auto rows_at = [&](std::size_t i) -> RowFn {
    return [&forward, &bundle, i, n, d](std::size_t p, double* out) {
      const double* x = forward.x_at(p, i);
      for (std::size_t j = 0; j < n; ++j) out[j] = x[j];
      const double* m = bundle.m_at(p, i);
      for (std::size_t j = 0; j < d; ++j) out[n + j] = m[j];
    };
  };

  PicardReport rep;
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    driver_suffix_pass(cx, sol.Y, sol.Z, S);

    double supdiff = 0.0;
    std::atomic<bool> failed{false};
    std::string what;
    std::mutex mtx;
    for (std::size_t i = last; i-- > i0;) {
      // Y regression: conditional expectation of terminal plus driver suffix.
      for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
        for (std::size_t p = pa; p < pe; ++p) tY[p] = Fv[p] + S[p * nodes + i];
      });
      RowFn rows = rows_at(i);
      PolyFit fit(vars, basis);
      fit.prepare(P, rows);
      sol.max_condition = std::max(sol.max_condition, fit.condition_hint());
      {
        const double* const tlist[1] = {tY.data()};
        fit.solve_targets(P, rows, std::span<const double* const>(tlist, 1));
      }
      for_blocks(P, [&](std::size_t b, std::size_t pa, std::size_t pe) {
        double vals[8];
        double bm = block_max[b];
        long long proj = 0;
        for (std::size_t p = pa; p < pe; ++p) {
          rows(p, vals);
          double y = fit.fitted(vals, 0);
          if (y < opts.y_fit_lo) {
            y = opts.y_fit_lo;
            ++proj;
          } else if (y > opts.y_fit_hi) {
            y = opts.y_fit_hi;
            ++proj;
          }
          newY[p] = y;
          const double diff = std::fabs(y - sol.Y[p * nodes + i]);
          if (diff > bm) bm = diff;
        }
        block_max[b] = bm;
        if (proj > 0) projections.fetch_add(proj, std::memory_order_relaxed);
      });
      // Z regression: centered martingale-increment targets
      //   (Y_{i+1} - Yhat_i) dM_i (q q* dC)^{-1}; the centering term has zero
      // conditional mean, so the estimator is unchanged in expectation.
      for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
        double A[64], w[8], dm[8];
        for (std::size_t p = pa; p < pe; ++p) {
          const double* q = bundle.q_at(p, i);
          const double dC = bundle.dC(p, i);
          const double* m0 = bundle.m_at(p, i);
          const double* m1 = bundle.m_at(p, i + 1);
          double dm_norm = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dm[c] = m1[c] - m0[c];
            dm_norm += dm[c] * dm[c];
          }
          const double dy = sol.Y[p * nodes + i + 1] - newY[p];
          bool ok = true;
          if (d == 1) {
            const double a = q[0] * q[0] * dC;
            if (a > 0.0) {
              w[0] = dm[0] / a;
            } else {
              w[0] = 0.0;
              ok = dm_norm <= 1e-20;
            }
          } else {
            for (std::size_t r = 0; r < d; ++r)
              for (std::size_t c = 0; c < d; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += q[r * d + k] * q[c * d + k];
                A[r * d + c] = s * dC;
              }
            std::vector<double> Acopy(A, A + d * d);
            for (std::size_t c = 0; c < d; ++c) w[c] = dm[c];
            if (!linalg::solve_dense(std::move(Acopy), d, w)) {
              for (std::size_t c = 0; c < d; ++c) w[c] = 0.0;
              ok = dm_norm <= 1e-20;
            }
          }
          if (!ok && !failed.exchange(true)) {
            std::lock_guard<std::mutex> lock(mtx);
            what = "singular q q* dC with a nonzero martingale increment at path " +
                   std::to_string(p) + ", step " + std::to_string(i);
          }
          for (std::size_t c = 0; c < d; ++c) tZ[c * P + p] = dy * w[c];
        }
      });
      if (failed.load()) throw solver_error(what);
      {
        const double* tlist[8];
        for (std::size_t c = 0; c < d; ++c) tlist[c] = &tZ[c * P];
        fit.solve_targets(P, rows, std::span<const double* const>(tlist, d));
      }
      for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
        double vals[8], out[9];
        for (std::size_t p = pa; p < pe; ++p) {
          rows(p, vals);
          fit.fitted_all(vals, out);
          sol.Y[p * nodes + i] = newY[p];
          for (std::size_t c = 0; c < d; ++c) sol.Z[(p * nodes + i) * d + c] = out[1 + c];
        }
      });
      // Keep the final iteration's coefficients: Y row then Z rows.
      auto& cf = sol.coefficients[i];
      cf.assign((1 + d) * fit.feature_count(), 0.0);
      for (std::size_t t = 0; t < 1 + d; ++t)
        for (std::size_t j = 0; j < fit.feature_count(); ++j)
          cf[t * fit.feature_count() + j] = fit.coefficients(t)[j];
    }
    for (std::size_t b = 0; b < nblocks; ++b) {
      supdiff = std::max(supdiff, block_max[b]);
      block_max[b] = 0.0;
    }
    rep.sup_diffs.push_back(supdiff);
    if (supdiff < opts.tol) {
      rep.converged = true;
      break;
    }
  }
  if (!rep.converged) {
    std::ostringstream oss;
    oss << "Picard iteration did not converge in " << opts.max_iter
        << " sweeps; sup differences:";
    for (double v : rep.sup_diffs) oss << " " << v;
    throw solver_error(oss.str());
  }
  for (std::size_t k = 1; k + 1 < rep.sup_diffs.size(); ++k)
    rep.eps_hat = std::max(rep.eps_hat,
                           rep.sup_diffs[k + 1] / std::max(rep.sup_diffs[k], 1e-300));
  sol.picard = rep;

  // Hold the last computed control at the terminal node.
  if (last > i0)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < d; ++c)
        sol.Z[(p * nodes + last) * d + c] = sol.Z[(p * nodes + last - 1) * d + c];

  // Value statistics from the final-iterate targets at the start index; this
  // pass also measures truncation activity at convergence.
  if (opts.audit_gate) opts.audit_gate->store(true);
  driver_suffix_pass(cx_final, sol.Y, sol.Z, S);
  sol.value_samples.resize(P);
  double vsum = 0.0, tsum = 0.0, tsq = 0.0, supy = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    vsum += sol.Y[p * nodes + i0];
    const double tv = Fv[p] + S[p * nodes + i0];
    sol.value_samples[p] = tv;
    tsum += tv;
    tsq += tv * tv;
    for (std::size_t i = i0; i < nodes; ++i)
      supy = std::max(supy, std::fabs(sol.Y[p * nodes + i]));
  }
  sol.value = vsum / static_cast<double>(P);
  const double tmean = tsum / static_cast<double>(P);
  const double tvar =
      std::max(0.0, tsq / static_cast<double>(P) - tmean * tmean);
  sol.value_stderr = std::sqrt(tvar / static_cast<double>(P));
  sol.sup_abs_y = supy;
  sol.audit.z_clamped = z_hits.load();
  sol.value_projections = projections.load();
  return sol;
}

BsdeSolution solve_lipschitz(const StepDriverFn& f, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const PicardOptions& opts,
                             TruncationAudit* audit_out) {
  if (!terminal.F) throw config_error("terminal condition has no function");
  const std::size_t P = bundle.paths, nodes = bundle.nodes(), d = bundle.d;
  const std::size_t last = nodes - 1;
  std::vector<double> Fv(P);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    for (std::size_t p = pa; p < pe; ++p)
      Fv[p] = terminal.F(std::span<const double>(forward.x_at(p, last), forward.n),
                         std::span<const double>(bundle.m_at(p, last), d));
  });
  BsdeSolution sol = solve_lipschitz_values(f, Fv, forward, bundle, basis, opts);
  if (audit_out) *audit_out = sol.audit;
  return sol;
}

BsdeSolution solve_lipschitz(const Driver& driver, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const PicardOptions& opts) {
  return solve_lipschitz(as_step_driver(driver), terminal, forward, bundle, basis,
                         opts);
}

BsdeSolution solve_quadratic(const Driver& driver, const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const QuadOptions& opts) {
  return solve_quadratic(as_step_driver(driver), driver.growth, terminal, forward,
                         bundle, basis, opts);
}

BsdeSolution solve_quadratic(const StepDriverFn& f, const DriverGrowth& growth,
                             const TerminalCondition& terminal,
                             const ForwardSolution& forward, const PathBundle& bundle,
                             const RegressionBasis& basis, const QuadOptions& opts) {
  const double kt = transform_exponent(growth);
  const double T = bundle.grid.horizon();
  const double Fb = terminal.bound;
  const double a = growth.eta_bound;
  const double b = growth.y_growth;

  PicardOptions pic = opts.picard;
  const double scale = 1.0 + (std::isfinite(Fb) ? Fb : 0.0) + a;

  if (opts.mode == QuadMode::direct || kt == 0.0) {
    if (pic.z_truncation == std::numeric_limits<double>::infinity())
      pic.z_truncation = opts.R > 0.0 ? opts.R : 100.0 * scale;
    if (std::isfinite(Fb)) {
      const double ybar = Fb + a * std::exp(b * T);
      pic.y_fit_lo = -ybar;
      pic.y_fit_hi = ybar;
    }
    BsdeSolution sol = solve_lipschitz(f, terminal, forward, bundle, basis, pic);
    if (sol.audit.any() && opts.strict)
      throw solver_error("z-truncation was active at convergence (" +
                         std::to_string(sol.audit.z_clamped) + " evaluations)");
    return sol;
  }

  if (!std::isfinite(Fb))
    throw config_error("the exponential transform needs a bounded terminal condition");
  const double ybar = Fb + a * std::exp(b * T);
  const double K = opts.K_level > 0.0 ? opts.K_level : std::max(2.0 * (Fb + a), 1e-6);
  const double c1 = opts.c1 > 0.0 ? opts.c1 : 0.5 * std::exp(-std::fabs(kt) * ybar);
  const double c2 = opts.c2 > 0.0 ? opts.c2 : 2.0 * std::exp(std::fabs(kt) * ybar);
  const double R = opts.R > 0.0 ? opts.R
                                : 100.0 * scale * std::max(1.0, std::fabs(kt) * c2);

  auto y_hits = std::make_shared<std::atomic<long long>>(0);
  auto u_hits = std::make_shared<std::atomic<long long>>(0);
  auto gate = std::make_shared<std::atomic<bool>>(false);
  pic.audit_gate = gate;
  StepDriverFn f_K = [f, K, y_hits, gate](std::size_t p, std::size_t i, double t,
                                          std::span<const double> x,
                                          std::span<const double> m, double y,
                                          std::span<const double> v) {
    if ((y < -K || y > K) && gate->load(std::memory_order_relaxed))
      y_hits->fetch_add(1, std::memory_order_relaxed);
    return f(p, i, t, x, m, clamp_level(y, K), v);
  };
  StepDriverFn g = [f_K, kt, c1, c2, u_hits, gate](
                       std::size_t p, std::size_t i, double t,
                       std::span<const double> x, std::span<const double> m,
                       double u, std::span<const double> v) {
    if ((u < c1 || u > c2) && gate->load(std::memory_order_relaxed))
      u_hits->fetch_add(1, std::memory_order_relaxed);
    const double uc = u > c1 ? u : c1;
    const double y = std::log(uc) / kt;
    double vsq = 0.0;
    double zbuf[8];
    for (std::size_t c = 0; c < v.size(); ++c) {
      zbuf[c] = v[c] / (kt * uc);
      vsq += v[c] * v[c];
    }
    const double fv =
        f_K(p, i, t, x, m, y, std::span<const double>(zbuf, v.size()));
    return kt * clamp_level(u, c2) * fv - vsq / (2.0 * uc);
  };

  TerminalCondition term_u;
  auto F0 = terminal.F;
  term_u.F = [F0, kt](std::span<const double> x, std::span<const double> m) {
    return std::exp(kt * F0(x, m));
  };
  term_u.bound = std::exp(std::fabs(kt) * Fb);

  pic.z_truncation = R;
  // The transformed value lives in the exponential image of the a-priori
  // range; fitted values are projected onto it, which keeps the clamps of g
  // non-binding wherever the declared bounds hold.
  pic.y_fit_lo = std::exp(-std::fabs(kt) * ybar);
  pic.y_fit_hi = std::exp(std::fabs(kt) * ybar);
  BsdeSolution solU = solve_lipschitz(g, term_u, forward, bundle, basis, pic);

  const std::size_t P = solU.paths, nodes = solU.nodes, d = solU.d;
  const std::size_t i0 = solU.start_index;
  BsdeSolution sol;
  sol.paths = P;
  sol.nodes = nodes;
  sol.d = d;
  sol.start_index = i0;
  sol.Y.assign(P * nodes, 0.0);
  sol.Z.assign(P * nodes * d, 0.0);
  sol.picard = solU.picard;
  sol.value_projections = solU.value_projections;
  sol.max_condition = solU.max_condition;
  sol.coefficients = solU.coefficients;

  double u0_mean = 0.0;
  double supy = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t i = i0; i < nodes; ++i) {
      const double u = solU.Y[p * nodes + i];
      if (!(u > 0.0))
        throw solver_error("transform mode produced U <= 0 at path " +
                           std::to_string(p) + ", step " + std::to_string(i) +
                           "; the solve left the exponential domain");
      const double y = std::log(u) / kt;
      sol.Y[p * nodes + i] = y;
      supy = std::max(supy, std::fabs(y));
      for (std::size_t c = 0; c < d; ++c)
        sol.Z[(p * nodes + i) * d + c] = solU.Z[(p * nodes + i) * d + c] / (kt * u);
    }
    u0_mean += solU.Y[p * nodes + i0];
  }
  u0_mean /= static_cast<double>(P);
  // Terminal values are exact under the inverse change of variables; rewrite
  // them from the original terminal function to drop the exp/log roundoff.
  const std::size_t lastn = nodes - 1;
  for (std::size_t p = 0; p < P; ++p)
    sol.Y[p * nodes + lastn] =
        terminal.F(std::span<const double>(forward.x_at(p, lastn), forward.n),
                   std::span<const double>(bundle.m_at(p, lastn), d));

  double vsum = 0.0;
  for (std::size_t p = 0; p < P; ++p) vsum += sol.Y[p * nodes + i0];
  sol.value = vsum / static_cast<double>(P);
  sol.value_stderr = solU.value_stderr / (std::fabs(kt) * std::max(u0_mean, 1e-300));
  sol.sup_abs_y = supy;
  // Value samples linearized through the inverse change of variables.
  sol.value_samples.resize(P);
  double us_mean = 0.0;
  for (double s : solU.value_samples) us_mean += s;
  us_mean /= static_cast<double>(P);
  const double denom = kt * (std::fabs(us_mean) > 1e-300 ? us_mean : 1e-300);
  for (std::size_t p = 0; p < P; ++p)
    sol.value_samples[p] = sol.value + (solU.value_samples[p] - us_mean) / denom;

  sol.audit.y_clamped = y_hits->load();
  sol.audit.u_clamped = u_hits->load();
  sol.audit.z_clamped = solU.audit.z_clamped;
  if (sol.audit.any() && opts.strict) {
    std::ostringstream oss;
    oss << "truncation bounds were active during the quadratic solve (y: "
        << sol.audit.y_clamped << ", u-clamp: " << sol.audit.u_clamped
        << ", z: " << sol.audit.z_clamped << " evaluations)";
    throw solver_error(oss.str());
  }
  return sol;
}

double bmo_norm_estimate(const BsdeSolution& solution, const PathBundle& bundle,
                         const RegressionBasis& basis,
                         const ForwardSolution* forward) {
  const std::size_t P = solution.paths, nodes = solution.nodes, d = solution.d;
  const std::size_t i0 = solution.start_index;
  const std::size_t n = forward ? forward->n : 0;
  if (P != bundle.paths || nodes != bundle.nodes())
    throw config_error("solution does not match the bundle");

  // Suffix integrals int_t^T |q Z*|^2 dC per path.
  std::vector<double> I(P * nodes, 0.0);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    double v[8];
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t j = nodes - 1; j-- > i0;) {
        rotate_control(solution.z_at(p, j), bundle.q_at(p, j), d,
                       std::numeric_limits<double>::infinity(), nullptr, v);
        double vsq = 0.0;
        for (std::size_t c = 0; c < d; ++c) vsq += v[c] * v[c];
        I[p * nodes + j] = I[p * nodes + j + 1] + vsq * bundle.dC(p, j);
      }
  });

  const std::size_t vars = n + d;
  double worst = 0.0;
  std::vector<double> t_i(P);
  for (std::size_t i = i0; i + 1 < nodes; ++i) {
    RowFn rows = [&, i](std::size_t p, double* out) {
      for (std::size_t j = 0; j < n; ++j) out[j] = forward->x_at(p, i)[j];
      for (std::size_t j = 0; j < d; ++j) out[n + j] = bundle.m_at(p, i)[j];
    };
    PolyFit fit(vars, basis);
    fit.prepare(P, rows);
    for (std::size_t p = 0; p < P; ++p) t_i[p] = I[p * nodes + i];
    const double* const tlist[1] = {t_i.data()};
    fit.solve_targets(P, rows, std::span<const double* const>(tlist, 1));
    double vals[8];
    for (std::size_t p = 0; p < P; ++p) {
      rows(p, vals);
      worst = std::max(worst, fit.fitted(vals, 0));
    }
  }
  return std::sqrt(std::max(worst, 0.0));
}

TowerCheck tower_residuals(const BsdeSolution& solution, const PathBundle& bundle,
                           const StepDriverFn& f, const ForwardSolution& forward,
                           double kappa) {
  const std::size_t P = solution.paths, nodes = solution.nodes, d = solution.d;
  const std::size_t i0 = solution.start_index;
  std::vector<double> suffix(P * nodes, 0.0);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    double v[8];
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t j = nodes - 1; j-- > i0;) {
        rotate_control(solution.z_at(p, j), bundle.q_at(p, j), d,
                       std::numeric_limits<double>::infinity(), nullptr, v);
        double fv = f(p, j, bundle.grid.points[j],
                      std::span<const double>(forward.x_at(p, j), forward.n),
                      std::span<const double>(bundle.m_at(p, j), d),
                      solution.y_at(p, j), std::span<const double>(v, d));
        double acc = fv * bundle.dC(p, j);
        if (kappa != 0.0 && !solution.U_orth.empty() && bundle.has_orthogonal()) {
          const double u = solution.U_orth[p * nodes + j];
          const double dbn =
              bundle.bracketNN[p * nodes + j + 1] - bundle.bracketNN[p * nodes + j];
          acc += 0.5 * kappa * u * u * dbn;
        }
        suffix[p * nodes + j] = suffix[p * nodes + j + 1] + acc;
      }
  });
  TowerCheck out;
  out.mean.assign(nodes, 0.0);
  out.se.assign(nodes, 0.0);
  for (std::size_t i = i0; i < nodes; ++i) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double r = solution.y_at(p, i) - solution.y_at(p, nodes - 1) -
                       suffix[p * nodes + i];
      s += r;
      s2 += r * r;
    }
    const double mean = s / static_cast<double>(P);
    const double var = std::max(0.0, s2 / static_cast<double>(P) - mean * mean);
    out.mean[i] = mean;
    out.se[i] = std::sqrt(var / static_cast<double>(P));
  }
  return out;
}

void write_convergence_csv(const PicardReport& report, const std::string& file) {
  csv::Writer w(file);
  w.line("iteration,sup_dY,ratio");
  const auto ratios = report.ratios();
  for (std::size_t k = 0; k < report.sup_diffs.size(); ++k) {
    w.field(k + 1);
    w.field(report.sup_diffs[k]);
    w.field(k == 0 ? 0.0 : ratios[k - 1]);
    w.endline();
  }
}

}  // namespace qfbsde
