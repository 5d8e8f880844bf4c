#include "qfbsde/markov.hpp"

#include <algorithm>
#include <cmath>

#include "qfbsde/csv.hpp"
#include "qfbsde/parallel.hpp"

namespace qfbsde {

namespace {

double sample_sd(std::span<const double> v) {
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(v.size());
  const double mean = s / n;
  return std::sqrt(std::max(0.0, s2 / n - mean * mean));
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const std::size_t idx = static_cast<std::size_t>(
      q * static_cast<double>(v.size() - 1) + 0.5);
  std::nth_element(v.begin(), v.begin() + idx, v.end());
  return v[idx];
}

// Paired central difference with common random numbers: value, standard
// error of the mean difference, both divided by 2h.
void paired_fd(const NodeValue& plus, const NodeValue& minus, double h,
               double& deriv, double& se) {
  deriv = (plus.u - minus.u) / (2.0 * h);
  const std::size_t P = plus.samples.size();
  std::vector<double> diff(P);
  for (std::size_t p = 0; p < P; ++p) diff[p] = plus.samples[p] - minus.samples[p];
  se = sample_sd(diff) / (std::sqrt(static_cast<double>(P)) * 2.0 * h);
}

}  // namespace

NodeValue estimate_u_node(const ProblemSpec& spec, double t,
                          std::span<const double> x, std::span<const double> m,
                          std::uint64_t seed) {
  try {
    NodeSolve ns = solve_problem_at(spec, t, x, m, seed);
    NodeValue out;
    out.u = ns.solution.value;
    out.se = ns.solution.value_stderr;
    out.samples = std::move(ns.solution.value_samples);
    return out;
  } catch (const solver_error& e) {
    throw solver_error("node (t=" + std::to_string(t) +
                       ", x=" + std::to_string(x.empty() ? 0.0 : x[0]) +
                       ", m=" + std::to_string(m.empty() ? 0.0 : m[0]) +
                       "): " + e.what());
  }
}

PartialEstimate finite_diff_partials(const ProblemSpec& spec, double t, double x,
                                     double m, double h, std::uint64_t seed) {
  if (!(h > 0.0)) throw config_error("bump size must be positive");
  if (spec.coeffs.n != 1 || spec.model.d != 1)
    throw config_error("partial estimation expects scalar state and martingale");
  auto node = [&](double xx, double mm) {
    const double xv[1] = {xx}, mv[1] = {mm};
    return estimate_u_node(spec, t, std::span<const double>(xv, 1),
                           std::span<const double>(mv, 1), seed);
  };
  const NodeValue xp = node(x + h, m), xm = node(x - h, m);
  const NodeValue mp = node(x, m + h), mm = node(x, m - h);
  PartialEstimate out;
  paired_fd(xp, xm, h, out.d2u, out.d2u_se);
  paired_fd(mp, mm, h, out.d3u, out.d3u_se);
  const double se_u =
      sample_sd(xp.samples) / std::sqrt(static_cast<double>(xp.samples.size()));
  out.noise_dominated =
      se_u > h * std::max({std::fabs(out.d2u), std::fabs(out.d3u), 1e-12});
  return out;
}

bool MarkovSurface::interpolate_partials(std::size_t it, double x, double m,
                                         double& d2, double& d3) const {
  if (xs.size() < 2 || ms.size() < 2) return false;
  if (x < xs.front() || x > xs.back() || m < ms.front() || m > ms.back())
    return false;
  std::size_t jx = 0;
  while (jx + 2 < xs.size() && xs[jx + 1] <= x) ++jx;
  std::size_t jm = 0;
  while (jm + 2 < ms.size() && ms[jm + 1] <= m) ++jm;
  const double wx = (x - xs[jx]) / (xs[jx + 1] - xs[jx]);
  const double wm = (m - ms[jm]) / (ms[jm + 1] - ms[jm]);
  auto lerp2 = [&](const std::vector<double>& f) {
    const double f00 = f[index(it, jx, jm)], f01 = f[index(it, jx, jm + 1)];
    const double f10 = f[index(it, jx + 1, jm)], f11 = f[index(it, jx + 1, jm + 1)];
    return (1 - wx) * ((1 - wm) * f00 + wm * f01) +
           wx * ((1 - wm) * f10 + wm * f11);
  };
  d2 = lerp2(d2u);
  d3 = lerp2(d3u);
  return true;
}

MarkovSurface build_surface(const ProblemSpec& spec, const std::vector<double>& ts,
                            const std::vector<double>& xs,
                            const std::vector<double>& ms, double h,
                            std::uint64_t seed) {
  if (ts.empty() || xs.empty() || ms.empty())
    throw config_error("surface needs at least one node on every axis");
  MarkovSurface s;
  s.ts = ts;
  s.xs = xs;
  s.ms = ms;
  s.bump_h = h;
  const std::size_t total = ts.size() * xs.size() * ms.size();
  s.u.assign(total, 0.0);
  s.se.assign(total, 0.0);
  s.d2u.assign(total, 0.0);
  s.d3u.assign(total, 0.0);
  s.d2u_se.assign(total, 0.0);
  s.d3u_se.assign(total, 0.0);
  for (std::size_t it = 0; it < ts.size(); ++it)
    for (std::size_t ix = 0; ix < xs.size(); ++ix)
      for (std::size_t im = 0; im < ms.size(); ++im) {
        const double xv[1] = {xs[ix]}, mv[1] = {ms[im]};
        const NodeValue center =
            estimate_u_node(spec, ts[it], std::span<const double>(xv, 1),
                            std::span<const double>(mv, 1), seed);
        const PartialEstimate pd =
            finite_diff_partials(spec, ts[it], xs[ix], ms[im], h, seed);
        const std::size_t j = s.index(it, ix, im);
        s.u[j] = center.u;
        s.se[j] = center.se;
        s.d2u[j] = pd.d2u;
        s.d3u[j] = pd.d3u;
        s.d2u_se[j] = pd.d2u_se;
        s.d3u_se[j] = pd.d3u_se;
      }
  return s;
}

void write_surface_csv(const MarkovSurface& s, const std::string& file) {
  csv::Writer w(file);
  w.line("t,x,m,u,stderr,d2u,d3u");
  for (std::size_t it = 0; it < s.ts.size(); ++it)
    for (std::size_t ix = 0; ix < s.xs.size(); ++ix)
      for (std::size_t im = 0; im < s.ms.size(); ++im) {
        const std::size_t j = s.index(it, ix, im);
        w.field(s.ts[it]);
        w.field(s.xs[ix]);
        w.field(s.ms[im]);
        w.field(s.u[j]);
        w.field(s.se[j]);
        w.field(s.d2u[j]);
        w.field(s.d3u[j]);
        w.endline();
      }
}

namespace {

// Linear derivative equation solved on top of a base solution. The generator
// is A_const + A_y u + A_v . v with per-(path, step) coefficients; the
// terminal values are path data.
NodeValue linear_derivative_solve(const PathBundle& bundle,
                                  const ForwardSolution& forward,
                                  const std::vector<double>& a_const,
                                  const std::vector<double>& a_y,
                                  const std::vector<double>& a_v,
                                  const std::vector<double>& terminal_values,
                                  const RegressionBasis& basis,
                                  const PicardOptions& picard) {
  const std::size_t nodes = bundle.nodes(), d = bundle.d;
  StepDriverFn g = [&a_const, &a_y, &a_v, nodes, d](
                       std::size_t p, std::size_t i, double, std::span<const double>,
                       std::span<const double>, double u, std::span<const double> v) {
    double s = a_const[p * nodes + i] + a_y[p * nodes + i] * u;
    for (std::size_t c = 0; c < d; ++c) s += a_v[(p * nodes + i) * d + c] * v[c];
    return s;
  };
  BsdeSolution sol = solve_lipschitz_values(g, terminal_values, forward, bundle,
                                            basis, picard);
  NodeValue out;
  out.u = sol.value;
  out.se = sol.value_stderr;
  out.samples = std::move(sol.value_samples);
  return out;
}

}  // namespace

PartialEstimate derivative_bsde_solve(const ProblemSpec& spec, double t, double x,
                                      double m, std::uint64_t seed) {
  if (spec.coeffs.n != 1 || spec.model.d != 1)
    throw config_error("derivative solve expects scalar state and martingale");
  if (!spec.driver.has_partials())
    throw config_error("derivative solve needs the driver partial derivatives");
  if (!spec.terminal.dF_dx || !spec.terminal.dF_dm)
    throw config_error("derivative solve needs the terminal gradients");
  if (!spec.coeffs.has_partials())
    throw config_error("derivative solve needs the coefficient partial derivatives");
  const bool orthogonal = spec.kind == ProblemSpec::SolveKind::quadratic_orthogonal;
  if (spec.kappa != 0.0 && !orthogonal)
    throw config_error(
        "a nonzero bracket coefficient needs the orthogonal two-block basis");

  const double xv[1] = {x}, mv[1] = {m};
  NodeSolve base = solve_problem_at(spec, t, std::span<const double>(xv, 1),
                                    std::span<const double>(mv, 1), seed);
  simulate_variational(spec.coeffs, base.bundle, base.forward);

  const std::size_t P = base.bundle.paths, nodes = base.bundle.nodes();
  const std::size_t last = nodes - 1;
  const std::size_t i0 = base.forward.start.index;

  // Work either on the plain basis or on the two-block system; in the latter
  // case the generator h = f * f_scale + (kappa/2) v_N^2 supplies the partials
  // by the chain rule and the flows extend with a zero N-column.
  const bool aug = orthogonal;
  MrpTransform tr;
  if (aug) tr = mrp_transform(base.bundle, spec.driver, spec.kappa);
  const PathBundle& bu = aug ? tr.augmented : base.bundle;
  const std::size_t dd = bu.d;

  // Coefficient arrays of the linearized generator at the base solution.
  std::vector<double> a_y(P * nodes, 0.0), a_v(P * nodes * dd, 0.0);
  std::vector<double> a_const_x(P * nodes, 0.0), a_const_m(P * nodes, 0.0);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    double v[8], dfv[8], dfx[8], dfm[8];
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double tt = bu.grid.points[i];
        std::span<const double> xs(base.forward.x_at(p, i), 1);
        std::span<const double> msp(base.bundle.m_at(p, i), 1);
        // rotated control of the base solution in the plain geometry
        const double* q = base.bundle.q_at(p, i);
        v[0] = base.solution.z_at(p, i)[0] * q[0];
        const double y = base.solution.y_at(p, i);
        std::span<const double> vs(v, 1);
        spec.driver.df_dx(tt, xs, msp, y, vs, std::span<double>(dfx, 1));
        spec.driver.df_dm(tt, xs, msp, y, vs, std::span<double>(dfm, 1));
        const double dfy = spec.driver.df_dy(tt, xs, msp, y, vs);
        spec.driver.df_dv(tt, xs, msp, y, vs, std::span<double>(dfv, 1));
        if (!aug) {
          a_y[p * nodes + i] = dfy;
          a_v[p * nodes + i] = dfv[0];
          const double dx = base.forward.Dx[(p * nodes + i)];
          const double dm = base.forward.Dm[(p * nodes + i)];
          a_const_x[p * nodes + i] = dfx[0] * dx;
          a_const_m[p * nodes + i] = dfx[0] * dm + dfm[0];
        } else {
          const double fs = tr.f_scale[p * nodes + i];
          const double zs = tr.z_scale[p * nodes + i];
          a_y[p * nodes + i] = dfy * fs;
          a_v[(p * nodes + i) * dd] = dfv[0] * zs * fs;
          // d/dv_N of (kappa/2) v_N^2 at the base control
          const double* qa = bu.q_at(p, i);
          const double vN = base.solution.U_orth[p * nodes + i] * qa[dd * dd - 1];
          a_v[(p * nodes + i) * dd + 1] = spec.kappa * vN;
          const double dx = base.forward.Dx[(p * nodes + i)];
          const double dm = base.forward.Dm[(p * nodes + i)];
          a_const_x[p * nodes + i] = dfx[0] * dx * fs;
          a_const_m[p * nodes + i] = (dfx[0] * dm + dfm[0]) * fs;
        }
      }
  });

  // Terminal gradients chained through the flows.
  std::vector<double> term_x(P), term_m(P);
  for (std::size_t p = 0; p < P; ++p) {
    double gx[1], gm[1];
    std::span<const double> xs(base.forward.x_at(p, last), 1);
    std::span<const double> msp(base.bundle.m_at(p, last), 1);
    spec.terminal.dF_dx(xs, msp, std::span<double>(gx, 1));
    spec.terminal.dF_dm(xs, msp, std::span<double>(gm, 1));
    const double dxT = base.forward.Dx[(p * nodes + last)];
    const double dmT = base.forward.Dm[(p * nodes + last)];
    term_x[p] = gx[0] * dxT;
    term_m[p] = gx[0] * dmT + gm[0];
  }

  const ForwardSolution& fw = base.forward;
  NodeValue ux = linear_derivative_solve(bu, fw, a_const_x, a_y, a_v, term_x,
                                         spec.basis, spec.quad.picard);
  NodeValue um = linear_derivative_solve(bu, fw, a_const_m, a_y, a_v, term_m,
                                         spec.basis, spec.quad.picard);
  PartialEstimate out;
  out.d2u = ux.u;
  out.d2u_se = ux.se;
  out.d3u = um.u;
  out.d3u_se = um.se;
  return out;
}

RepresentationReport representation_check(const BsdeSolution& solution,
                                          const ForwardSolution& forward,
                                          const PathBundle& bundle,
                                          const MarkovSurface& surface,
                                          const SdeCoefficients& coeffs,
                                          std::size_t max_cells) {
  if (coeffs.n != 1 || bundle.d != 1)
    throw config_error("representation check expects scalar state and martingale");
  RepresentationReport rep;
  const std::size_t P = bundle.paths, nodes = bundle.nodes();
  std::vector<std::size_t> slice_idx;
  for (double ts : surface.ts) slice_idx.push_back(bundle.grid.index_of(ts));
  const std::size_t want = std::max<std::size_t>(max_cells, 100);
  const std::size_t stride =
      std::max<std::size_t>(1, P * slice_idx.size() / want);
  double sig[1];
  for (std::size_t it = 0; it < slice_idx.size(); ++it) {
    const std::size_t i = slice_idx[it];
    if (i + 1 >= nodes) continue;
    for (std::size_t p = (it % stride); p < P; p += stride) {
      const double x = forward.x_at(p, i)[0];
      const double m = bundle.m_at(p, i)[0];
      double d2, d3;
      if (!surface.interpolate_partials(it, x, m, d2, d3)) {
        ++rep.excluded;
        continue;
      }
      coeffs.sigma(surface.ts[it], std::span<const double>(&x, 1),
                   std::span<const double>(&m, 1), std::span<double>(sig, 1));
      const double pred = d2 * sig[0] + d3;
      const double z = solution.z_at(p, i)[0];
      rep.cells.push_back({surface.ts[it], x, m, z, pred, z - pred});
    }
  }
  if (rep.cells.size() < 100)
    throw solver_error("representation check has fewer than 100 usable cells");
  std::vector<double> rel, absr;
  rel.reserve(rep.cells.size());
  absr.reserve(rep.cells.size());
  for (const auto& c : rep.cells) {
    absr.push_back(std::fabs(c.resid));
    rel.push_back(std::fabs(c.resid) / (std::fabs(c.z) + 1e-6));
  }
  rep.median_rel = quantile_of(rel, 0.5);
  rep.q25 = quantile_of(absr, 0.25);
  rep.q50 = quantile_of(absr, 0.5);
  rep.q75 = quantile_of(absr, 0.75);
  std::vector<double> d3s;
  for (std::size_t j = 0; j < surface.d3u.size(); ++j)
    d3s.push_back(std::fabs(surface.d3u[j]));
  rep.median_abs_d3u_term = quantile_of(d3s, 0.5);
  return rep;
}

void write_representation_csv(const RepresentationReport& report,
                              const std::string& file) {
  csv::Writer w(file);
  w.line("t,cell_x,cell_m,Z,pred,resid");
  for (const auto& c : report.cells) {
    w.field(c.t);
    w.field(c.x);
    w.field(c.m);
    w.field(c.z);
    w.field(c.pred);
    w.field(c.resid);
    w.endline();
  }
}

BracketCheck bracket_check(const BsdeSolution& solution, const PathBundle& bundle) {
  const std::size_t P = bundle.paths, nodes = bundle.nodes(), d = bundle.d;
  const std::size_t i0 = solution.start_index;
  BracketCheck out;
  out.sup_residual.assign(P, 0.0);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> acc_ym(d), acc_z(d);
    for (std::size_t p = pa; p < pe; ++p) {
      std::fill(acc_ym.begin(), acc_ym.end(), 0.0);
      std::fill(acc_z.begin(), acc_z.end(), 0.0);
      double sup = 0.0;
      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double dy = solution.y_at(p, i + 1) - solution.y_at(p, i);
        const double* m0 = bundle.m_at(p, i);
        const double* m1 = bundle.m_at(p, i + 1);
        const double* q = bundle.q_at(p, i);
        const double* z = solution.z_at(p, i);
        const double dC = bundle.dC(p, i);
        for (std::size_t c = 0; c < d; ++c) {
          acc_ym[c] += dy * (m1[c] - m0[c]);
          double zqq = 0.0;
          for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
              zqq += z[a] * q[a * d + b] * q[b * d + c];
          acc_z[c] += zqq * dC;
          sup = std::max(sup, std::fabs(acc_ym[c] - acc_z[c]));
        }
      }
      out.sup_residual[p] = sup;
    }
  });
  std::vector<double> copy = out.sup_residual;
  out.median_sup = quantile_of(copy, 0.5);
  return out;
}

OracleValue half_window_log_oracle(const MartingaleModel& model, double T, double t,
                                   double x, double m, std::size_t oracle_paths,
                                   std::uint64_t seed) {
  if (x <= -1.0) throw config_error("log-payoff oracle needs x > -1");
  if (t > T) throw config_error("oracle time beyond the horizon");
  OracleValue out;
  const double tau = std::max(t, 0.5 * T);
  if (model.kind == MartingaleModel::Kind::brownian) {
    out.value = std::log1p(x) - 0.5 * (T - tau);
    out.se = 0.0;
    return out;
  }
  // Nested Monte Carlo of E[M_T^2 - M_tau^2 | M_t = m] on a fresh grid.
  if (model.d != 1) throw config_error("oracle expects a scalar martingale");
  TimeGrid grid = TimeGrid::uniform_with(T, 256, {tau, t});
  MartingaleModel mc = model;
  mc.with_orthogonal = false;
  PathStart start;
  start.index = grid.index_of(t);
  start.m = {m};
  start.bracket0 = restart_bracket_level(mc, t, start.m);
  PathBundle b = generate_paths(mc, grid, oracle_paths, seed, &start);
  const std::size_t itau = grid.index_of(tau), last = grid.points.size() - 1;
  double s = 0.0, s2 = 0.0;
  for (std::size_t p = 0; p < oracle_paths; ++p) {
    const double mt = b.m_at(p, last)[0];
    const double mtau = b.m_at(p, itau)[0];
    const double val = mt * mt - mtau * mtau;
    s += val;
    s2 += val * val;
  }
  const double n = static_cast<double>(oracle_paths);
  const double mean = s / n;
  const double var = std::max(0.0, s2 / n - mean * mean);
  out.value = std::log1p(x) - 0.5 * mean;
  out.se = 0.5 * std::sqrt(var / n);
  return out;
}

}  // namespace qfbsde
