#include "qfbsde/mrp.hpp"

#include <cmath>

#include "qfbsde/linalg.hpp"
#include "qfbsde/parallel.hpp"

namespace qfbsde {

void MrpTransform::q_tilde(std::size_t p, std::size_t i, double* out) const {
  const std::size_t d = base_d;
  const std::size_t da = d + 1;
  const std::size_t nodes = augmented.nodes();
  const double p1 = phi1[p * nodes + i];
  const double p2 = phi2[p * nodes + i];
  for (std::size_t j = 0; j < da * da; ++j) out[j] = 0.0;
  // Rebuild the original per-step q from the stored bracket increments.
  const std::size_t is = std::min(i, nodes - 2);
  const double* b0 = augmented.bracket_at(p, is);
  const double* b1 = augmented.bracket_at(p, is + 1);
  double tr0 = 0.0, tr1 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    tr0 += b0[j * da + j];
    tr1 += b1[j * da + j];
  }
  const double dC = std::atan(tr1) - std::atan(tr0);
  if (dC > 0.0) {
    std::vector<double> dbr(d * d), q(d * d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c)
        dbr[r * d + c] = (b1[r * da + c] - b0[r * da + c]) / dC;
    linalg::sym_sqrt(dbr.data(), d, q.data());
    const double s = std::sqrt(p1);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * da + c] = q[r * d + c] * s;
  }
  out[d * da + d] = std::sqrt(p2);
}

PathBundle augment_orthogonal(const PathBundle& bundle) {
  if (!bundle.has_orthogonal())
    throw config_error("the two-block reformulation needs N with its bracket");
  const std::size_t P = bundle.paths, nodes = bundle.nodes(), d = bundle.d;
  const std::size_t da = d + 1;
  PathBundle aug;
  aug.grid = bundle.grid;
  aug.paths = P;
  aug.d = da;
  aug.start_index = bundle.start_index;
  aug.seed = bundle.seed;
  aug.M.assign(P * nodes * da, 0.0);
  aug.bracketMM.assign(P * nodes * da * da, 0.0);
  aug.C.assign(P * nodes, 0.0);
  aug.q.assign(P * nodes * da * da, 0.0);

  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> dbr(da * da);
    for (std::size_t p = pa; p < pe; ++p) {
      for (std::size_t i = 0; i < nodes; ++i) {
        const double* m = bundle.m_at(p, i);
        double* ma = &aug.M[(p * nodes + i) * da];
        for (std::size_t j = 0; j < d; ++j) ma[j] = m[j];
        ma[d] = bundle.N_orth[p * nodes + i];
        const double* br = bundle.bracket_at(p, i);
        double* bra = &aug.bracketMM[(p * nodes + i) * da * da];
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c) bra[r * da + c] = br[r * d + c];
        bra[d * da + d] = bundle.bracketNN[p * nodes + i];
        double tr_all = bra[d * da + d];
        for (std::size_t j = 0; j < d; ++j) tr_all += br[j * d + j];
        aug.C[p * nodes + i] = std::atan(tr_all);
      }
      for (std::size_t i = 0; i + 1 < nodes; ++i) {
        const double dCt = aug.C[p * nodes + i + 1] - aug.C[p * nodes + i];
        if (dCt <= 0.0) continue;
        const double* b0 = aug.bracket_at(p, i);
        const double* b1 = aug.bracket_at(p, i + 1);
        for (std::size_t r = 0; r < da; ++r)
          for (std::size_t c = 0; c < da; ++c)
            dbr[r * da + c] = (b1[r * da + c] - b0[r * da + c]) / dCt;
        linalg::sym_sqrt(dbr.data(), da, &aug.q[(p * nodes + i) * da * da]);
      }
      if (nodes >= 2)
        for (std::size_t j = 0; j < da * da; ++j)
          aug.q[(p * nodes + nodes - 1) * da * da + j] =
              aug.q[(p * nodes + nodes - 2) * da * da + j];
    }
  });
  return aug;
}

MrpTransform mrp_transform(const PathBundle& bundle, const StepDriverFn& f,
                           double kappa) {
  const std::size_t P = bundle.paths, nodes = bundle.nodes(), d = bundle.d;
  MrpTransform tr;
  tr.kappa = kappa;
  tr.base_d = d;
  tr.augmented = augment_orthogonal(bundle);
  tr.phi1.assign(P * nodes, 0.0);
  tr.phi2.assign(P * nodes, 0.0);
  tr.f_scale.assign(P * nodes, 0.0);
  tr.z_scale.assign(P * nodes, 0.0);

  const PathBundle& aug = tr.augmented;
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    for (std::size_t p = pa; p < pe; ++p) {
      for (std::size_t i = 0; i + 1 < nodes; ++i) {
        const double* b0 = bundle.bracket_at(p, i);
        const double* b1 = bundle.bracket_at(p, i + 1);
        double dm_tr = 0.0;
        for (std::size_t j = 0; j < d; ++j) dm_tr += b1[j * d + j] - b0[j * d + j];
        const double dn_tr =
            bundle.bracketNN[p * nodes + i + 1] - bundle.bracketNN[p * nodes + i];
        if (dm_tr < -1e-14 || dn_tr < -1e-14)
          throw solver_error("negative bracket increment: corrupted input");
        const double tot = dm_tr + dn_tr;
        const double p1 = tot > 0.0 ? dm_tr / tot : 0.5;
        tr.phi1[p * nodes + i] = p1;
        tr.phi2[p * nodes + i] = 1.0 - p1;

        const double dCt = aug.C[p * nodes + i + 1] - aug.C[p * nodes + i];
        const double dC = bundle.dC(p, i);
        tr.f_scale[p * nodes + i] = dCt > 0.0 ? dC / dCt : 0.0;
        // z_scale undoes the clock change on the M block of the rotated
        // control: v_M = Z q sqrt(dC/dC~), so Z q = v_M sqrt(dC~/dC).
        tr.z_scale[p * nodes + i] = dC > 0.0 ? std::sqrt(dCt / dC) : 0.0;
      }
      if (nodes >= 2) {
        const std::size_t a = nodes - 2, b = nodes - 1;
        tr.phi1[p * nodes + b] = tr.phi1[p * nodes + a];
        tr.phi2[p * nodes + b] = tr.phi2[p * nodes + a];
        tr.f_scale[p * nodes + b] = tr.f_scale[p * nodes + a];
        tr.z_scale[p * nodes + b] = tr.z_scale[p * nodes + a];
      }
    }
  });

  // h(p,i,t,x,m~,y,v~) = f(t,x,m,y, v_M z_scale) dC/dC~ + (kappa/2) v_N^2.
  // Summed against dC~ this reproduces sum f dC + (kappa/2) sum U^2 d<N>
  // exactly on the grid.
  auto fs_vec = std::make_shared<std::vector<double>>(tr.f_scale);
  auto zs_vec = std::make_shared<std::vector<double>>(tr.z_scale);
  const std::size_t base_d = d;
  tr.h = [f, fs_vec, zs_vec, kappa, base_d, nodes](
             std::size_t p, std::size_t i, double t, std::span<const double> x,
             std::span<const double> m, double y, std::span<const double> v) {
    double vm[8];
    const double zscale = (*zs_vec)[p * nodes + i];
    for (std::size_t c = 0; c < base_d; ++c) vm[c] = v[c] * zscale;
    const double fv = f(p, i, t, x, m.first(base_d), y,
                        std::span<const double>(vm, base_d));
    const double vn = v[base_d];
    return fv * (*fs_vec)[p * nodes + i] + 0.5 * kappa * vn * vn;
  };
  return tr;
}

MrpTransform mrp_transform(const PathBundle& bundle, const Driver& driver,
                           double kappa) {
  return mrp_transform(bundle, as_step_driver(driver), kappa);
}

BsdeSolution solve_quadratic_with_orthogonal(const StepDriverFn& f,
                                             const DriverGrowth& growth_in,
                                             const TerminalCondition& terminal,
                                             const ForwardSolution& forward,
                                             const PathBundle& bundle, double kappa,
                                             const RegressionBasis& basis,
                                             const QuadOptions& opts) {
  MrpTransform tr = mrp_transform(bundle, f, kappa);
  DriverGrowth growth = growth_in;
  growth.kappa = kappa;
  growth.gamma = std::max(growth.gamma, std::fabs(kappa));
  growth.lipschitz_yz = growth.lipschitz_yz && kappa == 0.0;

  BsdeSolution aug_sol = solve_quadratic(tr.h, growth, terminal, forward,
                                         tr.augmented, basis, opts);

  const std::size_t P = aug_sol.paths, nodes = aug_sol.nodes;
  const std::size_t d = bundle.d, da = d + 1;
  BsdeSolution sol;
  sol.paths = P;
  sol.nodes = nodes;
  sol.d = d;
  sol.start_index = aug_sol.start_index;
  sol.Y = std::move(aug_sol.Y);
  sol.Z.assign(P * nodes * d, 0.0);
  sol.U_orth.assign(P * nodes, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < nodes; ++i) {
      const double* zt = &aug_sol.Z[(p * nodes + i) * da];
      for (std::size_t c = 0; c < d; ++c) sol.Z[(p * nodes + i) * d + c] = zt[c];
      sol.U_orth[p * nodes + i] = zt[d];
    }
  sol.picard = aug_sol.picard;
  sol.audit = aug_sol.audit;
  sol.value_projections = aug_sol.value_projections;
  sol.max_condition = aug_sol.max_condition;
  sol.value = aug_sol.value;
  sol.value_stderr = aug_sol.value_stderr;
  sol.sup_abs_y = aug_sol.sup_abs_y;
  sol.value_samples = std::move(aug_sol.value_samples);
  sol.coefficients = std::move(aug_sol.coefficients);
  sol.orth_step_residual_mean =
      orth_equation_residual(sol, bundle, f, forward, kappa);
  return sol;
}

BsdeSolution solve_quadratic_with_orthogonal(const Driver& driver,
                                             const TerminalCondition& terminal,
                                             const ForwardSolution& forward,
                                             const PathBundle& bundle, double kappa,
                                             const RegressionBasis& basis,
                                             const QuadOptions& opts) {
  return solve_quadratic_with_orthogonal(as_step_driver(driver), driver.growth,
                                         terminal, forward, bundle, kappa, basis,
                                         opts);
}

double orth_equation_residual(const BsdeSolution& solution, const PathBundle& bundle,
                              const StepDriverFn& f, const ForwardSolution& forward,
                              double kappa) {
  const std::size_t P = solution.paths, nodes = solution.nodes, d = solution.d;
  const std::size_t i0 = solution.start_index;
  if (!bundle.has_orthogonal() || solution.U_orth.empty())
    throw config_error("orthogonal residual needs N and the U component");
  const std::size_t nblocks = block_count(P);
  std::vector<double> bsum(nblocks, 0.0);
  std::vector<long long> bcount(nblocks, 0);
  for_blocks(P, [&](std::size_t blk, std::size_t pa, std::size_t pe) {
    double v[8];
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double* z = solution.z_at(p, i);
        const double* q = bundle.q_at(p, i);
        for (std::size_t c = 0; c < d; ++c) {
          double s = 0.0;
          for (std::size_t a = 0; a < d; ++a) s += z[a] * q[a * d + c];
          v[c] = s;
        }
        const double fv =
            f(p, i, bundle.grid.points[i],
              std::span<const double>(forward.x_at(p, i), forward.n),
              std::span<const double>(bundle.m_at(p, i), d), solution.y_at(p, i),
              std::span<const double>(v, d));
        const double* m0 = bundle.m_at(p, i);
        const double* m1 = bundle.m_at(p, i + 1);
        double zdm = 0.0;
        for (std::size_t c = 0; c < d; ++c) zdm += z[c] * (m1[c] - m0[c]);
        const double u = solution.U_orth[p * nodes + i];
        const double dn =
            bundle.N_orth[p * nodes + i + 1] - bundle.N_orth[p * nodes + i];
        const double dbn =
            bundle.bracketNN[p * nodes + i + 1] - bundle.bracketNN[p * nodes + i];
        const double resid = solution.y_at(p, i + 1) - solution.y_at(p, i) - zdm -
                             u * dn + fv * bundle.dC(p, i) +
                             0.5 * kappa * u * u * dbn;
        bsum[blk] += std::fabs(resid);
        ++bcount[blk];
      }
  });
  double total = 0.0;
  long long count = 0;
  for (std::size_t b = 0; b < nblocks; ++b) {
    total += bsum[b];
    count += bcount[b];
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace qfbsde
