#include "qfbsde/problem.hpp"

namespace qfbsde {

std::vector<double> restart_bracket_level(const MartingaleModel& model, double t,
                                          std::span<const double> m) {
  const std::size_t d = model.d;
  std::vector<double> level(d * d, 0.0);
  if (t <= 0.0) return level;
  if (model.kind == MartingaleModel::Kind::brownian) {
    for (std::size_t j = 0; j < d; ++j) level[j * d + j] = t;
    return level;
  }
  std::vector<double> a(d * d);
  model.volatility(t, m, a);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a[r * d + k] * a[c * d + k];
      level[r * d + c] = s * t;
    }
  return level;
}

NodeSolve solve_problem_at(const ProblemSpec& spec, double t,
                           std::span<const double> x, std::span<const double> m,
                           std::uint64_t seed) {
  NodeSolve out;
  const std::size_t idx = spec.grid.index_of(t);
  PathStart start;
  start.index = idx;
  start.m.assign(m.begin(), m.end());
  start.bracket0 = restart_bracket_level(spec.model, t, m);
  start.n = spec.model.n0;
  start.bracket_nn0 = spec.model.with_orthogonal ? t : 0.0;
  if (spec.model.with_orthogonal && spec.model.orth_volatility && t > 0.0) {
    const double an = spec.model.orth_volatility(t, spec.model.n0);
    start.bracket_nn0 = an * an * t;
  }
  out.bundle = generate_paths(spec.model, spec.grid, spec.paths, seed, &start);

  ForwardStart fs;
  fs.index = idx;
  fs.x.assign(x.begin(), x.end());
  out.forward = simulate_forward(spec.coeffs, out.bundle, fs);

  switch (spec.kind) {
    case ProblemSpec::SolveKind::lipschitz:
      out.solution = solve_lipschitz(spec.driver, spec.terminal, out.forward,
                                     out.bundle, spec.basis, spec.quad.picard);
      break;
    case ProblemSpec::SolveKind::quadratic:
      out.solution = solve_quadratic(spec.driver, spec.terminal, out.forward,
                                     out.bundle, spec.basis, spec.quad);
      break;
    case ProblemSpec::SolveKind::quadratic_orthogonal:
      out.solution =
          solve_quadratic_with_orthogonal(spec.driver, spec.terminal, out.forward,
                                          out.bundle, spec.kappa, spec.basis,
                                          spec.quad);
      break;
  }
  return out;
}

}  // namespace qfbsde
