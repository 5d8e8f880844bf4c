#include <cmath>

#include "doctest.h"
#include "qfbsde/mrp.hpp"
#include "qfbsde/presets.hpp"

using namespace qfbsde;

namespace {

struct Setup {
  PathBundle bundle;
  ForwardSolution forward;
};

// (M, N) = two independent Brownian components; X = x0 + M.
Setup pair_basis(double T, std::size_t N, std::size_t P, std::uint64_t seed,
                 double x0 = 0.0) {
  MartingaleModel model;
  model.d = 1;
  model.m0 = {0.0};
  model.with_orthogonal = true;
  auto grid = TimeGrid::uniform(T, N);
  Setup s;
  s.bundle = generate_paths(model, grid, P, seed);
  SdeCoefficients coeffs;
  coeffs.n = 1;
  coeffs.d = 1;
  coeffs.sigma = presets::constant_coeff(1, 1, 1.0);
  coeffs.b = presets::zero_coeff(1, 1);
  s.forward = simulate_forward(coeffs, s.bundle, {0, {x0}});
  return s;
}

}  // namespace

TEST_CASE("two Brownian components split the clock evenly") {
  auto s = pair_basis(1.0, 64, 256, 1);
  auto tr = mrp_transform(s.bundle, presets::zero_driver(), 0.7);
  for (std::size_t p = 0; p < 256; ++p)
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(tr.phi1[p * 65 + i] == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(tr.phi2[p * 65 + i] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("phi weights are a partition of unity in [0,1]") {
  MartingaleModel model;
  model.d = 1;
  model.m0 = {0.2};
  model.kind = MartingaleModel::Kind::diffusion_martingale;
  model.volatility = presets::sqrt_one_plus_m2();
  model.with_orthogonal = true;
  model.orth_volatility = [](double, double n) { return 0.5 + 0.1 * n * n; };
  auto grid = TimeGrid::uniform(1.0, 48);
  auto b = generate_paths(model, grid, 128, 2);
  auto tr = mrp_transform(b, presets::zero_driver(), 1.0);
  for (std::size_t j = 0; j < tr.phi1.size(); ++j) {
    CHECK(tr.phi1[j] + tr.phi2[j] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr.phi1[j] >= 0.0);
    CHECK(tr.phi1[j] <= 1.0);
    CHECK(tr.phi2[j] >= 0.0);
    CHECK(tr.phi2[j] <= 1.0);
  }
}

TEST_CASE("augmented bundle satisfies the bracket identity of its density") {
  auto s = pair_basis(1.0, 32, 64, 3);
  PathBundle aug = augment_orthogonal(s.bundle);
  CHECK(aug.d == 2);
  for (std::size_t p = 0; p < 64; ++p) {
    double acc[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < 32; ++i) {
      const double* q = aug.q_at(p, i);
      const double dC = aug.dC(p, i);
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
          double s2 = 0.0;
          for (std::size_t k = 0; k < 2; ++k) s2 += q[r * 2 + k] * q[c * 2 + k];
          acc[r * 2 + c] += s2 * dC;
        }
    }
    const double* want = aug.bracket_at(p, 32);
    for (int j = 0; j < 4; ++j)
      CHECK(std::fabs(acc[j] - want[j]) <= 1e-11 * std::max(1.0, std::fabs(want[j])));
  }
}

TEST_CASE("q_tilde is the block density with the phi weights") {
  auto s = pair_basis(1.0, 16, 8, 4);
  auto tr = mrp_transform(s.bundle, presets::zero_driver(), 1.0);
  double qt[9];
  tr.q_tilde(0, 5, qt);
  // Off-diagonal blocks vanish; diagonal carries q sqrt(phi1) and sqrt(phi2).
  CHECK(qt[1] == 0.0);
  CHECK(qt[2] == 0.0);
  const double p1 = tr.phi1[0 * 17 + 5];
  CHECK(qt[3] == doctest::Approx(std::sqrt(1.0 - p1)).epsilon(1e-12));
  CHECK(qt[0] > 0.0);
}

TEST_CASE("generator integral identity holds pathwise on the grid") {
  auto s = pair_basis(1.0, 40, 64, 5);
  const double kappa = 1.3;
  Driver f = presets::zero_driver();
  f.f = [](double t, std::span<const double> x, std::span<const double> m, double y,
           std::span<const double> v) {
    return 0.4 * std::sin(x[0] + m[0]) - 0.2 * y + 0.3 * v[0] * v[0];
  };
  auto tr = mrp_transform(s.bundle, f, kappa);
  const std::size_t nodes = 41, d = 1, da = 2;
  // Arbitrary smooth (Y, Z, U) fields evaluated along the paths.
  for (std::size_t p = 0; p < 64; ++p) {
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
      const double x = s.forward.x_at(p, i)[0];
      const double m = s.bundle.m_at(p, i)[0];
      const double nn = s.bundle.N_orth[p * nodes + i];
      const double y = std::cos(x) + 0.1 * m;
      const double z = 0.5 + 0.2 * std::sin(m);
      const double u = 0.3 * std::cos(nn);
      // original side: f(Z q*) dC + (kappa/2) U^2 d<N>
      const double q = s.bundle.q_at(p, i)[0];
      const double v1[1] = {z * q};
      const double fd = f.f(s.bundle.grid.points[i], std::span<const double>(&x, 1),
                            std::span<const double>(&m, 1), y,
                            std::span<const double>(v1, 1));
      const double dbn =
          s.bundle.bracketNN[p * nodes + i + 1] - s.bundle.bracketNN[p * nodes + i];
      lhs += fd * s.bundle.dC(p, i) + 0.5 * kappa * u * u * dbn;
      // transformed side: h(Z~ q~*) dC~ with Z~ = (z, u)
      const double* qa = tr.augmented.q_at(p, i);
      double vt[2];
      const double zt[2] = {z, u};
      for (std::size_t c = 0; c < da; ++c) {
        double acc = 0.0;
        for (std::size_t a = 0; a < da; ++a) acc += zt[a] * qa[a * da + c];
        vt[c] = acc;
      }
      const double hv = tr.h(p, i, s.bundle.grid.points[i],
                             std::span<const double>(&x, 1),
                             std::span<const double>(tr.augmented.m_at(p, i), da), y,
                             std::span<const double>(vt, da));
      rhs += hv * tr.augmented.dC(p, i);
    }
    CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
  (void)d;
}

TEST_CASE("orthogonal control vanishes when the claim ignores N") {
  const std::size_t N = 30, P = 8192;
  auto s = pair_basis(1.0, N, P, 6);
  auto term = presets::logistic_terminal(0.0, 0.5, 1.0);  // function of X only
  QuadOptions q;
  q.picard = {1e-7, 25};
  auto sol = solve_quadratic_with_orthogonal(presets::zero_driver(), term, s.forward,
                                             s.bundle, 0.0, {3, 1e-8}, q);
  REQUIRE_FALSE(sol.U_orth.empty());
  // Noise scale of the fitted U per slice: sd of the martingale-increment
  // targets shrunk by sqrt(k/P) through the regression.
  const double k_feat = 20.0;  // degree-3 basis on (x, m, n)
  const std::size_t nodes = N + 1;
  for (std::size_t i = 2; i + 1 < nodes; i += 7) {
    double ts = 0.0, ts2 = 0.0, us = 0.0, us2 = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double dn =
          s.bundle.N_orth[p * nodes + i + 1] - s.bundle.N_orth[p * nodes + i];
      const double dbn =
          s.bundle.bracketNN[p * nodes + i + 1] - s.bundle.bracketNN[p * nodes + i];
      const double tgt = (sol.y_at(p, i + 1) - sol.y_at(p, i)) * dn / dbn;
      ts += tgt;
      ts2 += tgt * tgt;
      const double u = sol.U_orth[p * nodes + i];
      us += u;
      us2 += u * u;
    }
    const double Pd = static_cast<double>(P);
    const double t_sd = std::sqrt(std::max(0.0, ts2 / Pd - (ts / Pd) * (ts / Pd)));
    const double u_rms = std::sqrt(us2 / Pd);
    CHECK(std::fabs(us / Pd) <= 5.0 * t_sd / std::sqrt(Pd) + 1e-9);
    CHECK(u_rms <= 5.0 * t_sd * std::sqrt(k_feat / Pd) + 1e-9);
  }
}

TEST_CASE("constant claim passes through the orthogonal solve untouched") {
  auto s = pair_basis(1.0, 20, 2048, 7);
  QuadOptions q;
  q.picard = {1e-9, 20};
  auto sol = solve_quadratic_with_orthogonal(presets::zero_driver(),
                                             presets::constant_terminal(1.25),
                                             s.forward, s.bundle, 0.5, {3, 1e-8}, q);
  for (std::size_t p = 0; p < 128; ++p)
    for (std::size_t i = 0; i <= 20; ++i) {
      CHECK(sol.y_at(p, i) == doctest::Approx(1.25).epsilon(1e-9));
      CHECK(std::fabs(sol.z_at(p, i)[0]) <= 1e-8);
      CHECK(std::fabs(sol.U_orth[p * 21 + i]) <= 1e-8);
    }
}

TEST_CASE("claims on N are picked up with first-order step residuals") {
  // Terminal depends on the orthogonal component; with kappa > 0 the solve
  // runs through the transformed two-block system. The discrete equation
  // residual per path-step shrinks at first order in dt.
  const double kappa = 0.8;
  TerminalCondition term;
  term.F = [](std::span<const double>, std::span<const double> m) {
    return std::tanh(m[1]);  // N is the second component of the pair state
  };
  term.bound = 1.0;
  std::vector<double> res;
  for (std::size_t N : {8, 16, 32, 64}) {
    auto s = pair_basis(1.0, N, 16384, 8);
    QuadOptions q;
    q.picard = {1e-7, 30};
    auto sol = solve_quadratic_with_orthogonal(presets::zero_driver(), term,
                                               s.forward, s.bundle, kappa,
                                               {3, 1e-8}, q);
    res.push_back(sol.orth_step_residual_mean);
  }
  // log-log slope across the doubling ladder within 30% of -1
  const double slope = std::log(res.back() / res.front()) /
                       std::log(static_cast<double>(64) / 8);
  CHECK(slope < -0.7);
  CHECK(slope > -1.3);
  // the claim actually loads on N
  auto s = pair_basis(1.0, 64, 8192, 9);
  QuadOptions q;
  q.picard = {1e-7, 30};
  auto sol = solve_quadratic_with_orthogonal(presets::zero_driver(), term, s.forward,
                                             s.bundle, kappa, {3, 1e-8}, q);
  double meanu = 0.0;
  for (std::size_t p = 0; p < sol.paths; ++p)
    meanu += std::fabs(sol.U_orth[p * 65 + 32]);
  CHECK(meanu / static_cast<double>(sol.paths) > 0.1);
}

TEST_CASE("tower residuals include the bracket penalty") {
  const double kappa = 0.8;
  TerminalCondition term;
  term.F = [](std::span<const double>, std::span<const double> m) {
    return std::tanh(m[1]);
  };
  term.bound = 1.0;
  auto s = pair_basis(1.0, 40, 8192, 10);
  QuadOptions q;
  q.picard = {1e-7, 30};
  auto sol = solve_quadratic_with_orthogonal(presets::zero_driver(), term, s.forward,
                                             s.bundle, kappa, {3, 1e-8}, q);
  auto tc = tower_residuals(sol, s.bundle, as_step_driver(presets::zero_driver()),
                            s.forward, kappa);
  for (std::size_t i = 0; i <= 40; i += 8)
    CHECK(std::fabs(tc.mean[i]) <= 4.0 * tc.se[i] + 1e-9);
}

TEST_CASE("transform requires the orthogonal block") {
  MartingaleModel model;
  model.d = 1;
  auto grid = TimeGrid::uniform(1.0, 4);
  auto b = generate_paths(model, grid, 8, 1);
  CHECK_THROWS_AS(augment_orthogonal(b), config_error);
}
