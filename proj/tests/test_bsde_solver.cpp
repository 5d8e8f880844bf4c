#include <cmath>

#include "doctest.h"
#include "qfbsde/bsde.hpp"
#include "qfbsde/presets.hpp"

using namespace qfbsde;

namespace {

struct Setup {
  PathBundle bundle;
  ForwardSolution forward;
};

// X = x0 + M on a Brownian basis (unit volatility pass-through).
Setup passthrough(double T, std::size_t N, std::size_t P, std::uint64_t seed,
                  double x0 = 0.0) {
  MartingaleModel model;
  model.d = 1;
  model.m0 = {0.0};
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

TEST_CASE("zero generator with constant terminal is solved in one sweep") {
  auto s = passthrough(1.0, 20, 4096, 1);
  auto sol = solve_lipschitz(presets::zero_driver(), presets::constant_terminal(2.0),
                             s.forward, s.bundle, {3, 1e-8}, {1e-8, 10});
  for (std::size_t p = 0; p < sol.paths; ++p)
    for (std::size_t i = 0; i <= 20; ++i)
      CHECK(sol.y_at(p, i) == doctest::Approx(2.0).epsilon(1e-12));
  // Constants regress exactly, so the control collapses to zero as well.
  for (std::size_t p = 0; p < sol.paths; ++p)
    for (std::size_t i = 0; i < 20; ++i)
      CHECK(std::fabs(sol.z_at(p, i)[0]) < 1e-10);
  CHECK(sol.picard.sup_diffs.size() <= 2);
  CHECK(sol.picard.converged);
}

TEST_CASE("terminal exactness holds sample for sample") {
  auto s = passthrough(1.0, 16, 2048, 2);
  auto term = presets::logistic_terminal(0.0, 0.5, 1.0);
  auto sol = solve_lipschitz(presets::linear_driver(0.5), term, s.forward, s.bundle,
                             {3, 1e-8}, {1e-8, 20});
  for (std::size_t p = 0; p < sol.paths; ++p) {
    const double x = s.forward.x_at(p, 16)[0];
    const double m = s.bundle.m_at(p, 16)[0];
    CHECK(sol.y_at(p, 16) == term.F(std::span<const double>(&x, 1),
                                    std::span<const double>(&m, 1)));
  }
}

TEST_CASE("linear generator integrates the clock ODE") {
  // f(y) = -r y with constant terminal: Y_t = c exp(-r (C_T - C_t)) with the
  // deterministic Brownian clock C_t = arctan(t).
  const double r = 0.7, c = 1.5, T = 1.0;
  auto s = passthrough(T, 500, 2048, 3);
  auto sol = solve_lipschitz(presets::linear_driver(r), presets::constant_terminal(c),
                             s.forward, s.bundle, {3, 1e-8}, {1e-10, 30});
  const double CT = std::atan(T);
  CHECK(sol.value == doctest::Approx(c * std::exp(-r * CT)).epsilon(2e-3));
  const std::size_t imid = s.bundle.grid.index_of(0.5);
  const double expect_mid = c * std::exp(-r * (CT - std::atan(0.5)));
  for (std::size_t p = 0; p < 32; ++p)
    CHECK(sol.y_at(p, imid) == doctest::Approx(expect_mid).epsilon(2e-3));
}

TEST_CASE("Picard differences contract on a short-horizon Lipschitz problem") {
  auto s = passthrough(0.5, 40, 4096, 4);
  Driver f = presets::zero_driver();
  f.f = [](double, std::span<const double> x, std::span<const double>, double y,
           std::span<const double> v) {
    return 0.5 * std::cos(y + x[0]) + 0.4 * v[0];
  };
  f.growth.eta_bound = 0.5;
  f.growth.y_growth = 1.0;
  auto sol = solve_lipschitz(f, presets::logistic_terminal(0.0, 0.4, 1.0), s.forward,
                             s.bundle, {3, 1e-8}, {1e-6, 10});
  CHECK(sol.picard.converged);
  CHECK(sol.picard.sup_diffs.size() <= 10);
  CHECK(sol.picard.eps_hat < 1.0);
  for (std::size_t k = 2; k < sol.picard.sup_diffs.size(); ++k)
    CHECK(sol.picard.sup_diffs[k] <= sol.picard.sup_diffs[k - 1]);
}

TEST_CASE("iteration limit carries the difference history") {
  auto s = passthrough(1.0, 10, 512, 5);
  Driver f = presets::zero_driver();
  f.f = [](double, std::span<const double>, std::span<const double>, double y,
           std::span<const double>) { return 25.0 * y + 1.0; };
  try {
    solve_lipschitz(f, presets::constant_terminal(1.0), s.forward, s.bundle,
                    {2, 1e-8}, {1e-12, 3});
    FAIL("expected non-convergence");
  } catch (const solver_error& e) {
    CHECK(std::string(e.what()).find("sup differences") != std::string::npos);
  }
}

TEST_CASE("y-truncation wrapper") {
  Driver f = presets::zero_driver();
  f.f = [](double, std::span<const double>, std::span<const double>, double y,
           std::span<const double>) { return y * y; };
  Driver fk = truncate_driver(f, 2.0);
  const double x[1] = {0.0}, m[1] = {0.0}, v[1] = {0.0};
  std::span<const double> xs(x, 1), ms(m, 1), vs(v, 1);
  CHECK(fk.f(0, xs, ms, 1.5, vs) == f.f(0, xs, ms, 1.5, vs));
  CHECK(fk.f(0, xs, ms, 3.0, vs) == f.f(0, xs, ms, 2.0, vs));
  CHECK(clamp_level(-7.0, 2.0) == -2.0);
  CHECK_THROWS_AS(truncate_driver(f, 0.0), config_error);
}

TEST_CASE("exponential transform and its inverse") {
  std::vector<double> Y = {0.0, 0.5, -1.0}, Z = {1.0, 2.0, -3.0};
  std::vector<double> U(3), V(3), Yb(3), Zb(3);

  SUBCASE("kappa = 1 maps zero value to one and keeps the control") {
    exp_transform(Y, Z, 1, 1.0, U, V);
    CHECK(U[0] == 1.0);
    CHECK(V[0] == Z[0]);
  }

  SUBCASE("kappa = 2 at Y = 0.5 gives e") {
    exp_transform(Y, Z, 1, 2.0, U, V);
    CHECK(U[1] == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  }

  SUBCASE("round trip is exact to machine precision") {
    exp_transform(Y, Z, 1, -1.3, U, V);
    exp_transform_inverse(U, V, 1, -1.3, Yb, Zb);
    for (int i = 0; i < 3; ++i) {
      CHECK(Yb[i] == doctest::Approx(Y[i]).epsilon(1e-14));
      CHECK(Zb[i] == doctest::Approx(Z[i]).epsilon(1e-14));
    }
  }

  SUBCASE("inverse rejects nonpositive U") {
    U = {1.0, -0.5, 2.0};
    V = {0, 0, 0};
    CHECK_THROWS_AS(exp_transform_inverse(U, V, 1, 1.0, Yb, Zb), solver_error);
  }
}

TEST_CASE("transformed generator values") {
  Driver zero = presets::zero_driver();
  const double x[1] = {0.0}, m[1] = {0.0};
  std::span<const double> xs(x, 1), ms(m, 1);

  SUBCASE("zero source reduces to the quadratic correction") {
    Driver g = transformed_driver_g(zero, 1.0, 0.1, 10.0);
    const double v[1] = {2.0};
    CHECK(g.f(0, xs, ms, 1.0, std::span<const double>(v, 1)) ==
          doctest::Approx(-2.0).epsilon(1e-15));
  }

  SUBCASE("zero control reduces to the drift part") {
    Driver f = presets::zero_driver();
    f.f = [](double, std::span<const double>, std::span<const double>, double y,
             std::span<const double>) { return 2.0 * y + 0.25; };
    const double kappa = 0.5, c1 = 0.2, c2 = 5.0, u = 1.7;
    Driver g = transformed_driver_g(f, kappa, c1, c2);
    const double v[1] = {0.0};
    const double want =
        kappa * clamp_level(u, c2) * (2.0 * std::log(u) / kappa + 0.25);
    CHECK(g.f(0, xs, ms, u, std::span<const double>(v, 1)) ==
          doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("u at or below zero stays finite through the clamp") {
    Driver g = transformed_driver_g(zero, 1.0, 0.25, 4.0);
    const double v[1] = {1.0};
    const double got = g.f(0, xs, ms, 0.0, std::span<const double>(v, 1));
    CHECK(std::isfinite(got));
    CHECK(got == doctest::Approx(-1.0 / (2.0 * 0.25)).epsilon(1e-14));
  }

  SUBCASE("clamp preconditions") {
    CHECK_THROWS_AS(transformed_driver_g(zero, 1.0, 0.0, 1.0), config_error);
    CHECK_THROWS_AS(transformed_driver_g(zero, 0.0, 0.1, 1.0), config_error);
  }
}

TEST_CASE("entropic value against the direct Monte-Carlo oracle") {
  const double gamma = 1.0;
  auto term = presets::logistic_terminal(0.0, 0.5, 1.0);
  auto s = passthrough(1.0, 50, 20000, 6);

  // Independent oracle: Y_0 = -(1/gamma) log E[exp(-gamma F(X_T))] on fresh
  // noise (CLT error bars via the delta method).
  auto o = passthrough(1.0, 50, 20000, 987654);
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t p = 0; p < o.bundle.paths; ++p) {
    const double x = o.forward.x_at(p, 50)[0];
    const double m = o.bundle.m_at(p, 50)[0];
    const double e = std::exp(-gamma * term.F(std::span<const double>(&x, 1),
                                              std::span<const double>(&m, 1)));
    acc += e;
    acc2 += e * e;
  }
  const double P = static_cast<double>(o.bundle.paths);
  const double emean = acc / P;
  const double esd = std::sqrt(std::max(0.0, acc2 / P - emean * emean));
  const double oracle = -std::log(emean) / gamma;
  const double oracle_se = esd / std::sqrt(P) / (gamma * emean);

  QuadOptions qa;
  qa.picard = {1e-7, 30};
  auto driver = presets::entropic_driver(gamma);
  auto solA = solve_quadratic(driver, term, s.forward, s.bundle, {3, 1e-8}, qa);
  QuadOptions qb = qa;
  qb.mode = QuadMode::direct;
  auto solB = solve_quadratic(driver, term, s.forward, s.bundle, {3, 1e-8}, qb);

  CHECK(std::fabs(solA.value - oracle) <= 5.0 * (solA.value_stderr + oracle_se));
  CHECK(std::fabs(solB.value - oracle) <= 5.0 * (solB.value_stderr + oracle_se));
  CHECK(std::fabs(solA.value - solB.value) <=
        5.0 * (solA.value_stderr + solB.value_stderr) + 1e-6);
  CHECK_FALSE(solA.audit.any());
  CHECK_FALSE(solB.audit.any());
}

TEST_CASE("quadratic pipeline degeneracies") {
  auto s = passthrough(1.0, 25, 4096, 7);

  SUBCASE("kappa = 0 Lipschitz drivers agree across modes and the plain solver") {
    Driver f = presets::linear_driver(0.4);
    auto term = presets::logistic_terminal(0.0, 0.5, 1.0);
    QuadOptions qa;
    qa.picard = {1e-9, 30};
    auto a = solve_quadratic(f, term, s.forward, s.bundle, {3, 1e-8}, qa);
    QuadOptions qb = qa;
    qb.mode = QuadMode::direct;
    auto b = solve_quadratic(f, term, s.forward, s.bundle, {3, 1e-8}, qb);
    auto l = solve_lipschitz(f, term, s.forward, s.bundle, {3, 1e-8}, qa.picard);
    for (std::size_t p = 0; p < 64; ++p)
      for (std::size_t i = 0; i <= 25; ++i) {
        CHECK(std::fabs(a.y_at(p, i) - l.y_at(p, i)) <= 1e-8);
        CHECK(std::fabs(b.y_at(p, i) - l.y_at(p, i)) <= 1e-8);
      }
  }

  SUBCASE("constant terminal with zero generator is exact in both modes") {
    auto driver = presets::entropic_driver(1.0);
    driver.f = presets::zero_driver().f;  // quadratic metadata, zero generator
    auto term = presets::constant_terminal(0.8);
    for (QuadMode mode : {QuadMode::transform, QuadMode::direct}) {
      QuadOptions q;
      q.mode = mode;
      q.picard = {1e-9, 20};
      auto sol = solve_quadratic(driver, term, s.forward, s.bundle, {3, 1e-8}, q);
      for (std::size_t p = 0; p < 32; ++p)
        for (std::size_t i = 0; i <= 25; ++i)
          CHECK(sol.y_at(p, i) == doctest::Approx(0.8).epsilon(1e-10));
    }
  }
}

TEST_CASE("strict mode reports binding truncation") {
  auto s = passthrough(1.0, 10, 1024, 8);
  auto driver = presets::entropic_driver(1.0);
  QuadOptions q;
  q.mode = QuadMode::direct;
  q.R = 1e-6;  // absurdly tight truncation must bind and be reported
  q.picard = {1e-8, 20};
  CHECK_THROWS_AS(solve_quadratic(driver, presets::logistic_terminal(0.0, 0.5, 1.0),
                                  s.forward, s.bundle, {3, 1e-8}, q),
                  solver_error);
  q.strict = false;
  auto sol = solve_quadratic(driver, presets::logistic_terminal(0.0, 0.5, 1.0),
                             s.forward, s.bundle, {3, 1e-8}, q);
  CHECK(sol.audit.z_clamped > 0);
}

TEST_CASE("tower residuals are statistically centered") {
  auto s = passthrough(1.0, 30, 8192, 9);
  auto driver = presets::entropic_driver(0.8);
  QuadOptions q;
  q.picard = {1e-8, 25};
  auto sol = solve_quadratic(driver, presets::logistic_terminal(0.2, 0.5, 1.0),
                             s.forward, s.bundle, {3, 1e-8}, q);
  auto tc = tower_residuals(sol, s.bundle, as_step_driver(driver), s.forward);
  for (std::size_t i = 0; i <= 30; i += 5)
    CHECK(std::fabs(tc.mean[i]) <= 4.0 * tc.se[i] + 1e-9);
}

TEST_CASE("boundedness: the empirical sup of Y is stable when paths double") {
  auto term = presets::logistic_terminal(0.0, 0.5, 1.0);
  auto driver = presets::entropic_driver(1.0);
  QuadOptions q;
  q.picard = {1e-7, 25};
  auto s1 = passthrough(1.0, 25, 4096, 10);
  auto s2 = passthrough(1.0, 25, 8192, 10);
  auto a = solve_quadratic(driver, term, s1.forward, s1.bundle, {3, 1e-8}, q);
  auto b = solve_quadratic(driver, term, s2.forward, s2.bundle, {3, 1e-8}, q);
  CHECK(std::isfinite(a.sup_abs_y));
  CHECK(std::fabs(a.sup_abs_y - b.sup_abs_y) <
        0.10 * std::max(a.sup_abs_y, b.sup_abs_y));
}

TEST_CASE("BMO norm estimate") {
  auto s = passthrough(1.0, 40, 4096, 11);

  SUBCASE("zero control gives zero") {
    BsdeSolution sol;
    sol.paths = s.bundle.paths;
    sol.nodes = 41;
    sol.d = 1;
    sol.Y.assign(sol.paths * 41, 0.0);
    sol.Z.assign(sol.paths * 41, 0.0);
    CHECK(bmo_norm_estimate(sol, s.bundle, {3, 1e-8}, &s.forward) == 0.0);
  }

  SUBCASE("unit control recovers the horizon, and scaling is homogeneous") {
    BsdeSolution sol;
    sol.paths = s.bundle.paths;
    sol.nodes = 41;
    sol.d = 1;
    sol.Y.assign(sol.paths * 41, 0.0);
    sol.Z.assign(sol.paths * 41, 1.0);
    const double est = bmo_norm_estimate(sol, s.bundle, {3, 1e-8}, &s.forward);
    CHECK(est == doctest::Approx(1.0).epsilon(0.05));
    for (double& z : sol.Z) z *= 2.0;
    const double est2 = bmo_norm_estimate(sol, s.bundle, {3, 1e-8}, &s.forward);
    CHECK(est2 >= est);
    CHECK(est2 == doctest::Approx(2.0 * est).epsilon(1e-10));
  }
}

TEST_CASE("corrupted density with live increments is an inconsistency") {
  auto s = passthrough(1.0, 10, 512, 12);
  PathBundle corrupt = s.bundle;
  for (double& v : corrupt.q) v = 0.0;
  for (double& v : corrupt.C) v = 0.0;  // dC = 0 while dM != 0
  CHECK_THROWS_AS(solve_lipschitz(presets::zero_driver(),
                                  presets::constant_terminal(1.0), s.forward,
                                  corrupt, {3, 1e-8}, {1e-8, 5}),
                  solver_error);
}

TEST_CASE("convergence report CSV") {
  PicardReport rep;
  rep.sup_diffs = {1.0, 0.25, 0.05};
  rep.converged = true;
  write_convergence_csv(rep, "/tmp/qfbsde_conv_test.csv");
  std::FILE* f = std::fopen("/tmp/qfbsde_conv_test.csv", "rb");
  REQUIRE(f);
  char buf[256];
  REQUIRE(std::fgets(buf, sizeof(buf), f));
  CHECK(std::string(buf) == "iteration,sup_dY,ratio\n");
  std::fclose(f);
}
