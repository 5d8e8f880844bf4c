#include "qfbsde/hedging.hpp"

#include <cmath>

#include "qfbsde/csv.hpp"
#include "qfbsde/linalg.hpp"
#include "qfbsde/parallel.hpp"

namespace qfbsde {

void MarketSpec::validate() const {
  if (k > d)
    throw config_error("asset count k must satisfy k <= d to exclude arbitrage");
  if (n == 0 || d == 0 || k == 0) throw config_error("market dimensions must be positive");
  if (!sigma || !b || !beta || !alpha) throw config_error("market coefficients missing");
  if (!(kappa > 0.0)) throw config_error("risk aversion must be positive");
  if (!payoff.F) throw config_error("market payoff missing");
}

void utility_theta_rotated(const MarketSpec& market, double t,
                           std::span<const double> r, std::span<const double> m,
                           const double* q, double* theta_rot) {
  const std::size_t d = market.d, k = market.k;
  double beta_buf[64];
  market.beta(t, r, m, std::span<double>(beta_buf, k * d));
  double alpha_buf[8];
  market.alpha(t, r, m, std::span<double>(alpha_buf, k));
  // rotated loading B = beta q (k x d)
  double B[64];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) s += beta_buf[i * d + a] * q[a * d + j];
      B[i * d + j] = s;
    }
  // Gram G = B B* (k x k); minimal solution theta_rot = B* G^{-1} alpha.
  std::vector<double> G(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) s += B[i * d + a] * B[j * d + a];
      G[i * k + j] = s;
    }
  double w[8];
  for (std::size_t i = 0; i < k; ++i) w[i] = alpha_buf[i];
  if (!linalg::solve_dense(G, k, w))
    throw solver_error("degenerate market: beta q q* beta* is singular");
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += B[i * d + j] * w[i];
    theta_rot[j] = s;
  }
}

double utility_driver_value(const MarketSpec& market, double t,
                            std::span<const double> r, std::span<const double> m,
                            const double* q, std::span<const double> v) {
  double th[8];
  utility_theta_rotated(market, t, r, m, q, th);
  double dot = 0.0, th2 = 0.0;
  for (std::size_t c = 0; c < market.d; ++c) {
    dot += v[c] * th[c];
    th2 += th[c] * th[c];
  }
  return -dot - th2 / (2.0 * market.kappa);
}

UtilityDriver build_utility_driver(const MarketSpec& market,
                                   const PathBundle& bundle) {
  market.validate();
  if (bundle.d != market.d)
    throw config_error("market martingale dimension does not match the bundle");
  UtilityDriver out;
  const MarketSpec* mkt = &market;
  const PathBundle* bu = &bundle;
  out.f = [mkt, bu](std::size_t p, std::size_t i, double t,
                    std::span<const double> x, std::span<const double> m, double,
                    std::span<const double> v) {
    return utility_driver_value(*mkt, t, x, m.first(mkt->d), bu->q_at(p, i), v);
  };
  // The generator has the constant part |theta|^2/(2 kappa); its eta bound is
  // sampled over states and the unit and bundle densities: with
  // |v theta| <= (kappa/2)|v|^2 + |theta|^2/(2 kappa) the growth bound is
  // eta = sup |theta|^2 / kappa with gamma = kappa.
  double theta_max = 0.0;
  const std::size_t d = market.d;
  std::vector<double> qid(d * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) qid[c * d + c] = 1.0;
  const std::size_t last_step = bundle.nodes() - 2;
  for (std::size_t i : {std::size_t{0}, last_step / 2, last_step})
    for (double r : {-3.0, 0.0, 3.0})
      for (double mm : {-3.0, 0.0, 3.0}) {
        const double t = bundle.grid.points[i];
        std::vector<double> rv(market.n, r), mv(d, mm), th(d);
        for (int which = 0; which < 2; ++which) {
          const double* q = which == 0 ? qid.data() : bu->q_at(0, i);
          try {
            utility_theta_rotated(market, t, rv, mv, q, th.data());
          } catch (const solver_error&) {
            continue;  // degenerate sample state; the solve itself will report
          }
          double n2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) n2 += th[c] * th[c];
          theta_max = std::max(theta_max, n2);
        }
      }
  out.growth.gamma = market.kappa;
  out.growth.eta_bound = 1.25 * theta_max / std::max(market.kappa, 1e-12);
  out.growth.kappa = 0.0;  // the bracket coefficient is supplied per solve
  out.growth.curvature = 0.0;  // linear in the control
  out.growth.lipschitz_yz = true;
  return out;
}

ForwardSolution simulate_risk(const MarketSpec& market, const PathBundle& bundle,
                              std::span<const double> r0, std::size_t start_index) {
  market.validate();
  const std::size_t n = market.n, d = market.d;
  if (bundle.d != d) throw config_error("bundle dimension mismatch");
  if (r0.size() != n) throw config_error("risk start has wrong dimension");
  const std::size_t nodes = bundle.nodes();
  const bool with_n = market.sigma_orth && bundle.has_orthogonal();

  ForwardSolution sol;
  sol.paths = bundle.paths;
  sol.n = n;
  sol.d = d;
  sol.nodes = nodes;
  sol.start.index = start_index;
  sol.start.x.assign(r0.begin(), r0.end());
  sol.X.assign(bundle.paths * nodes * n, 0.0);

  for_blocks(bundle.paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> sig(n * d), so(n), bb(n);
    for (std::size_t p = pa; p < pe; ++p) {
      double* row = &sol.X[(p * nodes) * n];
      for (std::size_t i = 0; i <= start_index; ++i)
        for (std::size_t j = 0; j < n; ++j) row[i * n + j] = r0[j];
      for (std::size_t i = start_index; i + 1 < nodes; ++i) {
        const double t = bundle.grid.points[i];
        std::span<const double> x(&row[i * n], n);
        std::span<const double> m(bundle.m_at(p, i), d);
        market.sigma(t, x, m, sig);
        market.b(t, x, m, bb);
        if (with_n) market.sigma_orth(t, x, m, so);
        const double* m0 = bundle.m_at(p, i);
        const double* m1 = bundle.m_at(p, i + 1);
        const double dC = bundle.dC(p, i);
        const double dN =
            with_n ? bundle.N_orth[p * nodes + i + 1] - bundle.N_orth[p * nodes + i]
                   : 0.0;
        for (std::size_t jr = 0; jr < n; ++jr) {
          double s = row[i * n + jr] + bb[jr] * dC;
          for (std::size_t c = 0; c < d; ++c) s += sig[jr * d + c] * (m1[c] - m0[c]);
          if (with_n) s += so[jr] * dN;
          row[(i + 1) * n + jr] = s;
          if (!std::isfinite(s))
            throw solver_error("risk process blew up at path " + std::to_string(p));
        }
      }
    }
  });
  return sol;
}

namespace {

BsdeSolution price_solve(const HedgeProblem& problem, const PathBundle& bundle,
                         const ForwardSolution& risk, bool with_claim) {
  UtilityDriver ud = build_utility_driver(problem.market, bundle);
  TerminalCondition term;
  if (with_claim) {
    term = problem.market.payoff;
  } else {
    term.F = [](std::span<const double>, std::span<const double>) { return 0.0; };
    term.bound = 0.0;
  }
  if (problem.model.with_orthogonal)
    return solve_quadratic_with_orthogonal(ud.f, ud.growth, term, risk, bundle,
                                           problem.market.kappa, problem.basis,
                                           problem.quad);
  return solve_quadratic(ud.f, ud.growth, term, risk, bundle, problem.basis,
                         problem.quad);
}

}  // namespace

PriceResult indifference_price(const HedgeProblem& problem, double t,
                               std::span<const double> r, std::span<const double> m,
                               std::uint64_t seed) {
  problem.market.validate();
  const std::size_t idx = problem.grid.index_of(t);
  PathStart start;
  start.index = idx;
  start.m.assign(m.begin(), m.end());
  start.bracket0 = restart_bracket_level(problem.model, t, m);
  if (problem.model.with_orthogonal) start.bracket_nn0 = t;
  PathBundle bundle =
      generate_paths(problem.model, problem.grid, problem.paths, seed, &start);
  ForwardSolution risk = simulate_risk(problem.market, bundle, r, idx);

  BsdeSolution with_claim = price_solve(problem, bundle, risk, true);
  BsdeSolution without = price_solve(problem, bundle, risk, false);

  PriceResult out;
  out.y_claim = with_claim.value;
  out.y_zero = without.value;
  out.price = with_claim.value - without.value;
  const std::size_t P = with_claim.value_samples.size();
  out.samples.resize(P);
  double s = 0.0, s2 = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    out.samples[p] = with_claim.value_samples[p] - without.value_samples[p];
    s += out.samples[p];
    s2 += out.samples[p] * out.samples[p];
  }
  const double mean = s / static_cast<double>(P);
  const double var = std::max(0.0, s2 / static_cast<double>(P) - mean * mean);
  out.se = std::sqrt(var / static_cast<double>(P));
  return out;
}

PricePartials price_partials(const HedgeProblem& problem, double t, double r,
                             double m, double h, std::uint64_t seed) {
  if (problem.market.n != 1 || problem.market.d != 1)
    throw config_error("price partials expect scalar risk and martingale states");
  if (!(h > 0.0)) throw config_error("bump size must be positive");
  auto node = [&](double rr, double mm) {
    const double rv[1] = {rr}, mv[1] = {mm};
    return indifference_price(problem, t, std::span<const double>(rv, 1),
                              std::span<const double>(mv, 1), seed);
  };
  const PriceResult rp = node(r + h, m), rm = node(r - h, m);
  const PriceResult mp = node(r, m + h), mm = node(r, m - h);
  auto paired = [&](const PriceResult& plus, const PriceResult& minus, double& der,
                    double& se) {
    der = (plus.price - minus.price) / (2.0 * h);
    const std::size_t P = plus.samples.size();
    double s = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double dd = plus.samples[p] - minus.samples[p];
      s += dd;
      s2 += dd * dd;
    }
    const double mean = s / static_cast<double>(P);
    const double var = std::max(0.0, s2 / static_cast<double>(P) - mean * mean);
    se = std::sqrt(var / static_cast<double>(P)) / (2.0 * h);
  };
  PricePartials out;
  paired(rp, rm, out.d2p, out.d2p_se);
  paired(mp, mm, out.d3p, out.d3p_se);
  return out;
}

std::vector<double> delta_hedge(const MarketSpec& market, double t,
                                std::span<const double> r, std::span<const double> m,
                                const double* q, std::span<const double> d2p,
                                std::span<const double> d3p) {
  market.validate();
  const std::size_t n = market.n, d = market.d, k = market.k;
  if (d2p.size() != n || (!market.m_free_independent && d3p.size() != d))
    throw config_error("price gradient dimensions do not match the market");
  double sig[64], beta_buf[64];
  market.sigma(t, r, m, std::span<double>(sig, n * d));
  market.beta(t, r, m, std::span<double>(beta_buf, k * d));
  // row = d2p sigma + d3p (1 x d); the reduced form drops the d3p term.
  double row[8] = {0};
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += d2p[j] * sig[j * d + c];
    if (!market.m_free_independent) s += d3p[c];
    row[c] = s;
  }
  // row q* (1 x d)
  double rq[8] = {0};
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) s += row[a] * q[c * d + a];
    rq[c] = s;
  }
  // (beta beta*)^{-1} applied to beta rq*
  std::vector<double> G(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a)
        s += beta_buf[i * d + a] * beta_buf[j * d + a];
      G[i * k + j] = s;
    }
  double w[8];
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) s += rq[a] * beta_buf[i * d + a];
    w[i] = s;
  }
  if (!linalg::solve_dense(G, k, w))
    throw solver_error("degenerate market: beta beta* is singular");
  return std::vector<double>(w, w + k);
}

HedgeReport hedge_backtest(const MarketSpec& market, const DeltaPolicy& policy,
                           const PathBundle& bundle, const ForwardSolution& risk,
                           double initial_wealth) {
  market.validate();
  const std::size_t P = bundle.paths, nodes = bundle.nodes();
  const std::size_t d = market.d, k = market.k, n = market.n;
  const std::size_t i0 = risk.start.index;
  HedgeReport rep;
  rep.pnl.assign(P, 0.0);
  std::vector<double> unhedged(P, 0.0);
  for_blocks(P, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> lam(k), beta_buf(k * d), alpha_buf(k);
    for (std::size_t p = pa; p < pe; ++p) {
      double wealth = initial_wealth;
      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double t = bundle.grid.points[i];
        std::span<const double> r(risk.x_at(p, i), n);
        std::span<const double> m(bundle.m_at(p, i), d);
        if (policy) {
          policy(t, r, m, lam);
          market.beta(t, r, m, beta_buf);
          market.alpha(t, r, m, alpha_buf);
          const double* m0 = bundle.m_at(p, i);
          const double* m1 = bundle.m_at(p, i + 1);
          const double dC = bundle.dC(p, i);
          for (std::size_t a = 0; a < k; ++a) {
            double ret = alpha_buf[a] * dC;
            for (std::size_t c = 0; c < d; ++c)
              ret += beta_buf[a * d + c] * (m1[c] - m0[c]);
            wealth += lam[a] * ret;
          }
        }
      }
      const double payoff =
          market.payoff.F(std::span<const double>(risk.x_at(p, nodes - 1), n),
                          std::span<const double>(bundle.m_at(p, nodes - 1), d));
      rep.pnl[p] = wealth - payoff;
      unhedged[p] = initial_wealth - payoff;
    }
  });
  auto stats = [P](const std::vector<double>& v, double& mean, double& var) {
    double s = 0.0, s2 = 0.0;
    for (double x : v) {
      s += x;
      s2 += x * x;
    }
    mean = s / static_cast<double>(P);
    var = std::max(0.0, s2 / static_cast<double>(P) - mean * mean);
  };
  double mu, vu;
  stats(rep.pnl, rep.pnl_mean, rep.pnl_var_hedged);
  stats(unhedged, mu, vu);
  rep.pnl_var_unhedged = vu;
  auto cert_equiv = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::exp(-market.kappa * x);
    return -std::log(s / static_cast<double>(P)) / market.kappa;
  };
  rep.certainty_equiv_hedged = cert_equiv(rep.pnl);
  rep.certainty_equiv_unhedged = cert_equiv(unhedged);
  return rep;
}

void write_hedge_csv(const HedgeReport& report, double t, double r, double m,
                     const std::string& file) {
  csv::Writer w(file);
  std::string header = "t,r,m,price";
  for (std::size_t a = 0; a < report.delta.size(); ++a)
    header += ",delta_" + std::to_string(a + 1);
  header += ",pnl_mean,pnl_var_hedged,pnl_var_unhedged";
  w.line(header);
  w.field(t);
  w.field(r);
  w.field(m);
  w.field(report.price);
  for (double dv : report.delta) w.field(dv);
  w.field(report.pnl_mean);
  w.field(report.pnl_var_hedged);
  w.field(report.pnl_var_unhedged);
  w.endline();
}

}  // namespace qfbsde
