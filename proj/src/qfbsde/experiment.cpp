#include "qfbsde/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qfbsde/csv.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/presets.hpp"
#include "qfbsde/rng.hpp"

namespace qfbsde {

namespace {

using nlohmann::json;

double get_num(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw config_error(std::string(key) + " must be a number");
  return j.at(key).get<double>();
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  const double v = get_num(j, key, static_cast<double>(fallback));
  if (v < 0.0) throw config_error(std::string(key) + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

std::string get_str(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<std::string>();
}

VolatilityFn parse_volatility(const json& j, std::size_t d) {
  const std::string preset = get_str(j, "preset", "identity");
  if (preset == "identity") return presets::identity_volatility(d);
  if (preset == "scaled") return presets::scaled_volatility(d, get_num(j, "value", 1.0));
  if (preset == "sqrt_one_plus_m2") {
    if (d != 1) throw config_error("sqrt_one_plus_m2 volatility is scalar");
    return presets::sqrt_one_plus_m2();
  }
  throw config_error("unknown martingale volatility preset: " + preset);
}

// Forward coefficient block, with partial derivatives when the family has
// them in closed form.
void parse_forward(const json& j, SdeCoefficients& coeffs, std::vector<double>& x0,
                   double horizon, std::vector<double>& discontinuities) {
  coeffs.n = get_size(j, "n", 1);
  if (coeffs.n != 1)
    throw config_error("coefficient presets cover scalar forward state");
  x0.assign(coeffs.n, 0.0);
  if (j.contains("x0")) {
    const auto arr = j.at("x0");
    if (!arr.is_array() || arr.size() != coeffs.n)
      throw config_error("x0 must be an array of length n");
    for (std::size_t i = 0; i < coeffs.n; ++i) x0[i] = arr[i].get<double>();
  }
  const json sigma = j.contains("sigma") ? j.at("sigma") : json::object();
  const json bblk = j.contains("b") ? j.at("b") : json::object();
  const std::string sp = get_str(sigma, "preset", "constant");
  presets::CoeffWithPartials cw;
  if (sp == "zero") {
    cw = presets::constant_with_partials(0.0, 0.0);
  } else if (sp == "constant") {
    cw = presets::constant_with_partials(get_num(sigma, "value", 1.0), 0.0);
  } else if (sp == "state_linear") {
    cw = presets::state_linear_with_partials(get_num(sigma, "scale", 1.0));
  } else if (sp == "half_window_exp") {
    const double t_jump = get_num(sigma, "t_jump", 0.5 * horizon);
    cw = presets::half_window_exp_with_partials(t_jump);
    discontinuities.push_back(t_jump);
  } else if (sp == "tanh") {
    cw = presets::tanh_with_partials(get_num(sigma, "s0", 1.0),
                                     get_num(sigma, "c", 0.5));
  } else {
    throw config_error("unknown forward sigma preset: " + sp);
  }
  const std::string bp = get_str(bblk, "preset", "zero");
  if (bp == "zero") {
    // already zero in every family above
  } else if (bp == "constant") {
    cw.b = presets::constant_coeff(1, 1, get_num(bblk, "value", 0.0));
  } else {
    throw config_error("unknown forward b preset: " + bp);
  }
  coeffs.sigma = cw.sigma;
  coeffs.b = cw.b;
  coeffs.dsigma_dx = cw.dsigma_dx;
  coeffs.dsigma_dm = cw.dsigma_dm;
  coeffs.db_dx = cw.db_dx;
  coeffs.db_dm = cw.db_dm;
}

Driver parse_driver(const json& j) {
  const std::string preset = get_str(j, "preset", "zero");
  if (preset == "zero") return presets::zero_driver();
  if (preset == "linear") return presets::linear_driver(get_num(j, "rate", 0.0));
  if (preset == "entropic")
    return presets::entropic_driver(get_num(j, "gamma", 1.0));
  throw config_error("unknown driver preset: " + preset);
}

TerminalCondition parse_terminal(const json& j) {
  const std::string preset = get_str(j, "preset", "constant");
  if (preset == "constant") return presets::constant_terminal(get_num(j, "value", 0.0));
  if (preset == "identity") return presets::identity_terminal();
  if (preset == "linear_clip")
    return presets::linear_clip_terminal(get_num(j, "lo", -10.0),
                                         get_num(j, "hi", 10.0));
  if (preset == "clipped_call")
    return presets::clipped_call_terminal(get_num(j, "strike", 0.0),
                                          get_num(j, "cap", 1.0));
  if (preset == "logistic")
    return presets::logistic_terminal(get_num(j, "strike", 0.0),
                                      get_num(j, "width", 0.5),
                                      get_num(j, "cap", 1.0));
  if (preset == "log1p_clip")
    return presets::log1p_clip_terminal(get_num(j, "clip", 10.0));
  throw config_error("unknown terminal preset: " + preset);
}

CoeffFn parse_market_coeff(const json& j, std::size_t rows, std::size_t cols,
                           const char* what) {
  const std::string preset = get_str(j, "preset", "zero");
  if (preset == "zero") return presets::zero_coeff(rows, cols);
  if (preset == "constant")
    return presets::constant_coeff(rows, cols, get_num(j, "value", 0.0));
  if (preset == "matrix") {
    std::vector<double> vals;
    for (const auto& v : j.at("values")) vals.push_back(v.get<double>());
    return presets::constant_matrix(rows, cols, std::move(vals));
  }
  throw config_error(std::string("unknown market coefficient preset for ") + what);
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.scenario = get_str(j, "scenario", "unnamed");

  const json grid = j.contains("grid") ? j.at("grid") : json::object();
  const double T = get_num(grid, "T", 1.0);
  const std::size_t N = get_size(grid, "N", 100);
  if (!(T > 0.0)) throw config_error("horizon T must be positive");
  if (N < 1) throw config_error("step count N must be at least 1");
  std::vector<double> include;
  if (grid.contains("include"))
    for (const auto& v : grid.at("include")) include.push_back(v.get<double>());

  ProblemSpec& ps = cfg.problem;
  ps.grid = TimeGrid::uniform_with(T, N, include);

  const json mart = j.contains("martingale") ? j.at("martingale") : json::object();
  ps.model.d = get_size(mart, "d", 1);
  const std::string kind = get_str(mart, "kind", "brownian");
  if (kind == "brownian") {
    ps.model.kind = MartingaleModel::Kind::brownian;
  } else if (kind == "diffusion_martingale") {
    ps.model.kind = MartingaleModel::Kind::diffusion_martingale;
    ps.model.volatility = parse_volatility(
        mart.contains("volatility") ? mart.at("volatility") : json::object(),
        ps.model.d);
  } else {
    throw config_error("unknown martingale kind: " + kind);
  }
  ps.model.m0.assign(ps.model.d, 0.0);
  if (mart.contains("m0")) {
    const auto arr = mart.at("m0");
    if (!arr.is_array() || arr.size() != ps.model.d)
      throw config_error("m0 must be an array of length d");
    for (std::size_t i = 0; i < ps.model.d; ++i) ps.model.m0[i] = arr[i].get<double>();
  }
  ps.model.bracket_bound = get_num(mart, "bracket_bound", 1e6);
  if (mart.contains("orthogonal")) {
    const json orth = mart.at("orthogonal");
    ps.model.with_orthogonal = orth.value("enabled", true);
    ps.model.n0 = get_num(orth, "n0", 0.0);
    if (orth.contains("volatility")) {
      VolatilityFn vol = parse_volatility(orth.at("volatility"), 1);
      ps.model.orth_volatility = [vol](double t, double n) {
        double out[1];
        const double m[1] = {n};
        vol(t, std::span<const double>(m, 1), std::span<double>(out, 1));
        return out[0];
      };
    }
  }

  parse_forward(j.contains("forward") ? j.at("forward") : json::object(), ps.coeffs,
                cfg.problem.x0, T, cfg.coeff_discontinuities);
  ps.coeffs.d = ps.model.d;
  ps.driver = parse_driver(j.contains("driver") ? j.at("driver") : json::object());
  ps.terminal =
      parse_terminal(j.contains("terminal") ? j.at("terminal") : json::object());

  ps.paths = get_size(j, "paths", 10000);
  if (ps.paths < 1) throw config_error("path count must be at least 1");
  ps.seed = static_cast<std::uint64_t>(get_num(j, "seed", 1.0));

  const json reg = j.contains("regression") ? j.at("regression") : json::object();
  ps.basis.degree = get_size(reg, "degree", 3);
  ps.basis.ridge = get_num(reg, "ridge", 1e-8);

  const json sol = j.contains("solver") ? j.at("solver") : json::object();
  const std::string sk = get_str(sol, "kind", "lipschitz");
  if (sk == "lipschitz") ps.kind = ProblemSpec::SolveKind::lipschitz;
  else if (sk == "quadratic") ps.kind = ProblemSpec::SolveKind::quadratic;
  else if (sk == "quadratic_orthogonal")
    ps.kind = ProblemSpec::SolveKind::quadratic_orthogonal;
  else throw config_error("unknown solver kind: " + sk);
  ps.kappa = get_num(sol, "kappa", 0.0);
  if (ps.kind == ProblemSpec::SolveKind::quadratic_orthogonal &&
      !ps.model.with_orthogonal)
    throw config_error("orthogonal solver needs an orthogonal martingale block");
  const std::string mode = get_str(sol, "mode", "transform");
  if (mode == "transform") ps.quad.mode = QuadMode::transform;
  else if (mode == "direct") ps.quad.mode = QuadMode::direct;
  else throw config_error("unknown solver mode: " + mode);
  ps.quad.picard.tol = get_num(sol, "tol", 1e-8);
  if (!(ps.quad.picard.tol > 0.0)) throw config_error("tolerance must be positive");
  ps.quad.picard.max_iter = get_size(sol, "max_iter", 25);
  ps.quad.K_level = get_num(sol, "K_level", 0.0);
  ps.quad.R = get_num(sol, "R", 0.0);
  ps.quad.c1 = get_num(sol, "c1", 0.0);
  ps.quad.c2 = get_num(sol, "c2", 0.0);
  ps.quad.strict = sol.value("strict", true);

  if (j.contains("study")) {
    cfg.has_study = true;
    const json st = j.at("study");
    if (st.contains("nodes"))
      for (const auto& nd : st.at("nodes")) {
        if (!nd.is_array() || nd.size() != 3)
          throw config_error("study nodes must be [t, x, m] triples");
        cfg.nodes.push_back({nd[0].get<double>(), nd[1].get<double>(),
                             nd[2].get<double>()});
      }
    cfg.bump_h = get_num(st, "bump_h", 1e-2);
    if (st.contains("surface")) {
      cfg.surface_enabled = true;
      const json sf = st.at("surface");
      for (const auto& v : sf.at("ts")) cfg.surface_ts.push_back(v.get<double>());
      for (const auto& v : sf.at("xs")) cfg.surface_xs.push_back(v.get<double>());
      for (const auto& v : sf.at("ms")) cfg.surface_ms.push_back(v.get<double>());
    }
    cfg.representation = st.value("representation", false);
    cfg.check_bracket = st.value("bracket_check", false);
    cfg.oracle = get_str(st, "oracle", "");
    if (st.contains("refinement")) {
      const json rf = st.at("refinement");
      for (const auto& v : rf.at("N")) cfg.refinement_N.push_back(v.get<std::size_t>());
      cfg.refinement_paths = get_size(rf, "paths", 2048);
    }
  }

  if (j.contains("market")) {
    cfg.has_market = true;
    const json mk = j.at("market");
    MarketSpec& m = cfg.market;
    m.n = 1;
    m.d = ps.model.d;
    m.k = get_size(mk, "k", 1);
    if (m.k > m.d)
      throw config_error("market has k > d assets; we assume k <= d");
    const json risk = mk.contains("risk") ? mk.at("risk") : json::object();
    m.sigma = parse_market_coeff(
        risk.contains("sigma") ? risk.at("sigma") : json::object(), m.n, m.d,
        "risk sigma");
    m.b = parse_market_coeff(risk.contains("b") ? risk.at("b") : json::object(), m.n,
                             1, "risk b");
    if (risk.contains("sigma_orth"))
      m.sigma_orth = parse_market_coeff(risk.at("sigma_orth"), m.n, 1, "sigma_orth");
    const json assets = mk.contains("assets") ? mk.at("assets") : json::object();
    m.beta = parse_market_coeff(
        assets.contains("beta") ? assets.at("beta") : json::object(), m.k, m.d,
        "beta");
    m.alpha = parse_market_coeff(
        assets.contains("alpha") ? assets.at("alpha") : json::object(), m.k, 1,
        "alpha");
    m.kappa = get_num(mk, "kappa", 1.0);
    m.payoff = parse_terminal(mk.contains("payoff") ? mk.at("payoff") : json::object());
    m.m_free_independent = mk.value("m_free_independent", false);
    cfg.market_bump_h = get_num(mk, "bump_h", 1e-2);
    cfg.r0.assign(m.n, 0.0);
    if (mk.contains("r0")) {
      const auto arr = mk.at("r0");
      for (std::size_t i = 0; i < m.n && i < arr.size(); ++i)
        cfg.r0[i] = arr[i].get<double>();
    }
    const json bt = mk.contains("backtest") ? mk.at("backtest") : json::object();
    cfg.backtest_enabled = bt.value("enabled", false);
    cfg.initial_wealth = get_num(bt, "initial_wealth", 0.0);
  }

  cfg.dump_paths = j.contains("output") && j.at("output").value("dump_paths", false);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

std::vector<ValidationIssue> validate_config(const ExperimentConfig& cfg) {
  std::vector<ValidationIssue> issues;
  const ProblemSpec& ps = cfg.problem;

  // Terminal bound audit: (H1) wants a bounded terminal condition.
  if (!std::isfinite(ps.terminal.bound))
    issues.push_back({false,
                      "terminal condition has no finite bound; the bounded-terminal "
                      "hypothesis is violated unless a clip is configured"});
  else {
    double worst = 0.0;
    for (int s = 0; s < 64; ++s) {
      const double x[1] = {-5.0 + 10.0 * s / 63.0};
      const double m[1] = {-5.0 + 10.0 * (63 - s) / 63.0};
      worst = std::max(worst, std::fabs(ps.terminal.F(
                                  std::span<const double>(x, 1),
                                  std::span<const double>(m, 1))));
    }
    if (worst > ps.terminal.bound * (1.0 + 1e-12))
      issues.push_back({true, "terminal samples exceed the declared bound"});
  }

  // Generator growth audit against the declared metadata.
  {
    const auto& g = ps.driver.growth;
    double slack_violation = 0.0;
    for (int s = 0; s < 64; ++s) {
      const double x[1] = {-3.0 + 6.0 * s / 63.0};
      const double m[1] = {3.0 - 6.0 * s / 63.0};
      const double y = -2.0 + 4.0 * ((s * 29) % 64) / 63.0;
      const double v[1] = {-4.0 + 8.0 * ((s * 17) % 64) / 63.0};
      const double fv =
          ps.driver.f(0.5 * ps.grid.horizon(), std::span<const double>(x, 1),
                      std::span<const double>(m, 1), y, std::span<const double>(v, 1));
      const double bound = g.eta_bound + g.y_growth * g.eta_bound * std::fabs(y) +
                           0.5 * std::max(g.gamma, std::fabs(g.curvature)) * v[0] * v[0];
      slack_violation = std::max(slack_violation, std::fabs(fv) - bound * (1 + 1e-9));
    }
    if (slack_violation > 1e-9)
      issues.push_back({false, "generator samples exceed the declared growth bound by " +
                                   std::to_string(slack_violation)});
  }

  // Coefficient partials against central differences.
  if (ps.coeffs.has_partials()) {
    const double x[1] = {0.3}, m[1] = {-0.2};
    const double t = 0.25 * ps.grid.horizon();
    const double err = spot_check_partials(ps.coeffs, t, std::span<const double>(x, 1),
                                           std::span<const double>(m, 1));
    if (err > 1e-4)
      issues.push_back({true, "coefficient partials disagree with finite differences "
                              "(relative error " + std::to_string(err) + ")"});
  }

  if (cfg.has_market) {
    if (cfg.market.k > cfg.market.d)
      issues.push_back({true, "market has k > d assets (arbitrage not excluded)"});
    if (!std::isfinite(cfg.market.payoff.bound))
      issues.push_back({false, "market payoff has no finite bound"});
  }
  for (double tj : cfg.coeff_discontinuities)
    if (!cfg.problem.grid.contains(tj))
      issues.push_back({true, "coefficient jump at t=" + std::to_string(tj) +
                                  " must be a grid point"});
  for (const auto& nd : cfg.nodes)
    if (!cfg.problem.grid.contains(nd[0]))
      issues.push_back({true, "study node time " + std::to_string(nd[0]) +
                                  " is not a grid point"});
  for (double ts : cfg.surface_ts)
    if (!cfg.problem.grid.contains(ts))
      issues.push_back({true, "surface slice time " + std::to_string(ts) +
                                  " is not a grid point"});
  return issues;
}

std::string validation_report_json(const std::vector<ValidationIssue>& issues) {
  json j;
  j["issues"] = json::array();
  bool any_error = false;
  for (const auto& is : issues) {
    j["issues"].push_back({{"level", is.error ? "error" : "warning"},
                           {"message", is.message}});
    any_error = any_error || is.error;
  }
  j["ok"] = !any_error;
  return j.dump(2);
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t size, std::uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open " + path + " for checksum");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a_bytes(buf, static_cast<std::size_t>(got), h);
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_nodes_csv(const std::string& file,
                     const std::vector<std::array<double, 3>>& nodes,
                     const std::vector<NodeValue>& values,
                     const std::vector<PartialEstimate>* partials) {
  csv::Writer w(file);
  w.line("t,x,m,u,stderr,d2u,d3u");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    w.field(nodes[i][0]);
    w.field(nodes[i][1]);
    w.field(nodes[i][2]);
    w.field(values[i].u);
    w.field(values[i].se);
    w.field(partials ? (*partials)[i].d2u : 0.0);
    w.field(partials ? (*partials)[i].d3u : 0.0);
    w.endline();
  }
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         std::optional<std::uint64_t> seed_override, int threads) {
  namespace fs = std::filesystem;
  if (threads > 0) set_thread_count(threads);
  const auto issues = validate_config(cfg);
  for (const auto& is : issues)
    if (is.error) throw config_error("validation failed: " + is.message);

  ExperimentConfig run_cfg = cfg;
  if (seed_override) run_cfg.problem.seed = *seed_override;
  const ProblemSpec& ps = run_cfg.problem;

  fs::create_directories(out_dir);
  auto out_path = [&](const std::string& name) { return out_dir + "/" + name; };
  std::vector<std::string> artifacts;
  json timings = json::object();
  auto clock_now = [] { return std::chrono::steady_clock::now(); };
  auto secs = [](auto a, auto b) {
    return std::chrono::duration<double>(b - a).count();
  };

  // Base solve of the configured scenario from time zero.
  auto t0 = clock_now();
  NodeSolve base = solve_problem(ps);
  timings["solve"] = secs(t0, clock_now());

  write_convergence_csv(base.solution.picard, out_path("convergence.csv"));
  artifacts.push_back("convergence.csv");

  if (run_cfg.dump_paths) {
    write_paths_csv(base.bundle, out_path("paths.csv"), &base.forward.X,
                    base.forward.n, &base.solution.Y, &base.solution.Z,
                    base.solution.U_orth.empty() ? nullptr : &base.solution.U_orth);
    artifacts.push_back("paths.csv");
  }

  json diagnostics;
  diagnostics["value"] = base.solution.value;
  diagnostics["value_stderr"] = base.solution.value_stderr;
  diagnostics["eps_hat"] = base.solution.picard.eps_hat;
  diagnostics["iterations"] = base.solution.picard.sup_diffs.size();
  diagnostics["converged"] = base.solution.picard.converged;
  diagnostics["sup_abs_y"] = base.solution.sup_abs_y;
  diagnostics["truncation"] = {{"y", base.solution.audit.y_clamped},
                               {"z", base.solution.audit.z_clamped},
                               {"u", base.solution.audit.u_clamped}};
  diagnostics["value_projections"] = base.solution.value_projections;
  diagnostics["condition_hint"] = base.solution.max_condition;
  if (!base.solution.U_orth.empty())
    diagnostics["orth_step_residual_mean"] = base.solution.orth_step_residual_mean;

  if (run_cfg.has_study) {
    t0 = clock_now();
    if (!run_cfg.nodes.empty()) {
      std::vector<NodeValue> values;
      json oracle_rows = json::array();
      for (const auto& nd : run_cfg.nodes) {
        const double x[1] = {nd[1]}, m[1] = {nd[2]};
        values.push_back(estimate_u_node(ps, nd[0], std::span<const double>(x, 1),
                                         std::span<const double>(m, 1), ps.seed));
        if (run_cfg.oracle == "half_window_log") {
          OracleValue ov = half_window_log_oracle(
              ps.model, ps.grid.horizon(), nd[0], nd[1], nd[2],
              std::max<std::size_t>(ps.paths, 10000), ps.seed + 7919);
          oracle_rows.push_back({{"t", nd[0]},
                                 {"x", nd[1]},
                                 {"m", nd[2]},
                                 {"u", values.back().u},
                                 {"u_se", values.back().se},
                                 {"oracle", ov.value},
                                 {"oracle_se", ov.se}});
        }
      }
      write_nodes_csv(out_path("nodes.csv"), run_cfg.nodes, values, nullptr);
      artifacts.push_back("nodes.csv");
      if (!oracle_rows.empty()) diagnostics["oracle"] = oracle_rows;
    }
    if (run_cfg.surface_enabled) {
      MarkovSurface surface =
          build_surface(ps, run_cfg.surface_ts, run_cfg.surface_xs,
                        run_cfg.surface_ms, run_cfg.bump_h, ps.seed);
      write_surface_csv(surface, out_path("surface.csv"));
      artifacts.push_back("surface.csv");
      if (run_cfg.representation) {
        RepresentationReport rep = representation_check(
            base.solution, base.forward, base.bundle, surface, ps.coeffs);
        write_representation_csv(rep, out_path("representation.csv"));
        artifacts.push_back("representation.csv");
        diagnostics["representation"] = {{"median_rel", rep.median_rel},
                                         {"q25", rep.q25},
                                         {"q50", rep.q50},
                                         {"q75", rep.q75},
                                         {"excluded", rep.excluded}};
      }
    }
    if (run_cfg.check_bracket) {
      BracketCheck bc = bracket_check(base.solution, base.bundle);
      csv::Writer w(out_path("bracket.csv"));
      w.line("path,sup_residual");
      for (std::size_t p = 0; p < bc.sup_residual.size(); ++p) {
        w.field(p);
        w.field(bc.sup_residual[p]);
        w.endline();
      }
      artifacts.push_back("bracket.csv");
      diagnostics["bracket_median_sup"] = bc.median_sup;
    }
    if (!run_cfg.refinement_N.empty()) {
      csv::Writer w(out_path("refinement.csv"));
      w.line("level,N,median_sup_residual");
      std::size_t level = 0;
      for (std::size_t Nr : run_cfg.refinement_N) {
        ProblemSpec rs = ps;
        rs.grid = TimeGrid::uniform(ps.grid.horizon(), Nr);
        rs.paths = run_cfg.refinement_paths;
        NodeSolve nsv = solve_problem(rs);
        BracketCheck bc = bracket_check(nsv.solution, nsv.bundle);
        w.field(level++);
        w.field(Nr);
        w.field(bc.median_sup);
        w.endline();
      }
      artifacts.push_back("refinement.csv");
    }
    timings["study"] = secs(t0, clock_now());
  }

  if (run_cfg.has_market) {
    t0 = clock_now();
    HedgeProblem hp;
    hp.model = ps.model;
    hp.grid = ps.grid;
    hp.market = run_cfg.market;
    hp.basis = ps.basis;
    hp.quad = ps.quad;
    hp.paths = ps.paths;
    hp.seed = ps.seed;
    const double r0 = run_cfg.r0.empty() ? 0.0 : run_cfg.r0[0];
    const double m0 = ps.model.m0.empty() ? 0.0 : ps.model.m0[0];
    const double rv[1] = {r0}, mv[1] = {m0};
    PriceResult pr = indifference_price(hp, 0.0, std::span<const double>(rv, 1),
                                        std::span<const double>(mv, 1), ps.seed);
    PricePartials pp =
        price_partials(hp, 0.0, r0, m0, run_cfg.market_bump_h, ps.seed);
    PathStart st;
    st.m = ps.model.m0;
    PathBundle hb = generate_paths(ps.model, ps.grid, ps.paths, ps.seed + 13, &st);
    ForwardSolution risk = simulate_risk(run_cfg.market, hb, run_cfg.r0, 0);
    const double d2p[1] = {pp.d2p};
    std::vector<double> d3p(run_cfg.market.d, 0.0);
    d3p[0] = pp.d3p;
    // q at the evaluation time (zero bracket level at t = 0 gives q = I).
    std::vector<double> qeval(run_cfg.market.d * run_cfg.market.d, 0.0);
    for (std::size_t c = 0; c < run_cfg.market.d; ++c)
      qeval[c * run_cfg.market.d + c] = 1.0;
    std::vector<double> delta =
        delta_hedge(run_cfg.market, 0.0, std::span<const double>(rv, 1),
                    std::span<const double>(mv, 1), qeval.data(),
                    std::span<const double>(d2p, 1), d3p);
    HedgeReport rep;
    if (run_cfg.backtest_enabled) {
      // Constant-delta policy from the evaluation node; scenario studies
      // wanting dynamic policies drive hedge_backtest directly.
      const std::vector<double> node_delta = delta;
      DeltaPolicy policy = [&node_delta](double, std::span<const double>,
                                         std::span<const double>,
                                         std::span<double> out) {
        for (std::size_t a = 0; a < node_delta.size(); ++a) out[a] = node_delta[a];
      };
      rep = hedge_backtest(run_cfg.market, policy, hb, risk, run_cfg.initial_wealth);
    } else {
      rep = hedge_backtest(run_cfg.market, nullptr, hb, risk, run_cfg.initial_wealth);
    }
    rep.price = pr.price;
    rep.delta = delta;
    write_hedge_csv(rep, 0.0, r0, m0, out_path("hedge.csv"));
    artifacts.push_back("hedge.csv");
    diagnostics["hedge"] = {{"price", pr.price},
                            {"price_se", pr.se},
                            {"d2p", pp.d2p},
                            {"d3p", pp.d3p},
                            {"delta", delta},
                            {"pnl_var_hedged", rep.pnl_var_hedged},
                            {"pnl_var_unhedged", rep.pnl_var_unhedged}};
    timings["market"] = secs(t0, clock_now());
  }

  json manifest;
  manifest["scenario"] = run_cfg.scenario;
  manifest["seed"] = run_cfg.problem.seed;
  manifest["config_hash"] = hex64(fnv1a_bytes(cfg.raw.dump().data(),
                                              cfg.raw.dump().size()));
  manifest["artifacts"] = json::array();
  for (const auto& a : artifacts)
    manifest["artifacts"].push_back(
        {{"file", a}, {"checksum", hex64(fnv1a_file(out_path(a)))}});
  manifest["diagnostics"] = diagnostics;
  manifest["wall_clock"] = timings;

  RunResult result;
  result.manifest_path = out_path("manifest.json");
  result.manifest_json = manifest.dump(2);
  std::ofstream mf(result.manifest_path, std::ios::binary);
  mf << result.manifest_json << "\n";
  return result;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("missing artifact " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void emit_plot_data(const std::string& manifest_path, const std::string& out_csv) {
  std::ifstream in(manifest_path);
  if (!in) throw config_error("cannot open manifest " + manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw config_error(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string dir =
      std::filesystem::path(manifest_path).parent_path().string();
  csv::Writer w(out_csv);
  w.line("series,xaxis,x,y");
  if (!manifest.contains("artifacts")) return;
  for (const auto& art : manifest.at("artifacts")) {
    const std::string file = art.at("file").get<std::string>();
    const std::string path = dir.empty() ? file : dir + "/" + file;
    const auto rows = read_csv(path);
    if (rows.size() < 2) continue;
    const auto& header = rows[0];
    if (file == "surface.csv") {
      // One series per (t, m) slice of u against x.
      for (std::size_t r = 1; r < rows.size(); ++r) {
        w.field("u[t=" + rows[r][0] + ",m=" + rows[r][2] + "]");
        w.field(std::string("x"));
        w.field(rows[r][1]);
        w.field(rows[r][3]);
        w.endline();
      }
      continue;
    }
    for (std::size_t r = 1; r < rows.size(); ++r)
      for (std::size_t c = 1; c < rows[r].size() && c < header.size(); ++c) {
        w.field(file + ":" + header[c]);
        w.field(header[0]);
        w.field(rows[r][0]);
        w.field(rows[r][c]);
        w.endline();
      }
  }
}

}  // namespace qfbsde
