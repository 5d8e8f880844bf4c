#pragma once

#include <array>
#include <optional>
#include <string>

#include "json.hpp"
#include "qfbsde/hedging.hpp"
#include "qfbsde/markov.hpp"

namespace qfbsde {

struct ValidationIssue {
  bool error = false;
  std::string message;
};

// Parsed scenario: a forward-backward problem plus optional study and market
// blocks. Coefficients come from declarative preset families so configs stay
// hashable.
struct ExperimentConfig {
  nlohmann::json raw;
  std::string scenario;
  ProblemSpec problem;

  bool has_market = false;
  MarketSpec market;
  double market_bump_h = 1e-2;
  std::vector<double> r0;
  bool backtest_enabled = false;
  double initial_wealth = 0.0;

  // Times where a coefficient family jumps; each must be a grid point.
  std::vector<double> coeff_discontinuities;

  bool has_study = false;
  std::vector<std::array<double, 3>> nodes;  // (t, x, m)
  bool surface_enabled = false;
  std::vector<double> surface_ts, surface_xs, surface_ms;
  double bump_h = 1e-2;
  bool representation = false;
  bool check_bracket = false;
  std::string oracle;  // "half_window_log" or empty
  std::vector<std::size_t> refinement_N;
  std::size_t refinement_paths = 0;

  bool dump_paths = false;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Static checks plus sampled hypothesis audits (terminal bound, generator
// growth, coefficient partials vs finite differences). Never runs the solver.
std::vector<ValidationIssue> validate_config(const ExperimentConfig& cfg);
std::string validation_report_json(const std::vector<ValidationIssue>& issues);

struct RunResult {
  std::string manifest_path;
  std::string manifest_json;
};

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         std::optional<std::uint64_t> seed_override, int threads);

// Normalizes every artifact in the manifest into series,xaxis,x,y rows.
void emit_plot_data(const std::string& manifest_path, const std::string& out_csv);

std::uint64_t fnv1a_bytes(const void* data, std::size_t size,
                          std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a_file(const std::string& path);

}  // namespace qfbsde
