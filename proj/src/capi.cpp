#include "qfbsde.h"

#include <cstdlib>
#include <new>
#include <string>

#include "qfbsde/experiment.hpp"

struct qfbsde_result {
  std::string message;
  std::string manifest_path;
};

namespace {

qfbsde_status classify(const std::exception& e) {
  if (dynamic_cast<const qfbsde::config_error*>(&e)) return QFBSDE_ERR_VALIDATION;
  if (dynamic_cast<const qfbsde::capacity_error*>(&e)) return QFBSDE_ERR_CAPACITY;
  if (dynamic_cast<const qfbsde::solver_error*>(&e)) return QFBSDE_ERR_SOLVER;
  return QFBSDE_ERR_INTERNAL;
}

qfbsde_result* make_result(qfbsde_result** out, std::string message,
                           std::string manifest = {}) {
  if (!out) return nullptr;
  auto* r = new (std::nothrow) qfbsde_result{std::move(message), std::move(manifest)};
  *out = r;
  return r;
}

}  // namespace

extern "C" {

qfbsde_status qfbsde_run(const char* config_path, const char* out_dir,
                         long long seed, int threads, qfbsde_result** out) {
  if (out) *out = nullptr;
  if (!config_path) {
    make_result(out, "{\"error\":\"config path is null\"}");
    return QFBSDE_ERR_VALIDATION;
  }
  try {
    qfbsde::ExperimentConfig cfg = qfbsde::load_config(config_path);
    std::optional<std::uint64_t> seed_opt;
    if (seed >= 0) seed_opt = static_cast<std::uint64_t>(seed);
    qfbsde::RunResult res = qfbsde::run_experiment(
        cfg, out_dir ? out_dir : "qfbsde_out", seed_opt, threads);
    make_result(out, res.manifest_json, res.manifest_path);
    return QFBSDE_OK;
  } catch (const std::exception& e) {
    const qfbsde_status st = classify(e);
    make_result(out, std::string("{\"error\":\"") + e.what() + "\",\"stage\":\"" +
                         (st == QFBSDE_ERR_VALIDATION ? "validation" : "solver") +
                         "\"}");
    return st;
  } catch (...) {
    make_result(out, "{\"error\":\"unknown failure\"}");
    return QFBSDE_ERR_INTERNAL;
  }
}

qfbsde_status qfbsde_validate(const char* config_path, qfbsde_result** out) {
  if (out) *out = nullptr;
  if (!config_path) {
    make_result(out, "{\"error\":\"config path is null\"}");
    return QFBSDE_ERR_VALIDATION;
  }
  try {
    qfbsde::ExperimentConfig cfg = qfbsde::load_config(config_path);
    const auto issues = qfbsde::validate_config(cfg);
    make_result(out, qfbsde::validation_report_json(issues));
    for (const auto& is : issues)
      if (is.error) return QFBSDE_ERR_VALIDATION;
    return QFBSDE_OK;
  } catch (const std::exception& e) {
    make_result(out, std::string("{\"error\":\"") + e.what() + "\"}");
    return classify(e);
  }
}

qfbsde_status qfbsde_plotdata(const char* manifest_path, const char* out_csv,
                              qfbsde_result** out) {
  if (out) *out = nullptr;
  if (!manifest_path || !out_csv) {
    make_result(out, "{\"error\":\"manifest or output path is null\"}");
    return QFBSDE_ERR_VALIDATION;
  }
  try {
    qfbsde::emit_plot_data(manifest_path, out_csv);
    make_result(out, std::string("{\"written\":\"") + out_csv + "\"}");
    return QFBSDE_OK;
  } catch (const std::exception& e) {
    make_result(out, std::string("{\"error\":\"") + e.what() + "\"}");
    return classify(e);
  }
}

const char* qfbsde_result_message(const qfbsde_result* result) {
  return result ? result->message.c_str() : "";
}

const char* qfbsde_result_manifest_path(const qfbsde_result* result) {
  return result ? result->manifest_path.c_str() : "";
}

void qfbsde_result_free(qfbsde_result* result) { delete result; }

const char* qfbsde_version(void) { return "0.1.0"; }

}  // extern "C"
