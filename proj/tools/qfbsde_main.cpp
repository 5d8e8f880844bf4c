// Experiment runner over the shared-library C interface.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "qfbsde.h"

namespace {

int finish(qfbsde_status status, qfbsde_result* result, bool print_message = true) {
  if (result) {
    if (print_message) std::printf("%s\n", qfbsde_result_message(result));
    qfbsde_result_free(result);
  }
  return static_cast<int>(status);
}

int thread_arg(int cli_threads) {
  if (cli_threads > 0) return cli_threads;
  if (const char* env = std::getenv("QFBSDE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qfbsde: FBSDE Monte-Carlo experiments"};
  app.require_subcommand(1);

  std::string config, out_dir, manifest, plot_out = "plotdata.csv";
  long long seed = -1;
  int threads = 0;

  auto* run = app.add_subcommand("run", "run a scenario config");
  run->add_option("config", config, "config file (JSON)")->required();
  run->add_option("--seed", seed, "seed override");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--threads", threads, "worker threads (QFBSDE_THREADS fallback)");

  auto* validate = app.add_subcommand("validate", "validate a scenario config");
  validate->add_option("config", config, "config file (JSON)")->required();

  auto* plotdata = app.add_subcommand("plotdata", "normalize run artifacts");
  plotdata->add_option("manifest", manifest, "manifest.json of a run")->required();
  plotdata->add_option("--out", plot_out, "output CSV");

  CLI11_PARSE(app, argc, argv);

  qfbsde_result* result = nullptr;
  if (run->parsed()) {
    const qfbsde_status st =
        qfbsde_run(config.c_str(), out_dir.empty() ? nullptr : out_dir.c_str(), seed,
                   thread_arg(threads), &result);
    if (st == QFBSDE_OK)
      std::printf("manifest: %s\n", qfbsde_result_manifest_path(result));
    else
      std::fprintf(stderr, "%s\n", qfbsde_result_message(result));
    return finish(st, result, false);
  }
  if (validate->parsed()) {
    const qfbsde_status st = qfbsde_validate(config.c_str(), &result);
    return finish(st, result);
  }
  const qfbsde_status st =
      qfbsde_plotdata(manifest.c_str(), plot_out.c_str(), &result);
  if (st != QFBSDE_OK) std::fprintf(stderr, "%s\n", qfbsde_result_message(result));
  return finish(st, result, false);
}
