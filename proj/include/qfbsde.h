/* qfbsde: Monte-Carlo solver for forward-backward stochastic differential
 * equations driven by continuous martingales, with quadratic-growth
 * generators, Markov-representation checks and utility-indifference hedging.
 *
 * C interface of the shared library. All functions return a status code from
 * qfbsde_status; rich results come back through an opaque handle that must be
 * released with qfbsde_result_free.
 */
#ifndef QFBSDE_H
#define QFBSDE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qfbsde_status {
  QFBSDE_OK = 0,
  QFBSDE_ERR_INTERNAL = 1,
  QFBSDE_ERR_VALIDATION = 2, /* config rejected before any solve */
  QFBSDE_ERR_SOLVER = 3,     /* a solver stage failed */
  QFBSDE_ERR_CAPACITY = 4    /* memory budget exceeded */
} qfbsde_status;

typedef struct qfbsde_result qfbsde_result;

/* Runs the scenario described by the JSON config file. out_dir may be NULL
 * (defaults to "qfbsde_out"), seed < 0 keeps the config seed, threads <= 0
 * keeps the current worker count. On success *out carries the manifest; on
 * failure it carries the error report. *out may be NULL if no detail is
 * wanted. */
qfbsde_status qfbsde_run(const char* config_path, const char* out_dir,
                         long long seed, int threads, qfbsde_result** out);

/* Static validation with sampled hypothesis audits; never runs the solver.
 * The result message is a JSON issue report. */
qfbsde_status qfbsde_validate(const char* config_path, qfbsde_result** out);

/* Normalizes the artifacts listed in a run manifest into a long-format CSV
 * with header series,xaxis,x,y. */
qfbsde_status qfbsde_plotdata(const char* manifest_path, const char* out_csv,
                              qfbsde_result** out);

/* Message text of a result: the manifest JSON (run), the validation report
 * (validate), or an error description. Owned by the handle. */
const char* qfbsde_result_message(const qfbsde_result* result);

/* Path of the manifest written by a successful run; empty otherwise. */
const char* qfbsde_result_manifest_path(const qfbsde_result* result);

void qfbsde_result_free(qfbsde_result* result);

const char* qfbsde_version(void);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* QFBSDE_H */
