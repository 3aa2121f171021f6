#ifndef FEDGS_H
#define FEDGS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedgsStatus {
  FEDGS_STATUS_OK = 0,
  FEDGS_STATUS_NULL_POINTER = 1,
  FEDGS_STATUS_INVALID_ARGUMENT = 2,
  FEDGS_STATUS_INVALID_CONFIG = 3,
  FEDGS_STATUS_DEGENERATE_PROBLEM = 4,
  FEDGS_STATUS_INSTANCE_TOO_LARGE = 5,
  FEDGS_STATUS_UNKNOWN_SAMPLER = 6,
  FEDGS_STATUS_MALFORMED_INPUT = 7,
  FEDGS_STATUS_INSUFFICIENT_DEVICES = 8,
  FEDGS_STATUS_RUNTIME = 9,
  FEDGS_STATUS_PANIC = 10,
} FedgsStatus;

typedef enum FedgsInitializer {
  FEDGS_INITIALIZER_MPINV = 0,
  FEDGS_INITIALIZER_ZERO = 1,
  FEDGS_INITIALIZER_RANDOM = 2,
} FedgsInitializer;

/**
 * Opaque selection instance.
 */
typedef struct FedgsProblem FedgsProblem;

/**
 * Summary of one solver or sampler call.
 */
typedef struct FedgsSolveInfo {
  double objective;
  double divergence;
  /**
   * Accepted swaps (GBP-CS only; 0 for other samplers).
   */
  uint64_t iterations;
  uint64_t evaluations;
  double elapsed_ms;
} FedgsSolveInfo;

typedef struct FedgsCostParams {
  double model_bits;
  uint64_t groups;
  uint64_t selected;
  uint64_t iterations;
  double b_up_ext;
  double b_down_ext;
  double b_up_int;
  double b_down_int;
  double gamma_top;
  double gamma_bs;
  double gamma_device;
  double t_comp;
  double t_select;
} FedgsCostParams;

typedef struct FedgsCostReport {
  double comm_ext;
  double comm_int;
  double total_fedgs;
  double total_fedavg;
  double condition_lhs;
  double condition_rhs;
  bool condition_holds;
  bool fedgs_faster;
} FedgsCostReport;

typedef struct FedgsCondition {
  double lhs;
  double rhs;
  bool holds;
} FedgsCondition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a problem from a row-major `classes x candidates` count matrix
 * and a `classes`-long target.
 *
 * # Safety
 * `a` must point to `classes * candidates` values, `y` to `classes`
 * values, and `out` must be writable.
 */
enum FedgsStatus fedgs_problem_new(size_t classes,
                                   size_t candidates,
                                   size_t select,
                                   const int64_t *a,
                                   const double *y,
                                   struct FedgsProblem **out);

/**
 * Parses a problem document `{F, alpha, L_sel, A, y, total?}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum FedgsStatus fedgs_problem_from_json(const char *json, struct FedgsProblem **out);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `problem` must come from this library and not be used afterwards.
 */
void fedgs_problem_free(struct FedgsProblem *problem);

/**
 * Number of candidate columns.
 *
 * # Safety
 * `problem` must be a live handle; `out` writable.
 */
enum FedgsStatus fedgs_problem_candidates(const struct FedgsProblem *problem, size_t *out);

/**
 * `||A x - y||` for a 0/1 selection of length `len`.
 *
 * # Safety
 * `x` must point to `len` bytes; `out` writable.
 */
enum FedgsStatus fedgs_problem_objective(const struct FedgsProblem *problem,
                                         const uint8_t *x,
                                         size_t len,
                                         double *out);

/**
 * Runs GBP-CS from the given start point. `max_steps == 0` uses the
 * default cap. The selection is written to `x_out` as 0/1 bytes.
 *
 * # Safety
 * `x_out` must have room for `x_len` bytes; `info` may be null.
 */
enum FedgsStatus fedgs_solve(const struct FedgsProblem *problem,
                             enum FedgsInitializer initializer,
                             uint64_t seed,
                             size_t max_steps,
                             uint8_t *x_out,
                             size_t x_len,
                             struct FedgsSolveInfo *info);

/**
 * Runs a sampler by name: `gbp-cs`, `gbp-cs:zero`, `gbp-cs:random`,
 * `random`, `mc`, `brute` or `ga`, with default settings.
 *
 * # Safety
 * `sampler` must be a NUL-terminated string; see [`fedgs_solve`].
 */
enum FedgsStatus fedgs_sample(const struct FedgsProblem *problem,
                              const char *sampler,
                              uint64_t seed,
                              uint8_t *x_out,
                              size_t x_len,
                              struct FedgsSolveInfo *info);

/**
 * Fills `out` with every delay of the cost model.
 *
 * # Safety
 * `params` readable, `out` writable.
 */
enum FedgsStatus fedgs_cost_report(const struct FedgsCostParams *params,
                                   struct FedgsCostReport *out);

/**
 * `T L / (M (L - 1)) < B_int / B_ext`.
 *
 * # Safety
 * `out` writable.
 */
enum FedgsStatus fedgs_efficiency_condition(uint64_t iterations,
                                            uint64_t groups,
                                            uint64_t selected,
                                            double b_int,
                                            double b_ext,
                                            struct FedgsCondition *out);

/**
 * Runs a simulation described by a JSON config. `protocol` is `fedgs` or
 * `fedavg`. On `Ok` or `InsufficientDevices`, `*metrics_out` receives the
 * per-round metrics as JSON lines; free it with [`fedgs_string_free`].
 *
 * # Safety
 * String arguments NUL-terminated; `metrics_out` writable.
 */
enum FedgsStatus fedgs_simulate_json(const char *config_json,
                                     const char *protocol,
                                     size_t workers,
                                     char **metrics_out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void fedgs_string_free(char *s);

/**
 * Message for the last failing call on this thread, or an empty string.
 * Valid until the next library call on the same thread.
 */
const char *fedgs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedgs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDGS_H */
