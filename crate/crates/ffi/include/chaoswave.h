#ifndef CHAOSWAVE_H
#define CHAOSWAVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_NULL_POINTER = 1,
  CW_STATUS_INVALID_PARAMETER = 2,
  CW_STATUS_NUMERICAL = 3,
  CW_STATUS_BUDGET = 4,
  CW_STATUS_UNSUPPORTED = 5,
  CW_STATUS_IO = 6,
  CW_STATUS_ASSERTION_FAILED = 7,
  CW_STATUS_PANIC = 8,
} CwStatus;

/**
 * Projected chaos coefficients at one point.
 */
typedef struct CwChaos CwChaos;

/**
 * Covariance model handle.
 */
typedef struct CwModel CwModel;

/**
 * Discretized solver handle (grid, noise factors and Green weights).
 */
typedef struct CwSolver CwSolver;

typedef struct CwAlpha {
  double value;
  double std_error;
} CwAlpha;

typedef struct CwConstants {
  double t_horizon;
  double big_gamma_t;
  double c0;
  double m_t;
  double m_t_prime;
  double c_t;
  double c_t_prime;
  double c_t_dprime;
} CwConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated
 * to `len`). Returns the full message length, 0 when there is none.
 */
size_t cw_last_error(char *buf, size_t len);

/**
 * Builds a model; `white != 0` selects spatial white noise (then `alpha` is ignored).
 */
enum CwStatus cw_model_new(double hurst, double alpha, int32_t white, struct CwModel **out);

void cw_model_free(struct CwModel *model);

/**
 * α_n(t) for n ≤ 3 with its standard error (0 for deterministic routes).
 */
enum CwStatus cw_alpha(const struct CwModel *model, size_t n, double t, struct CwAlpha *out);

/**
 * Γ_T, c₀, M_T, M_T′, C_T, C_T′ and C_T″ at horizon `t_horizon`.
 */
enum CwStatus cw_constants(const struct CwModel *model, double t_horizon, struct CwConstants *out);

/**
 * Discretizes [0, T]×[−L, L] into nt×nx cells for `model`.
 */
enum CwStatus cw_solver_new(const struct CwModel *model,
                            double t_horizon,
                            double half_width,
                            size_t nt,
                            size_t nx,
                            struct CwSolver **out);

void cw_solver_free(struct CwSolver *solver);

/**
 * Number of noise cells (the length of one coordinate vector).
 */
enum CwStatus cw_solver_cells(const struct CwSolver *solver, size_t *out);

/**
 * Chaos coefficients of u_N(t, x) up to `order`.
 */
enum CwStatus cw_chaos_new(const struct CwSolver *solver,
                           double t,
                           double x,
                           size_t order,
                           struct CwChaos **out);

void cw_chaos_free(struct CwChaos *chaos);

/**
 * E[u_N²] = 1 + Σ n!‖T_n‖².
 */
enum CwStatus cw_chaos_second_moment(const struct CwChaos *chaos, double *out);

/**
 * Var I_n for 1 ≤ n ≤ order.
 */
enum CwStatus cw_chaos_variance(const struct CwChaos *chaos, size_t n, double *out);

/**
 * Evaluates u_N at the normal coordinates `zeta` (length = cells).
 */
enum CwStatus cw_chaos_evaluate(const struct CwChaos *chaos,
                                const double *zeta,
                                size_t len,
                                double *out);

/**
 * Writes `count` samples of u_N (sample indices 0..count of `seed`) to `out`.
 */
enum CwStatus cw_chaos_sample(const struct CwChaos *chaos,
                              uint64_t seed,
                              size_t count,
                              double *out);

/**
 * Runs a CLI subcommand on TOML config text (NULL or "" for the defaults) and stores the
 * process exit code it would return in `exit_code`.
 */
enum CwStatus cw_run_command(const char *command, const char *config_toml, int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAOSWAVE_H */
