#ifndef THERMOCONV_H
#define THERMOCONV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_DIMENSION_MISMATCH = 2,
  TC_STATUS_NOT_STABLE = 3,
  TC_STATUS_SINGULAR = 4,
  TC_STATUS_INVALID_ARGUMENT = 5,
  TC_STATUS_CONFIG = 6,
  TC_STATUS_IO = 7,
  TC_STATUS_NUMERICAL = 8,
  TC_STATUS_PANIC = 9,
} TcStatus;

/**
 * Opaque handle to an ε-family OU member.
 */
typedef struct TcOu TcOu;

/**
 * Thermodynamic functionals of one OU law at time `t`.
 */
typedef struct TcThermoReport {
  double t;
  double free_energy;
  double dissipation;
  double sigma_hk;
  double sigma_ex;
  double sigma_total;
} TcThermoReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *tc_last_error_message(void);

/**
 * Builds the ε-member for the `dim × dim` matrix `b` with `dx` fast
 * coordinates. On success `*out` owns a handle released by [`tc_ou_free`].
 *
 * # Safety
 * `b` must point to `dim*dim` doubles and `out` must be writable.
 */
enum TcStatus tc_ou_new(const double *b, size_t dim, size_t dx, double eps, struct TcOu **out);

/**
 * # Safety
 * `handle` must come from [`tc_ou_new`] and not be used afterwards.
 */
void tc_ou_free(struct TcOu *handle);

/**
 * # Safety
 * `handle` must be a live handle and `out` writable.
 */
enum TcStatus tc_ou_dim(const struct TcOu *handle, size_t *out);

/**
 * Writes the invariant covariance `Σᵉ` (row-major, `dim*dim`) to `out`.
 *
 * # Safety
 * `handle` must be live and `out` must hold `dim*dim` doubles.
 */
enum TcStatus tc_ou_sigma(const struct TcOu *handle, double *out);

/**
 * Functionals at time `t` of the law started from `N(mean, cov)`.
 *
 * # Safety
 * `mean` must hold `dim` doubles, `cov` `dim*dim`, and `out` be writable.
 */
enum TcStatus tc_ou_thermo_report(const struct TcOu *handle,
                                  const double *mean,
                                  const double *cov,
                                  double t,
                                  struct TcThermoReport *out);

/**
 * Uniform curvature bound `ρ ≤ 0` of the OU family for `b`.
 *
 * # Safety
 * `b` must point to `dim*dim` doubles and `out` be writable.
 */
enum TcStatus tc_cd_rho(const double *b, size_t dim, size_t dx, double *out);

/**
 * Solves `MX + XMᵀ = Q` for positively stable `M`.
 *
 * # Safety
 * `m`, `q` and `out` must each hold `n*n` doubles.
 */
enum TcStatus tc_solve_lyapunov(const double *m, const double *q, size_t n, double *out);

/**
 * `exp(tM)`.
 *
 * # Safety
 * `m` and `out` must each hold `n*n` doubles.
 */
enum TcStatus tc_expm(const double *m, size_t n, double t, double *out);

/**
 * Runs the experiment described by the JSON `config` and writes its CSV
 * and JSON under `out_dir`. `*pass` receives 1 if every required verdict
 * holds and 0 otherwise.
 *
 * # Safety
 * `config` and `out_dir` must be NUL-terminated UTF-8; `pass` writable.
 */
enum TcStatus tc_run_experiment(const char *config, const char *out_dir, int32_t *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOCONV_H */
