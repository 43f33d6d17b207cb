#ifndef NLPFLOW_H
#define NLPFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NlpfKktClass {
  NLPF_KKT_CLASS_KKT_POINT = 0,
  NLPF_KKT_CLASS_FEASIBLE_NON_KKT = 1,
  NLPF_KKT_CLASS_INFEASIBLE = 2,
  NLPF_KKT_CLASS_CQ_FAILURE = 3,
} NlpfKktClass;

typedef enum NlpfMethod {
  NLPF_METHOD_ADAPTIVE_RK45 = 0,
  NLPF_METHOD_FIXED_RK4 = 1,
} NlpfMethod;

// Result codes. `NLPF_STATUS_OK` is zero.
typedef enum NlpfStatus {
  NLPF_STATUS_OK = 0,
  NLPF_STATUS_NULL_POINTER = 1,
  NLPF_STATUS_INVALID_ARGUMENT = 2,
  NLPF_STATUS_DIMENSION_MISMATCH = 3,
  NLPF_STATUS_UNKNOWN_PROBLEM = 4,
  NLPF_STATUS_PARSE_ERROR = 5,
  NLPF_STATUS_CONSTRAINT_QUALIFICATION = 6,
  NLPF_STATUS_NUMERICAL = 7,
  NLPF_STATUS_PANIC = 8,
} NlpfStatus;

typedef enum NlpfStopReason {
  NLPF_STOP_REASON_CONVERGED_EQUILIBRIUM = 0,
  NLPF_STOP_REASON_CONVERGED_KKT = 1,
  NLPF_STOP_REASON_HORIZON_REACHED = 2,
  NLPF_STOP_REASON_STEP_UNDERFLOW = 3,
  NLPF_STOP_REASON_STEP_LIMIT = 4,
} NlpfStopReason;

// Opaque problem handle.
typedef struct NlpfProblem NlpfProblem;

// Solver and integrator settings. Start from
// `nlpf_solve_options_default()` and override fields.
typedef struct NlpfSolveOptions {
  enum NlpfMethod method;
  double rel_tol;
  double abs_tol;
  // Initial step, and the step of the fixed method.
  double h_init;
  double t_max;
  double stop_field_tol;
  // KKT stop tolerance; zero or negative disables the test.
  double stop_kkt_tol;
  uint64_t max_steps;
  double sigma;
  bool normalize_sigma;
  // ψ1 as a constant, used when `psi1_invdet_power` is zero.
  double psi1;
  // If positive, ψ1 = det(AA')^-p with this p.
  uint32_t psi1_invdet_power;
  double psi2;
} NlpfSolveOptions;

// Summary of a solve.
typedef struct NlpfSolveResult {
  enum NlpfStopReason stop_reason;
  enum NlpfKktClass kkt_class;
  uint64_t steps;
  double final_t;
  // Residuals of the limit; NaN when multipliers are unavailable.
  double stationarity_residual;
  double complementarity_residual;
  double mu_negativity;
} NlpfSolveResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *nlpf_last_error(void);

// Library version as a static NUL-terminated string.
const char *nlpf_version(void);

// Creates a built-in problem (`ex71`, `ex72`, `rosen_suzuki`).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum NlpfStatus nlpf_problem_builtin(const char *name, struct NlpfProblem **out);

// Parses a problem definition (`n = ...`, `objective = ...`, `eq = ...`,
// `ineq = ...` lines).
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum NlpfStatus nlpf_problem_from_text(const char *text, struct NlpfProblem **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `p` must come from this library and not be used afterwards.
void nlpf_problem_free(struct NlpfProblem *p);

// Writes the number of variables, equalities and inequalities. Any of the
// output pointers may be NULL.
//
// # Safety
// `p` must be a live handle; non-null outputs must be writable.
enum NlpfStatus nlpf_problem_dims(const struct NlpfProblem *p, size_t *n, size_t *m, size_t *k);

// Default options: adaptive Dormand–Prince, normalised σ, ψ1 = det(AA')^-10.
struct NlpfSolveOptions nlpf_solve_options_default(void);

// Evaluates the solver field at `x` into `f_out` (both of length n).
//
// # Safety
// `p` must be a live handle, `opts` readable, `x` readable and `f_out`
// writable for `n` doubles.
enum NlpfStatus nlpf_field(const struct NlpfProblem *p,
                           const struct NlpfSolveOptions *opts,
                           const double *x,
                           size_t n,
                           double *f_out);

// Writes the penalty `V(x) = ½|h|² + ½|g⁺|²`.
//
// # Safety
// `p` must be a live handle, `x` readable for `n` doubles and `v_out`
// writable.
enum NlpfStatus nlpf_penalty(const struct NlpfProblem *p, const double *x, size_t n, double *v_out);

// Integrates from `x0`, writes the final point into `x_out` and a summary
// into `result`. `opts` may be NULL for the defaults.
//
// # Safety
// `p` must be a live handle; `x0` and `x_out` must hold `n` doubles;
// `result` must be writable.
enum NlpfStatus nlpf_solve(const struct NlpfProblem *p,
                           const struct NlpfSolveOptions *opts,
                           const double *x0,
                           size_t n,
                           double *x_out,
                           struct NlpfSolveResult *result);

// Classifies `x` with the default pointwise tolerances.
//
// # Safety
// `p` must be a live handle, `x` readable for `n` doubles and `class_out`
// writable.
enum NlpfStatus nlpf_classify(const struct NlpfProblem *p,
                              const double *x,
                              size_t n,
                              enum NlpfKktClass *class_out);

// Recovers the multipliers at `x`: `lambda_out` holds m doubles and
// `mu_out` k doubles.
//
// # Safety
// `p` must be a live handle and the buffers sized as stated.
enum NlpfStatus nlpf_multipliers(const struct NlpfProblem *p,
                                 const double *x,
                                 size_t n,
                                 double *lambda_out,
                                 size_t m,
                                 double *mu_out,
                                 size_t k);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* NLPFLOW_H */
