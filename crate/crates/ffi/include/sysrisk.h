#ifndef SYSRISK_H
#define SYSRISK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  SR_STATUS_INVALID_ARGUMENT = 2,
  SR_STATUS_DOMAIN = 3,
  SR_STATUS_STATE = 4,
  SR_STATUS_SINGULAR_DENOMINATOR = 5,
  SR_STATUS_GOVERNANCE = 6,
  SR_STATUS_INTERNAL = 7,
  SR_STATUS_PANIC = 8,
} SrStatus;

// Model family selector for [`SrModelParams`].
typedef enum SrFamily {
  SR_FAMILY_INDEPENDENT = 0,
  SR_FAMILY_FOUQUE_SUN = 1,
  SR_FAMILY_TWO_MECHANISM = 2,
} SrFamily;

typedef enum SrRiskDefinition {
  SR_RISK_DEFINITION_TYPE_M = 0,
  SR_RISK_DEFINITION_MEAN_BARRIER = 1,
} SrRiskDefinition;

typedef struct SrControlLaw SrControlLaw;

typedef struct SrGovernanceRun SrGovernanceRun;

typedef struct SrRiccati SrRiccati;

// Target-trajectory builder.
typedef struct SrTrajectory SrTrajectory;

// Constant-coefficient model on `[t0, t1]`. `xi` and `epsilon` are used by
// the two-mechanism family only (constant target `xi`).
typedef struct SrModelParams {
  enum SrFamily family;
  size_t n_banks;
  double alpha;
  double gamma;
  double sigma;
  double default_level;
  double xi;
  double epsilon;
  double t0;
  double t1;
  double dt;
} SrModelParams;

typedef struct SrRiskEstimate {
  double probability;
  double std_error;
  uint64_t n_paths;
} SrRiskEstimate;

// Scalar governance parameters; the volatility schedule is passed separately.
typedef struct SrGovernanceParams {
  double t2;
  double dtau;
  double lookahead;
  double s1;
  double s2;
  double lambda;
  double epsilon;
  double xi0;
  uint64_t n_paths;
  double dt_sim;
  double dt_ode;
  uint64_t seed;
  uint32_t menu_slope_denominator;
  double default_level;
  size_t n_banks;
  double baseline_xi;
  double baseline_alpha;
  double baseline_gamma;
} SrGovernanceParams;

// One governance decision.
typedef struct SrDecision {
  double tau1;
  double sigma;
  int32_t chosen_n;
  double probability;
  double std_error;
  bool fallback;
  size_t n_evaluations;
  size_t n_active_after;
} SrDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; valid until the next
// failing call on the same thread. Never `NULL`.
const char *sr_last_error(void);

// Library version as a static NUL-terminated string.
const char *sr_version(void);

// Systemic threshold `int[N/2] + 1`.
size_t sr_systemic_threshold(size_t n_banks);

struct SrTrajectory *sr_trajectory_new(void);

// # Safety
// `traj` must be `NULL` or a handle from [`sr_trajectory_new`] not yet freed.
void sr_trajectory_free(struct SrTrajectory *traj);

// Appends a constant segment on `[start, end]`.
//
// # Safety
// `traj` must be a live trajectory handle.
enum SrStatus sr_trajectory_push_constant(struct SrTrajectory *traj,
                                          double start,
                                          double end,
                                          double value);

// Appends `intercept + slope (t - start)` on `[start, end]`.
//
// # Safety
// `traj` must be a live trajectory handle.
enum SrStatus sr_trajectory_push_linear(struct SrTrajectory *traj,
                                        double start,
                                        double end,
                                        double slope,
                                        double intercept);

// Appends `offset + amplitude sin(2 pi frequency t + phase)` on `[start, end]`.
//
// # Safety
// `traj` must be a live trajectory handle.
enum SrStatus sr_trajectory_push_sinusoid(struct SrTrajectory *traj,
                                          double start,
                                          double end,
                                          double amplitude,
                                          double frequency,
                                          double phase,
                                          double offset);

// Value and right derivative at `t`.
//
// # Safety
// `traj` must be a live handle; `value` and `derivative` must be writable.
enum SrStatus sr_trajectory_eval(const struct SrTrajectory *traj,
                                 double t,
                                 double *value,
                                 double *derivative);

// Solves the Riccati system for the target `traj` on `[t0, t1]`.
//
// # Safety
// `traj` must be a live handle; `out` must be writable. On success `*out`
// owns a new handle to release with [`sr_riccati_free`].
enum SrStatus sr_riccati_solve(const struct SrTrajectory *traj,
                               double epsilon,
                               double lambda,
                               double t0,
                               double t1,
                               double sigma,
                               double dt_ode,
                               struct SrRiccati **out);

// # Safety
// `sol` must be `NULL` or a live Riccati handle.
void sr_riccati_free(struct SrRiccati *sol);

// Number of grid points, or 0 for `NULL`.
//
// # Safety
// `sol` must be `NULL` or a live Riccati handle.
size_t sr_riccati_len(const struct SrRiccati *sol);

// Grid point `k`: time and coefficients `a, b, c`.
//
// # Safety
// `sol` must be a live handle; all output pointers must be writable.
enum SrStatus sr_riccati_get(const struct SrRiccati *sol,
                             size_t k,
                             double *t,
                             double *a,
                             double *b,
                             double *c);

// `V(t, z) = a + b z + c z^2` with linear interpolation in `t`.
//
// # Safety
// `sol` must be a live handle; `out` must be writable.
enum SrStatus sr_riccati_value(const struct SrRiccati *sol, double t, double z, double *out);

// Optimal feedback `-(b + 2 c z) / (2 lambda)`.
//
// # Safety
// `sol` must be a live handle; `out` must be writable.
enum SrStatus sr_riccati_beta(const struct SrRiccati *sol, double t, double z, double *out);

// Derives `alpha_t`, `gamma_t` on a grid of step `dt` over the Riccati horizon.
//
// # Safety
// `sol` and `traj` must be live handles; `out` must be writable.
enum SrStatus sr_control_law_derive(const struct SrRiccati *sol,
                                    const struct SrTrajectory *traj,
                                    double epsilon,
                                    double dt,
                                    struct SrControlLaw **out);

// # Safety
// `law` must be `NULL` or a live control-law handle.
void sr_control_law_free(struct SrControlLaw *law);

// Number of samples, or 0 for `NULL`.
//
// # Safety
// `law` must be `NULL` or a live control-law handle.
size_t sr_control_law_len(const struct SrControlLaw *law);

// Sample `k`: time, `alpha`, `gamma` and the auxiliary mean `xbar`.
//
// # Safety
// `law` must be a live handle; all output pointers must be writable.
enum SrStatus sr_control_law_get(const struct SrControlLaw *law,
                                 size_t k,
                                 double *t,
                                 double *alpha,
                                 double *gamma,
                                 double *xbar);

// Histogram of default counts; `counts` must hold `n_banks + 1` entries.
//
// # Safety
// `params` must be readable and `counts` writable for `counts_len` entries.
enum SrStatus sr_loss_distribution(const struct SrModelParams *params,
                                   uint64_t n_paths,
                                   uint64_t seed,
                                   uint64_t *counts,
                                   size_t counts_len);

// Systemic-risk probability under `definition`.
//
// # Safety
// `params` must be readable and `out` writable.
enum SrStatus sr_systemic_risk(const struct SrModelParams *params,
                               uint64_t n_paths,
                               uint64_t seed,
                               enum SrRiskDefinition definition,
                               struct SrRiskEstimate *out);

// Fills `out` with numerical experiment 1.
//
// # Safety
// `out` must be writable.
enum SrStatus sr_governance_params_default(struct SrGovernanceParams *out);

// Runs the governance loop. The volatility schedule is given as `n_vol`
// `(vol_times[i], vol_sigmas[i])` pieces, each covering `(t_i, t_{i+1}]`.
//
// # Safety
// `params` must be readable, `vol_times`/`vol_sigmas` readable for `n_vol`
// entries, and `out` writable.
enum SrStatus sr_governance_run(const struct SrGovernanceParams *params,
                                const double *vol_times,
                                const double *vol_sigmas,
                                size_t n_vol,
                                bool governed,
                                struct SrGovernanceRun **out);

// # Safety
// `run` must be `NULL` or a live governance-run handle.
void sr_governance_run_free(struct SrGovernanceRun *run);

// Number of decisions, or 0 for `NULL`.
//
// # Safety
// `run` must be `NULL` or a live governance-run handle.
size_t sr_governance_run_len(const struct SrGovernanceRun *run);

// Decision `j`.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum SrStatus sr_governance_run_decision(const struct SrGovernanceRun *run,
                                         size_t j,
                                         struct SrDecision *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYSRISK_H */
