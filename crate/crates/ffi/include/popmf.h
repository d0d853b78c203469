#ifndef POPMF_H
#define POPMF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PopmfStatus {
  POPMF_STATUS_OK = 0,
  // A required pointer argument was null.
  POPMF_STATUS_NULL_POINTER = 1,
  // An argument is inconsistent with the others (buffer length, sizes).
  POPMF_STATUS_INVALID_ARGUMENT = 2,
  // The library rejected the input (bad model, bad matrix, cap exceeded).
  POPMF_STATUS_VALIDATION = 3,
  // A computation failed at run time.
  POPMF_STATUS_RUNTIME = 4,
  // An internal panic was caught.
  POPMF_STATUS_PANIC = 5,
} PopmfStatus;

// Row-stochastic interaction matrix.
typedef struct PopmfInteraction PopmfInteraction;

// Two-state population model (logit coordination game or SIS).
typedef struct PopmfModel PopmfModel;

// One simulated trajectory.
typedef struct PopmfTrajectory PopmfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failing call on this thread; empty after a
// successful call. Valid until the next call on the same thread.
const char *popmf_last_error(void);

// Library version as a static NUL-terminated string.
const char *popmf_version(void);

// Complete graph with self-loops, `W = 11ᵀ/n`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum PopmfStatus popmf_interaction_complete(size_t n, struct PopmfInteraction **out);

// Ring where each agent averages over its `⌊density·n⌋` nearest neighbors.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum PopmfStatus popmf_interaction_nearest_neighbor(size_t n,
                                                    double density,
                                                    struct PopmfInteraction **out);

// Random-walk matrix of an undirected graph given by `len` edges
// `(us[k], vs[k])`.
//
// # Safety
// `us` and `vs` must point to `len` readable values; `out` must be writable.
enum PopmfStatus popmf_interaction_from_edges(size_t n,
                                              const size_t *us,
                                              const size_t *vs,
                                              size_t len,
                                              struct PopmfInteraction **out);

// # Safety
// `w` must be null or a handle from this library that was not yet freed.
void popmf_interaction_free(struct PopmfInteraction *w);

// Number of agents, or 0 for a null handle.
//
// # Safety
// `w` must be null or a live handle.
size_t popmf_interaction_size(const struct PopmfInteraction *w);

// Local density θ, spectral density λ (power iteration to `tol`) and the
// maximum column sum.
//
// # Safety
// `w` must be a live handle; the three out pointers must be writable.
enum PopmfStatus popmf_interaction_density(const struct PopmfInteraction *w,
                                           double tol,
                                           size_t max_iter,
                                           double *theta,
                                           double *lambda,
                                           double *max_col_sum);

// Logit coordination game with utilities `(x₁, 2x₂)` and noise `eta`; every
// agent has clock rate `clock_rate`. The interaction matrix is copied.
//
// # Safety
// `w` must be a live handle; `out` must be writable.
enum PopmfStatus popmf_model_logit(const struct PopmfInteraction *w,
                                   double eta,
                                   double clock_rate,
                                   struct PopmfModel **out);

// SIS epidemic on an undirected weighted graph. `weights` may be null for
// unit weights. State 0 is susceptible, state 1 infected.
//
// # Safety
// `us`, `vs` (and `weights` unless null) must point to `len` readable
// values; `out` must be writable.
enum PopmfStatus popmf_model_sis(size_t n,
                                 const size_t *us,
                                 const size_t *vs,
                                 const double *weights,
                                 size_t len,
                                 double b,
                                 double gamma,
                                 struct PopmfModel **out);

// # Safety
// `m` must be null or a handle from this library that was not yet freed.
void popmf_model_free(struct PopmfModel *m);

// Number of agents, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t popmf_model_agents(const struct PopmfModel *m);

// Number of states, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t popmf_model_states(const struct PopmfModel *m);

// Continuous-time trajectory on `[0, horizon]` from the state indices in
// `init` (one per agent).
//
// # Safety
// `m` must be a live handle, `init` must point to `n` readable values and
// `out` must be writable.
enum PopmfStatus popmf_simulate_ct(const struct PopmfModel *m,
                                   const uint32_t *init,
                                   size_t n,
                                   double horizon,
                                   uint64_t seed,
                                   struct PopmfTrajectory **out);

// Discrete-time chain with step `xi`; requires `xi · Σ r_i ≤ 1`.
//
// # Safety
// As for [`popmf_simulate_ct`].
enum PopmfStatus popmf_simulate_dt(const struct PopmfModel *m,
                                   const uint32_t *init,
                                   size_t n,
                                   double horizon,
                                   double xi,
                                   uint64_t seed,
                                   struct PopmfTrajectory **out);

// # Safety
// `t` must be null or a handle from this library that was not yet freed.
void popmf_trajectory_free(struct PopmfTrajectory *t);

// Number of state-changing events, or 0 for a null handle.
//
// # Safety
// `t` must be null or a live handle.
size_t popmf_trajectory_events(const struct PopmfTrajectory *t);

// Population average at each of the `grid_len` times, written row-major
// into `out` (`grid_len × n_states` values).
//
// # Safety
// `t` must be a live handle, `grid` readable for `grid_len` values and
// `out` writable for `out_len` values.
enum PopmfStatus popmf_trajectory_sample_average(const struct PopmfTrajectory *t,
                                                 const double *grid,
                                                 size_t grid_len,
                                                 double *out,
                                                 size_t out_len);

// CMFA state at `horizon` from `x0` (RK4 with step `step`). Requires a
// model with identical agents.
//
// # Safety
// `m` must be a live handle; `x0` and `out` must hold `n_states` values.
enum PopmfStatus popmf_cmfa_final(const struct PopmfModel *m,
                                  const double *x0,
                                  size_t n_states,
                                  double horizon,
                                  double step,
                                  double *out);

// Population average of the NIMFA at `horizon`, started from the pure
// profile given by the state indices in `init`.
//
// # Safety
// `m` must be a live handle, `init` readable for `n` values and `out`
// writable for `n_states` values.
enum PopmfStatus popmf_nimfa_average_final(const struct PopmfModel *m,
                                           const uint32_t *init,
                                           size_t n,
                                           double horizon,
                                           double step,
                                           double *out,
                                           size_t n_states);

// Exact `E[Y_av(t)]` from the deterministic initial state `init`, by
// uniformization over all `|S|^N` configurations (at most 65536).
//
// # Safety
// `m` must be a live handle, `init` readable for `n` values and `out`
// writable for `n_states` values.
enum PopmfStatus popmf_exact_average(const struct PopmfModel *m,
                                     const uint32_t *init,
                                     size_t n,
                                     double t,
                                     double *out,
                                     size_t n_states);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POPMF_H */
