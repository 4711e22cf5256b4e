#ifndef PHREG_H
#define PHREG_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum PhregStatus {
  PHREG_STATUS_OK = 0,
  PHREG_STATUS_NULL_POINTER = 1,
  PHREG_STATUS_INVALID_ARGUMENT = 2,
  // A solvability condition fails or the target rank is infeasible.
  PHREG_STATUS_UNSOLVABLE = 3,
  // The synthesized closed loop did not pass verification.
  PHREG_STATUS_VERIFICATION_FAILED = 4,
  // A numerical factorization failed.
  PHREG_STATUS_NUMERICAL = 5,
  // A Rust panic was caught at the boundary.
  PHREG_STATUS_PANIC = 6,
} PhregStatus;

typedef enum PhregMode {
  PHREG_MODE_PROPORTIONAL = 0,
  PHREG_MODE_DERIVATIVE = 1,
  // Derivative feedback with a prescribed rank of the closed-loop `E`.
  PHREG_MODE_DERIVATIVE_RANK = 2,
  // Derivative and proportional feedback with a prescribed rank.
  PHREG_MODE_COMBINED = 3,
} PhregMode;

// Opaque port-Hamiltonian realization `(J, R, Q, G, P)`.
typedef struct PhregRealization PhregRealization;

// Opaque synthesis result.
typedef struct PhregSynthesis PhregSynthesis;

// Opaque descriptor system `(E, A, B, C)`.
typedef struct PhregSystem PhregSystem;

// Pencil and solvability analysis. Counts that do not apply are `-1`.
typedef struct PhregAnalysis {
  bool regular;
  int64_t index;
  int64_t rank_e;
  int64_t finite_eig_count;
  bool proportional_condition;
  bool derivative_condition;
  bool completely_observable;
  int64_t mu;
  // Feasible ranks for derivative feedback are `lo..=hi`, restricted to
  // `n - r` even when `parity` is set.
  int64_t feasible_lo;
  int64_t feasible_hi;
  bool parity;
} PhregAnalysis;

typedef struct PhregSynthesisInfo {
  uint64_t n;
  uint64_t m;
  int64_t achieved_rank;
  int64_t index;
  bool regular;
  bool has_k;
  bool has_f;
  // `1` preserved, `0` violated, `-1` not checked (no realization).
  int32_t ph_preserved;
} PhregSynthesisInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on this thread.
const char *phreg_last_error(void);

// Library version as a static NUL-terminated string.
const char *phreg_version(void);

// Creates a system from row-major `E`, `A` (`n x n`), `B` (`n x m`) and
// `C` (`m x n`).
//
// # Safety
// Each matrix pointer must reference the stated number of doubles and
// `out` must be writable.
enum PhregStatus phreg_system_new(size_t n,
                                  size_t m,
                                  const double *e,
                                  const double *a,
                                  const double *b,
                                  const double *c,
                                  struct PhregSystem **out);

// # Safety
// `sys` must be null or a handle from this library not yet freed.
void phreg_system_free(struct PhregSystem *sys);

// Dimensions of a system.
//
// # Safety
// `sys` must be a live handle; `n` and `m` must be writable.
enum PhregStatus phreg_system_dims(const struct PhregSystem *sys, size_t *n, size_t *m);

// Creates a realization from row-major `J`, `R`, `Q` (`n x n`) and `G`,
// `P` (`n x m`). `p` may be null for `P = 0`.
//
// # Safety
// Non-null pointers must reference the stated number of doubles and
// `out` must be writable.
enum PhregStatus phreg_realization_new(size_t n,
                                       size_t m,
                                       const double *j,
                                       const double *r,
                                       const double *q,
                                       const double *g,
                                       const double *p,
                                       struct PhregRealization **out);

// # Safety
// `real` must be null or a handle from this library not yet freed.
void phreg_realization_free(struct PhregRealization *real);

// Deterministic random port-Hamiltonian system and its realization.
//
// # Safety
// `out_sys` and `out_real` must be writable.
enum PhregStatus phreg_generate(size_t n,
                                size_t m,
                                size_t rank_e,
                                size_t rank_r,
                                uint64_t seed,
                                bool singular_q,
                                struct PhregSystem **out_sys,
                                struct PhregRealization **out_real);

// Checks the port-Hamiltonian identities at residual tolerance `tol`
// (`<= 0` selects `1e-8`).
//
// # Safety
// `sys` and `real` must be live handles and `verdict` writable.
enum PhregStatus phreg_validate(const struct PhregSystem *sys,
                                const struct PhregRealization *real,
                                double tol,
                                bool *verdict);

// Regularity, index and solvability conditions at relative rank
// tolerance `rel_tol` (`<= 0` selects the default).
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum PhregStatus phreg_analyze(const struct PhregSystem *sys,
                               double rel_tol,
                               struct PhregAnalysis *out);

// Synthesizes feedback. `real` may be null; then the closed loop is not
// checked for port-Hamiltonian structure. `rank` is used only by the
// rank-prescribing modes.
//
// # Safety
// `sys` must be a live handle, `real` null or a live handle, `out`
// writable.
enum PhregStatus phreg_regularize(const struct PhregSystem *sys,
                                  const struct PhregRealization *real,
                                  enum PhregMode mode,
                                  size_t rank,
                                  uint64_t seed,
                                  double rel_tol,
                                  struct PhregSynthesis **out);

// # Safety
// `syn` must be null or a handle from this library not yet freed.
void phreg_synthesis_free(struct PhregSynthesis *syn);

// Summary of a synthesis result.
//
// # Safety
// `syn` must be a live handle and `out` writable.
enum PhregStatus phreg_synthesis_info(const struct PhregSynthesis *syn,
                                      struct PhregSynthesisInfo *out);

// Copies the gains into row-major `m x m` buffers. A null buffer skips
// that gain; an absent gain is written as zeros.
//
// # Safety
// `syn` must be a live handle; non-null buffers must hold `m * m`
// doubles where `m` is the input dimension.
enum PhregStatus phreg_synthesis_gains(const struct PhregSynthesis *syn, double *k, double *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHREG_H */
