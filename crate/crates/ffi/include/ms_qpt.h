#ifndef MS_QPT_H
#define MS_QPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MsqptStatus {
  MSQPT_STATUS_OK = 0,
  MSQPT_STATUS_NULL_POINTER = 1,
  MSQPT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The call produced a result, but the optimizer stopped before converging.
   */
  MSQPT_STATUS_NOT_CONVERGED = 3,
  MSQPT_STATUS_IO = 4,
  MSQPT_STATUS_JSON = 5,
  /**
   * A matrix failed a physicality or solvability check.
   */
  MSQPT_STATUS_NUMERICAL = 6,
  MSQPT_STATUS_PANIC = 7,
} MsqptStatus;

/**
 * Opaque 16 × 16 process matrix in the Pauli basis.
 */
typedef struct MsqptChi MsqptChi;

/**
 * Opaque counts dataset.
 */
typedef struct MsqptCounts MsqptCounts;

/**
 * Opaque measurement design.
 */
typedef struct MsqptDesign MsqptDesign;

/**
 * Opaque reconstruction result.
 */
typedef struct MsqptResult MsqptResult;

/**
 * Imperfection settings for [`msqpt_simulate`].
 */
typedef struct MsqptNoise {
  double depol_per_gate;
  double rotation_overangle;
  double local_addressing_error;
  double readout_flip;
  uint64_t seed;
} MsqptNoise;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t msqpt_last_error(char *buf, size_t len);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void msqpt_string_free(char *s);

/**
 * Creates the canonical 240-setting design with `shots` repetitions each.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum MsqptStatus msqpt_design_new(uint64_t shots, struct MsqptDesign **out);

/**
 * # Safety
 * `design` must be null or a live handle.
 */
void msqpt_design_free(struct MsqptDesign *design);

/**
 * Number of measurement settings, or 0 for a null handle.
 *
 * # Safety
 * `design` must be null or a live handle.
 */
size_t msqpt_design_num_settings(const struct MsqptDesign *design);

/**
 * Writes the hex SHA-256 of the design as a new string.
 *
 * # Safety
 * `design` must be a live handle and `out` a valid pointer.
 */
enum MsqptStatus msqpt_design_hash(const struct MsqptDesign *design, char **out);

/**
 * Samples counts for `n_gates` MS gates (0 for the identity process).
 *
 * # Safety
 * `design` must be a live handle, `noise` null or valid, `out` valid.
 */
enum MsqptStatus msqpt_simulate(const struct MsqptDesign *design,
                                uint32_t n_gates,
                                const struct MsqptNoise *noise,
                                struct MsqptCounts **out);

/**
 * Parses a counts file's JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid.
 */
enum MsqptStatus msqpt_counts_from_json(const char *json, struct MsqptCounts **out);

/**
 * Serializes counts to JSON as a new string.
 *
 * # Safety
 * `counts` must be a live handle and `out` valid.
 */
enum MsqptStatus msqpt_counts_to_json(const struct MsqptCounts *counts, char **out);

/**
 * # Safety
 * `counts` must be null or a live handle.
 */
void msqpt_counts_free(struct MsqptCounts *counts);

/**
 * Maximum-likelihood reconstruction. Returns `MSQPT_STATUS_NOT_CONVERGED`
 * with a valid `*out` when the optimizer stopped early.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MsqptStatus msqpt_reconstruct(const struct MsqptCounts *counts,
                                   const struct MsqptDesign *design,
                                   bool trace_preserving,
                                   size_t restarts,
                                   uint64_t seed,
                                   struct MsqptResult **out);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
void msqpt_result_free(struct MsqptResult *result);

/**
 * Copies the reconstructed χ into a new handle.
 *
 * # Safety
 * `result` must be a live handle and `out` valid.
 */
enum MsqptStatus msqpt_result_chi(const struct MsqptResult *result, struct MsqptChi **out);

/**
 * # Safety
 * `result` must be a live handle and `out` valid.
 */
enum MsqptStatus msqpt_result_log_likelihood(const struct MsqptResult *result, double *out);

/**
 * χ of `n_gates` ideal MS gates, each followed by depolarization `alpha`.
 *
 * # Safety
 * `out` must be valid.
 */
enum MsqptStatus msqpt_chi_ms(uint32_t n_gates, double alpha, struct MsqptChi **out);

/**
 * # Safety
 * `chi` must be null or a live handle.
 */
void msqpt_chi_free(struct MsqptChi *chi);

/**
 * Reads element `(a, b)`, where `a = 4i + j` indexes `σ_i ⊗ σ_j` in the order I, X, Y, Z.
 *
 * # Safety
 * `chi` must be a live handle; `re` and `im` valid.
 */
enum MsqptStatus msqpt_chi_get(const struct MsqptChi *chi,
                               size_t a,
                               size_t b,
                               double *re,
                               double *im);

/**
 * Serializes χ in the matrix JSON format as a new string.
 *
 * # Safety
 * `chi` must be a live handle and `out` valid.
 */
enum MsqptStatus msqpt_chi_to_json(const struct MsqptChi *chi, char **out);

/**
 * Parses χ from the matrix JSON format.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid.
 */
enum MsqptStatus msqpt_chi_from_json(const char *json, struct MsqptChi **out);

/**
 * Haar-average fidelity of `measured` to `target` over `samples` states.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MsqptStatus msqpt_mean_fidelity(const struct MsqptChi *measured,
                                     const struct MsqptChi *target,
                                     uint64_t seed,
                                     size_t samples,
                                     double *out);

/**
 * Haar-average output purity of a process.
 *
 * # Safety
 * `chi` must be a live handle and `out` valid.
 */
enum MsqptStatus msqpt_mean_purity(const struct MsqptChi *chi,
                                   uint64_t seed,
                                   size_t samples,
                                   double *out);

/**
 * Fits the per-gate depolarization rate to mean purities measured at the
 * gate counts `n_gates[0..len]`; a gate count of 0 is ignored.
 *
 * # Safety
 * `n_gates` and `purities` must point to `len` readable values; `out` valid.
 */
enum MsqptStatus msqpt_fit_depol_rate(const uint32_t *n_gates,
                                      const double *purities,
                                      size_t len,
                                      uint64_t seed,
                                      size_t samples,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MS_QPT_H */
