#ifndef SENSE_FORGE_H
#define SENSE_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The nonzero library codes match the CLI exit codes.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_FAILURE = 1,
  SF_STATUS_CONFIG = 2,
  SF_STATUS_DOMAIN = 3,
  SF_STATUS_SINGULAR = 4,
  SF_STATUS_RANK_VARIATION = 5,
  SF_STATUS_STABILITY = 6,
  SF_STATUS_NULL_ARGUMENT = 7,
  SF_STATUS_INVALID_UTF8 = 8,
  SF_STATUS_BUFFER_TOO_SMALL = 9,
  SF_STATUS_PANIC = 10,
} SfStatus;

/**
 * A validated coordinate chart.
 */
typedef struct SfChart SfChart;

/**
 * Recorded paths of one ensemble, path-major then time then coordinate.
 */
typedef struct SfEnsemble SfEnsemble;

/**
 * A model built from a run configuration.
 */
typedef struct SfModel SfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Message of the last failed call on this thread, or null if none.
 * Release it with [`sf_string_free`].
 */
char *sf_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void sf_string_free(char *s);

/**
 * Builds a model from a JSON run configuration. Null or `""` means all
 * defaults; absent keys keep their defaults.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out` must be writable.
 */
enum SfStatus sf_model_new(const char *config_json, struct SfModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`sf_model_new`], not yet freed.
 */
void sf_model_free(struct SfModel *model);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sf_model_state_dim(const struct SfModel *model);

/**
 * Noise dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sf_model_noise_dim(const struct SfModel *model);

/**
 * Sense parameter α, or NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double sf_model_alpha(const struct SfModel *model);

/**
 * Writes the spurious drift `a_sp(x)` into `out`.
 *
 * # Safety
 * `x` must hold `n` doubles and `out` room for `out_len`.
 */
enum SfStatus sf_model_spurious_drift(const struct SfModel *model,
                                      const double *x,
                                      size_t n,
                                      double *out,
                                      size_t out_len);

/**
 * Writes the Itô-equivalent drift `a(x) + α a_sp(x)` into `out`.
 *
 * # Safety
 * `x` must hold `n` doubles and `out` room for `out_len`.
 */
enum SfStatus sf_model_ito_drift(const struct SfModel *model,
                                 const double *x,
                                 size_t n,
                                 double *out,
                                 size_t out_len);

/**
 * One α-sense Euler step from `x` with increment `dw` over `dt`.
 *
 * # Safety
 * `x` must hold `n` doubles, `dw` hold `m`, `out` room for `out_len`.
 */
enum SfStatus sf_model_step(const struct SfModel *model,
                            const double *x,
                            size_t n,
                            const double *dw,
                            size_t m,
                            double dt,
                            double *out,
                            size_t out_len);

/**
 * Simulates the ensemble the model's configuration describes.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SfStatus sf_simulate(const struct SfModel *model, struct SfEnsemble **out);

/**
 * # Safety
 * `ensemble` must be null or a handle from [`sf_simulate`], not yet freed.
 */
void sf_ensemble_free(struct SfEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t sf_ensemble_n_paths(const struct SfEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t sf_ensemble_n_times(const struct SfEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t sf_ensemble_dim(const struct SfEnsemble *ensemble);

/**
 * Number of domain exits over all paths.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
uint64_t sf_ensemble_domain_exits(const struct SfEnsemble *ensemble);

/**
 * Copies the recording times, `n_times` doubles.
 *
 * # Safety
 * `out` must have room for `out_len` doubles.
 */
enum SfStatus sf_ensemble_times(const struct SfEnsemble *ensemble, double *out, size_t out_len);

/**
 * Copies every recorded state, `n_paths * n_times * dim` doubles.
 *
 * # Safety
 * `out` must have room for `out_len` doubles.
 */
enum SfStatus sf_ensemble_states(const struct SfEnsemble *ensemble, double *out, size_t out_len);

/**
 * Copies coordinate `component` of every path at the final time.
 *
 * # Safety
 * `out` must have room for `out_len` doubles.
 */
enum SfStatus sf_ensemble_final(const struct SfEnsemble *ensemble,
                                size_t component,
                                double *out,
                                size_t out_len);

/**
 * Builds the unit-diffusion chart for the model's configuration.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SfStatus sf_chart_build(const struct SfModel *model, struct SfChart **out);

/**
 * # Safety
 * `chart` must be null or a handle from [`sf_chart_build`], not yet freed.
 */
void sf_chart_free(struct SfChart *chart);

/**
 * # Safety
 * `chart` must be null or a live handle.
 */
size_t sf_chart_dim(const struct SfChart *chart);

/**
 * `z = φ(x)`.
 *
 * # Safety
 * `x` must hold `n` doubles and `out` room for `out_len`.
 */
enum SfStatus sf_chart_forward(const struct SfChart *chart,
                               const double *x,
                               size_t n,
                               double *out,
                               size_t out_len);

/**
 * `x = φ⁻¹(z)`.
 *
 * # Safety
 * `z` must hold `n` doubles and `out` room for `out_len`.
 */
enum SfStatus sf_chart_inverse(const struct SfChart *chart,
                               const double *z,
                               size_t n,
                               double *out,
                               size_t out_len);

/**
 * The chart record as JSON. Release it with [`sf_string_free`].
 *
 * # Safety
 * `chart` must be a live handle and `out` writable.
 */
enum SfStatus sf_chart_to_json(const struct SfChart *chart, char **out);

/**
 * Runs one claim with the `claims` section of a JSON run configuration and
 * returns its report as JSON. A failed claim is still [`SfStatus::Ok`];
 * read its verdict from the report.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated, `claim_id` NUL-terminated,
 * `out` writable.
 */
enum SfStatus sf_run_claim(const char *config_json, const char *claim_id, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SENSE_FORGE_H */
