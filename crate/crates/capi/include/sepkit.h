#ifndef SEPKIT_H
#define SEPKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every API call.
 */
enum SkStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * Success.
   */
  SK_OK = 0,
  /**
   * Invalid argument or configuration.
   */
  SK_ERR_INVALID_ARG = 1,
  /**
   * Numeric or runtime failure.
   */
  SK_ERR_RUNTIME = 2,
  /**
   * File or checkpoint I/O failure.
   */
  SK_ERR_IO = 3,
  /**
   * A required pointer was null.
   */
  SK_ERR_NULL = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  SK_ERR_UTF8 = 5,
  /**
   * A panic was caught at the boundary.
   */
  SK_ERR_PANIC = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SkStatus SkStatus;
#else
typedef int32_t SkStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque separation model handle; create with `sk_model_from_config` or
 * `sk_model_load`, release with `sk_model_free`.
 */
typedef struct SkModel SkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sk_version(void);

/**
 * Message of the most recent failure on this thread; empty string if
 * none. The pointer stays valid until the next failing call on the same
 * thread.
 */
const char *sk_last_error_message(void);

/**
 * Builds a model from config text (`key = value` lines, `#` comments;
 * unknown keys are rejected) and a parameter-init seed.
 *
 * # Safety
 * `config_text` must be NUL-terminated; `out` must point to writable
 * storage for one pointer.
 */
SkStatus sk_model_from_config(const char *config_text, uint64_t seed, struct SkModel **out);

/**
 * Loads a model from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage
 * for one pointer.
 */
SkStatus sk_model_load(const char *path, struct SkModel **out);

/**
 * Releases a model handle; a null handle is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer returned by a constructor, not yet
 * freed.
 */
void sk_model_free(struct SkModel *model);

/**
 * Number of output speakers.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
SkStatus sk_model_num_speakers(const struct SkModel *model, uintptr_t *out);

/**
 * Sample rate the model expects, in Hz.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
SkStatus sk_model_sample_rate(const struct SkModel *model, uint32_t *out);

/**
 * Total trainable parameter count.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
SkStatus sk_model_num_params(const struct SkModel *model, uintptr_t *out);

/**
 * Analytic receptive field of the model: frames, seconds, and whether a
 * global-context block makes the effective field unbounded (1/0).
 *
 * # Safety
 * `model` must be a live handle; out-pointers must be writable.
 */
SkStatus sk_receptive_field(const struct SkModel *model,
                            uintptr_t *frames,
                            double *seconds,
                            int32_t *global);

/**
 * Separates a mono mixture. `out` receives `num_speakers` rows of `len`
 * samples, row-major; `out_len` must equal `num_speakers * len`.
 *
 * # Safety
 * `model` must be a live handle; `mixture` must hold `len` readable
 * doubles; `out` must hold `out_len` writable doubles.
 */
SkStatus sk_separate(const struct SkModel *model,
                     const double *mixture,
                     uintptr_t len,
                     uint32_t sample_rate,
                     double *out,
                     uintptr_t out_len);

/**
 * Scale-invariant SDR of `estimate` against `reference`, in dB.
 *
 * # Safety
 * `estimate` and `reference` must each hold `len` readable doubles;
 * `out` must be writable.
 */
SkStatus sk_si_sdr_db(const double *estimate,
                      const double *reference,
                      uintptr_t len,
                      uint32_t sample_rate,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPKIT_H */
