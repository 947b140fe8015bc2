/* C API for the vgsloc visually grounded speech keyword localiser. */

#ifndef VGSLOC_H
#define VGSLOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum VgslocStatus {
  VgslocStatus_Ok = 0,
  /**
   * A pointer argument was null or an argument was out of range.
   */
  VgslocStatus_InvalidArgument = 1,
  /**
   * Filesystem failure.
   */
  VgslocStatus_Io = 2,
  /**
   * A file existed but could not be parsed.
   */
  VgslocStatus_Parse = 3,
  /**
   * Checkpoint and data (or model) do not fit together.
   */
  VgslocStatus_Incompatible = 4,
  /**
   * Any other library error; see `vgsloc_last_error`.
   */
  VgslocStatus_Internal = 5,
  /**
   * A panic was caught at the boundary; state may be stale.
   */
  VgslocStatus_Panic = 6,
} VgslocStatus;

/**
 * Opaque handle to a trained model ready for inference.
 */
typedef struct VgslocModel VgslocModel;

/**
 * Normalised Cohen kappa between two binary vectors (0/1 bytes).
 */
typedef struct VgslocKappa {
  double p_o;
  double p_e;
  double p_max;
  /**
   * NaN when undefined (p_e = 1).
   */
  double kappa;
  double kappa_max;
  /**
   * NaN when undefined (degenerate marginals).
   */
  double kappa_norm;
  /**
   * 1 when the inputs make kappa or its maximum degenerate.
   */
  uint8_t degenerate;
} VgslocKappa;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error in this thread. The pointer stays
 * valid until the next failing vgsloc call on the same thread.
 */
const char *vgsloc_last_error(void);

/**
 * Library version as a static string.
 */
const char *vgsloc_version(void);

/**
 * Generate a deterministic synthetic corpus from a JSON config string.
 *
 * # Safety
 * Both arguments must be valid NUL-terminated UTF-8 strings.
 */
enum VgslocStatus vgsloc_toygen(const char *config_json, const char *out_dir);

/**
 * Run the full experiment pipeline from a JSON config file on disk.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated UTF-8 string.
 */
enum VgslocStatus vgsloc_run_experiment(const char *config_path);

/**
 * Load a checkpoint (base path without the .bin/.json extension).
 *
 * # Safety
 * `checkpoint_base` must be a valid NUL-terminated UTF-8 string and
 * `out_model` a valid pointer; on success the caller owns the handle and
 * must release it with [`vgsloc_model_free`].
 */
enum VgslocStatus vgsloc_model_load(const char *checkpoint_base, struct VgslocModel **out_model);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be a pointer previously returned by
 * [`vgsloc_model_load`], not yet freed.
 */
void vgsloc_model_free(struct VgslocModel *model);

/**
 * Number of keywords the model scores.
 *
 * # Safety
 * `model` must be a live handle from [`vgsloc_model_load`].
 */
uintptr_t vgsloc_model_vocab_size(const struct VgslocModel *model);

/**
 * Detection probabilities for every keyword over one feature file.
 * `scores_out` must hold at least `vgsloc_model_vocab_size` doubles.
 *
 * # Safety
 * `model` must be a live handle, `features_path` a valid NUL-terminated
 * string and `scores_out` writable for `scores_len` doubles.
 */
enum VgslocStatus vgsloc_model_detect(const struct VgslocModel *model,
                                      const char *features_path,
                                      double *scores_out,
                                      uintptr_t scores_len);

/**
 * Localise one keyword in one feature file with the named method
 * (`attention`, `score_agg`, `gradcam`, `masked_in`, `masked_out`).
 * Writes the predicted time (seconds) and the detection probability.
 *
 * # Safety
 * `model` must be a live handle; string arguments valid NUL-terminated
 * UTF-8; out-pointers writable.
 */
enum VgslocStatus vgsloc_model_localise(const struct VgslocModel *model,
                                        const char *features_path,
                                        uintptr_t keyword_index,
                                        const char *method,
                                        double *tau_s_out,
                                        double *detection_out);

/**
 * # Safety
 * `a` and `b` must point to `len` readable bytes each; `out` must be a
 * valid pointer.
 */
enum VgslocStatus vgsloc_kappa(const uint8_t *a,
                               const uint8_t *b,
                               uintptr_t len,
                               struct VgslocKappa *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VGSLOC_H */
