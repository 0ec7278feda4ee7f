#ifndef FNIRS_PAIN_H
#define FNIRS_PAIN_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum FnirsStatus {
  FNIRS_STATUS_OK = 0,
  FNIRS_STATUS_NULL_POINTER = 1,
  FNIRS_STATUS_INVALID_ARGUMENT = 2,
  FNIRS_STATUS_SHAPE_MISMATCH = 3,
  FNIRS_STATUS_IO = 4,
  FNIRS_STATUS_PARSE = 5,
  FNIRS_STATUS_CHECKPOINT = 6,
  FNIRS_STATUS_INTERNAL = 7,
} FnirsStatus;

/*
 Opaque trained or freshly initialized model.
 */
typedef struct FnirsModel FnirsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *fnirs_version(void);

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *fnirs_last_error(void);

/*
 Builds a model with the default widths (64, 32), dropout 0.5 and four
 classes. `kind` is one of "mlp", "lstm_fwd", "lstm_bwd", "bilstm".

 # Safety
 `kind` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FnirsStatus fnirs_model_build(const char *kind,
                                   size_t steps,
                                   size_t channels,
                                   uint64_t seed,
                                   struct FnirsModel **out);

/*
 Loads a checkpoint written by `train` or [`fnirs_model_save`].

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FnirsStatus fnirs_model_load(const char *path, struct FnirsModel **out);

/*
 # Safety
 `model` must come from this library; `path` must be NUL-terminated.
 */
enum FnirsStatus fnirs_model_save(const struct FnirsModel *model, const char *path);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void fnirs_model_free(struct FnirsModel *model);

/*
 # Safety
 `model` must come from this library; the out pointers must be writable.
 */
enum FnirsStatus fnirs_model_info(const struct FnirsModel *model,
                                  size_t *steps,
                                  size_t *channels,
                                  size_t *n_classes,
                                  size_t *param_count);

/*
 Class probabilities for `batch` windows laid out row-major as
 `batch × steps × channels`. Writes `batch × n_classes` values.

 # Safety
 `windows` must hold `batch·steps·channels` doubles and `probs`
 room for `batch·n_classes`.
 */
enum FnirsStatus fnirs_model_predict_proba(const struct FnirsModel *model,
                                           const double *windows,
                                           size_t batch,
                                           double *probs);

/*
 Predicted class codes (0 low_cold, 1 low_heat, 2 high_cold, 3 high_heat).

 # Safety
 As [`fnirs_model_predict_proba`], with room for `batch` codes.
 */
enum FnirsStatus fnirs_model_predict(const struct FnirsModel *model,
                                     const double *windows,
                                     size_t batch,
                                     uint32_t *classes);

/*
 Accuracy and macro one-vs-rest sensitivity and specificity, in percent.

 # Safety
 `predictions` and `truths` must hold `n` codes; outputs must be writable.
 */
enum FnirsStatus fnirs_metrics(const uint32_t *predictions,
                               const uint32_t *truths,
                               size_t n,
                               size_t n_classes,
                               double *accuracy,
                               double *sensitivity,
                               double *specificity);

/*
 Generates a synthetic dataset into `out_dir`. `config_path` may be NULL
 for defaults; `seed` overrides the config's seed.

 # Safety
 Strings must be NUL-terminated; `n_recordings` may be NULL.
 */
enum FnirsStatus fnirs_synth_generate(const char *config_path,
                                      uint64_t seed,
                                      const char *out_dir,
                                      size_t *n_recordings);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FNIRS_PAIN_H */
