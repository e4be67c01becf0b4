#ifndef SCENEDIFF_H
#define SCENEDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum ScdStatus {
  SCD_STATUS_OK = 0,
  SCD_STATUS_NULL_POINTER = 1,
  SCD_STATUS_INVALID_ARGUMENT = 2,
  SCD_STATUS_SHAPE_MISMATCH = 3,
  SCD_STATUS_IO = 4,
  SCD_STATUS_FORMAT = 5,
  SCD_STATUS_NUMERIC = 6,
  SCD_STATUS_PANIC = 7,
} ScdStatus;

typedef enum ScdLossMode {
  SCD_LOSS_MODE_BCE = 0,
  SCD_LOSS_MODE_DICE = 1,
  SCD_LOSS_MODE_BCE_PLUS_DICE = 2,
} ScdLossMode;

typedef enum ScdMatchMode {
  SCD_MATCH_MODE_IOU_THRESHOLD = 0,
  SCD_MATCH_MODE_ANY_OVERLAP = 1,
} ScdMatchMode;

/**
 * Opaque model handle.
 */
typedef struct ScdModel ScdModel;

/**
 * Object-level match counts.
 */
typedef struct ScdCounts {
  size_t true_pos;
  size_t false_pos;
  size_t false_neg;
} ScdCounts;

/**
 * Region post-processing and matching options.
 */
typedef struct ScdEvalOptions {
  /**
   * 4 or 8.
   */
  uint32_t connectivity;
  size_t min_area;
  /**
   * An `ScdMatchMode` value.
   */
  uint32_t match_mode;
  double iou_tau;
} ScdEvalOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on this thread.
 */
const char *scd_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *scd_version(void);

/**
 * Creates a freshly initialized model with the built-in 8-layer backbone
 * tapped after `tap_layer` (1..=8).
 *
 * # Safety
 * `out` must be a valid pointer to a `ScdModel *`.
 */
enum ScdStatus scd_model_new_tiny(uint32_t tap_layer,
                                  bool tied,
                                  uint64_t seed,
                                  struct ScdModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` a valid pointer to a `ScdModel *`.
 */
enum ScdStatus scd_model_load(const char *path, struct ScdModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from a `scd_model_*` constructor; `path` must be a nul-terminated string.
 */
enum ScdStatus scd_model_save(const struct ScdModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from a `scd_model_*` constructor and not be used afterwards.
 */
void scd_model_free(struct ScdModel *model);

/**
 * Sets how many encoder layers before the tap are trainable.
 *
 * # Safety
 * `model` must come from a `scd_model_*` constructor.
 */
enum ScdStatus scd_model_set_trainable_tail(struct ScdModel *model, uint32_t k);

/**
 * Input side lengths must be multiples of this value.
 *
 * # Safety
 * `model` must come from a `scd_model_*` constructor.
 */
enum ScdStatus scd_model_tap_stride(const struct ScdModel *model, uint32_t *out);

/**
 * Change probabilities for one pair, written to `out_prob` (`height * width` values).
 *
 * # Safety
 * `t0` and `t1` must hold `height * width * 3` floats; `out_prob` room for `height * width` doubles.
 */
enum ScdStatus scd_model_forward(const struct ScdModel *model,
                                 const float *t0,
                                 const float *t1,
                                 size_t height,
                                 size_t width,
                                 double *out_prob);

/**
 * Segmentation loss of one probability map against a 0/1 target;
 * `mode` is an `ScdLossMode` value.
 *
 * # Safety
 * `target` and `prob` must hold `height * width` values.
 */
enum ScdStatus scd_seg_loss(const uint8_t *target,
                            const double *prob,
                            size_t height,
                            size_t width,
                            uint32_t mode,
                            double *out);

/**
 * Poly learning rate `base_lr * (1 - iter / max_iter) ^ power`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ScdStatus scd_poly_lr(double base_lr, double power, size_t max_iter, size_t iter, double *out);

/**
 * Precision, recall and F1 from match counts.
 *
 * # Safety
 * The three output pointers must be writable.
 */
enum ScdStatus scd_prf1(struct ScdCounts counts, double *precision, double *recall, double *f1);

/**
 * Default evaluation options: 8-connectivity, no area filter, IoU >= 0.5.
 */
struct ScdEvalOptions scd_eval_options_default(void);

/**
 * Matches the regions of a predicted 0/1 mask against a ground-truth mask.
 *
 * # Safety
 * `pred` and `gt` must hold `height * width` values; `options` and `out` must be valid.
 */
enum ScdStatus scd_match_masks(const uint8_t *pred,
                               const uint8_t *gt,
                               size_t height,
                               size_t width,
                               const struct ScdEvalOptions *options,
                               struct ScdCounts *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENEDIFF_H */
