#ifndef SCALEVEC_H
#define SCALEVEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_NULL_ARGUMENT = 1,
  SV_STATUS_INVALID_ARGUMENT = 2,
  SV_STATUS_CONFIG = 3,
  SV_STATUS_NUMERIC = 4,
  SV_STATUS_INPUT = 5,
  SV_STATUS_FORMAT = 6,
  SV_STATUS_IO = 7,
  SV_STATUS_BUFFER_TOO_SMALL = 8,
  SV_STATUS_PANIC = 9,
} SvStatus;

typedef enum SvVariant {
  SV_VARIANT_STANDARD = 0,
  SV_VARIANT_INVARIANT = 1,
  SV_VARIANT_EQUIVARIANT = 2,
} SvVariant;

typedef enum SvSplit {
  SV_SPLIT_TRAIN = 0,
  SV_SPLIT_VAL = 1,
  SV_SPLIT_TEST = 2,
} SvSplit;

// Opaque fold held in memory.
typedef struct SvFold SvFold;

// Opaque f32 network.
typedef struct SvModel SvModel;

// Pyramid and angle-codec settings.
typedef struct SvScaleSpec {
  uint32_t n_up;
  uint32_t n_down;
  double factor;
  double angle_range;
} SvScaleSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty after a
// success. Valid until the next call on the same thread.
const char *sv_last_error(void);

// The default spec: 8 levels (3 up, 4 down), factor 1.25, 120°.
struct SvScaleSpec sv_default_scale_spec(void);

// # Safety
// `spec` and `out` must be valid pointers.
enum SvStatus sv_angle_of_index(const struct SvScaleSpec *spec, uint32_t index, double *out);

// Scale-pooled convolution of a `c×h×w` image with `o×c×k×k` filters.
// Writes `o·h·w` values to each of `u_out`, `v_out` and `argmax_out`.
//
// # Safety
// Every pointer must reference at least as many elements as stated.
enum SvStatus sv_se_conv_scalar(const double *x,
                                size_t c,
                                size_t h,
                                size_t w,
                                const double *weights,
                                size_t o,
                                size_t k,
                                const double *bias,
                                const struct SvScaleSpec *spec,
                                double *u_out,
                                double *v_out,
                                uint8_t *argmax_out);

// Freshly initialised network with the default architecture of `variant`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle to free
// with [`sv_model_free`].
enum SvStatus sv_model_new(enum SvVariant variant, uint64_t seed, struct SvModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SvStatus sv_model_load(const char *path, struct SvModel **out);

// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum SvStatus sv_model_save(const struct SvModel *model, const char *path);

// # Safety
// `model` must be null or a handle from this library not yet freed.
void sv_model_free(struct SvModel *model);

// # Safety
// `model` and `out` must be valid pointers.
enum SvStatus sv_model_param_count(const struct SvModel *model, size_t *out);

// Classifies one 28×28 image (row-major, values in `[0, 1]`). Writes up to
// `logits_len` logits; `class_out` and `scale_out` may be null.
//
// # Safety
// `image` must hold `image_len` floats and `logits` `logits_len` floats.
enum SvStatus sv_model_predict(const struct SvModel *model,
                               const float *image,
                               size_t image_len,
                               float *logits,
                               size_t logits_len,
                               uint32_t *class_out,
                               float *scale_out);

// # Safety
// `path` must be NUL-terminated and `out` valid; free the handle with
// [`sv_fold_free`].
enum SvStatus sv_fold_load(const char *path, struct SvFold **out);

// # Safety
// `fold` must be null or a handle from this library not yet freed.
void sv_fold_free(struct SvFold *fold);

// # Safety
// `fold` and `out` must be valid pointers.
enum SvStatus sv_fold_len(const struct SvFold *fold, enum SvSplit split, size_t *out);

// Copies record `index` of `split`: 784 pixels into `image`, plus label
// and scale.
//
// # Safety
// `image` must hold 784 floats; `label` and `scale` must be valid.
enum SvStatus sv_fold_record(const struct SvFold *fold,
                             enum SvSplit split,
                             size_t index,
                             float *image,
                             uint8_t *label,
                             float *scale);

// Classification error (percent) and scale RMSE over the first `limit`
// records of `split` (all when `limit` is 0).
//
// # Safety
// All pointers must be valid.
enum SvStatus sv_model_evaluate(const struct SvModel *model,
                                const struct SvFold *fold,
                                enum SvSplit split,
                                size_t limit,
                                double *error_pct,
                                double *scale_rmse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCALEVEC_H */
