#ifndef EFFCD_H
#define EFFCD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Bits of [`EffcdMetrics::undefined`].
#define EFFCD_UNDEFINED_IOU 1

#define EFFCD_UNDEFINED_F1 2

#define EFFCD_UNDEFINED_REC 4

#define EFFCD_UNDEFINED_PREC 8

typedef enum EffcdStatus {
  EFFCD_STATUS_OK = 0,
  EFFCD_STATUS_NULL_POINTER = 1,
  EFFCD_STATUS_INVALID_ARGUMENT = 2,
  EFFCD_STATUS_SHAPE = 3,
  EFFCD_STATUS_IO = 4,
  EFFCD_STATUS_FORMAT = 5,
  EFFCD_STATUS_CONFIG = 6,
  EFFCD_STATUS_CHECKPOINT = 7,
  EFFCD_STATUS_NUMERICAL = 8,
  EFFCD_STATUS_PANIC = 9,
} EffcdStatus;

// Loaded network. Not safe to share between threads without locking.
typedef struct EffcdModel EffcdModel;

typedef struct EffcdConfusion {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
} EffcdConfusion;

typedef struct EffcdMetrics {
  double oa;
  double iou;
  double f1;
  double rec;
  double prec;
  // Metrics whose denominator was zero and were reported as 0.
  uint32_t undefined;
} EffcdMetrics;

typedef struct EffcdTileGrid {
  size_t count;
  size_t stride;
  size_t padded_width;
  size_t padded_height;
} EffcdTileGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library from the same thread.
const char *effcd_last_error(void);

// Library version as a static NUL-terminated string.
const char *effcd_version(void);

// Freshly initialized network for a named preset (`"nano"`, `"b0"`..`"b5"`).
//
// # Safety
// `preset` must be a NUL-terminated string and `out` a writable pointer.
enum EffcdStatus effcd_model_new(const char *preset, uint64_t seed, struct EffcdModel **out);

// Loads a checkpoint directory written by the training command.
//
// # Safety
// `dir` must be a NUL-terminated path and `out` a writable pointer.
enum EffcdStatus effcd_model_load(const char *dir, struct EffcdModel **out);

// # Safety
// `model` must come from this library and not be used afterwards. Null is ignored.
void effcd_model_free(struct EffcdModel *model);

// # Safety
// `model` must be a live handle and `out` a writable pointer.
enum EffcdStatus effcd_model_parameter_count(const struct EffcdModel *model, size_t *out);

// Sliding-window change prediction for one image pair.
//
// `logits_out` receives `width*height` floats and `mask_out` the same
// number of 0/1 bytes; either may be null. `windows_out`, when not null,
// receives the number of network evaluations.
//
// # Safety
// `image_a` and `image_b` must each hold `width*height*3` bytes, and the
// non-null outputs must have room for the sizes above.
enum EffcdStatus effcd_predict(struct EffcdModel *model,
                               const uint8_t *image_a,
                               const uint8_t *image_b,
                               size_t width,
                               size_t height,
                               size_t window,
                               size_t stride,
                               float *logits_out,
                               uint8_t *mask_out,
                               size_t *windows_out);

// Pixel counts of a predicted mask against a label, both `len` bytes of 0/1.
//
// # Safety
// `pred` and `label` must hold `len` bytes; `out` must be writable.
enum EffcdStatus effcd_confusion(const uint8_t *pred,
                                 const uint8_t *label,
                                 size_t len,
                                 struct EffcdConfusion *out);

// OA, IoU, F1, recall and precision of accumulated counts.
//
// # Safety
// `counts` must be readable and `out` writable.
enum EffcdStatus effcd_metrics(const struct EffcdConfusion *counts, struct EffcdMetrics *out);

// Tile layout for chipping a `width`×`height` image.
//
// `grid_out` is always filled. With `origins_out` non-null, the row-major
// tile offsets are written as `x0, y0, x1, y1, ...`, which needs
// `2*count <= capacity`; call once with null to learn `count`.
//
// # Safety
// `grid_out` must be writable and `origins_out`, if not null, must hold
// `capacity` values.
enum EffcdStatus effcd_chip_grid(size_t width,
                                 size_t height,
                                 size_t patch,
                                 size_t overlap,
                                 struct EffcdTileGrid *grid_out,
                                 size_t *origins_out,
                                 size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFFCD_H */
