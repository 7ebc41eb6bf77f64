#ifndef MITODET_H
#define MITODET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MdStatus {
  MD_STATUS_OK = 0,
  MD_STATUS_NULL_POINTER = 1,
  MD_STATUS_INVALID_ARGUMENT = 2,
  MD_STATUS_DIMENSION_MISMATCH = 3,
  MD_STATUS_IO = 4,
  MD_STATUS_DECODE = 5,
  MD_STATUS_INTERNAL = 6,
  MD_STATUS_PANIC = 7,
} MdStatus;

// Detected centers of one image.
typedef struct MdDetections MdDetections;

// 8-bit raster image, 1 or 3 interleaved channels.
typedef struct MdImage MdImage;

// Binary mask.
typedef struct MdMask MdMask;

typedef struct MdDetection {
  double x;
  double y;
  double score;
  uint64_t area;
} MdDetection;

typedef struct MdScores {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  double precision;
  double recall;
  double f1;
} MdScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread ("" after a success).
// The pointer stays valid until the next call on the same thread.
const char *md_last_error(void);

// Copies `width * height * channels` bytes into a new image.
//
// # Safety
// `data` must point to that many readable bytes; `out` must be writable.
enum MdStatus md_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const uint8_t *data,
                           struct MdImage **out);

// Loads an 8-bit grayscale or RGB PNG.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MdStatus md_image_load(const char *path, struct MdImage **out);

// # Safety
// `img` must be a live handle and `path` a NUL-terminated string.
enum MdStatus md_image_save(const struct MdImage *img, const char *path);

// # Safety
// `img` must be null or a handle not freed before.
void md_image_free(struct MdImage *img);

// # Safety
// `img` must be null or a live handle.
size_t md_image_width(const struct MdImage *img);

// # Safety
// `img` must be null or a live handle.
size_t md_image_height(const struct MdImage *img);

// # Safety
// `img` must be null or a live handle.
size_t md_image_channels(const struct MdImage *img);

// Interleaved row-major pixels, owned by the handle.
//
// # Safety
// `img` must be null or a live handle.
const uint8_t *md_image_data(const struct MdImage *img);

// Low-frequency amplitude transfer from `reference` onto `source`.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum MdStatus md_fda_transfer(const struct MdImage *source,
                              const struct MdImage *reference,
                              double beta,
                              struct MdImage **out);

// Nonzero pixels of a single-channel image become foreground.
//
// # Safety
// `img` must be live; `out` must be writable.
enum MdStatus md_mask_from_image(const struct MdImage *img, struct MdMask **out);

// Foreground where `prob >= threshold`; `prob` holds `width * height` values.
//
// # Safety
// `prob` must point to `width * height` doubles; `out` must be writable.
enum MdStatus md_binarize(const double *prob,
                          size_t width,
                          size_t height,
                          double threshold,
                          struct MdMask **out);

// # Safety
// `mask` must be live; `out` must be writable.
enum MdStatus md_mask_fill_holes(const struct MdMask *mask, struct MdMask **out);

// # Safety
// `mask` must be null or a live handle.
size_t md_mask_width(const struct MdMask *mask);

// # Safety
// `mask` must be null or a live handle.
size_t md_mask_height(const struct MdMask *mask);

// Number of foreground pixels.
//
// # Safety
// `mask` must be null or a live handle.
size_t md_mask_count(const struct MdMask *mask);

// `false` for null handles and out-of-range coordinates.
//
// # Safety
// `mask` must be null or a live handle.
bool md_mask_get(const struct MdMask *mask, size_t x, size_t y);

// # Safety
// `mask` must be null or a handle not freed before.
void md_mask_free(struct MdMask *mask);

// Threshold, fill holes, label components and report their centers.
// `connectivity` is 4 or 8.
//
// # Safety
// `prob` must point to `width * height` doubles; `out` must be writable.
enum MdStatus md_detect(const double *prob,
                        size_t width,
                        size_t height,
                        int64_t image_id,
                        double threshold,
                        uint8_t connectivity,
                        size_t min_component_area,
                        struct MdDetections **out);

// # Safety
// `det` must be null or a live handle.
size_t md_detections_len(const struct MdDetections *det);

// # Safety
// `det` must be live; `out` must be writable.
enum MdStatus md_detections_get(const struct MdDetections *det,
                                size_t index,
                                struct MdDetection *out);

// # Safety
// `det` must be null or a handle not freed before.
void md_detections_free(struct MdDetections *det);

// One-to-one matching within `radius`, then precision / recall / F1.
// Points are packed as `x0, y0, x1, y1, ...`.
//
// # Safety
// `pred_xy` / `truth_xy` must hold `2 * n` doubles; `out` must be writable.
enum MdStatus md_match_points(const double *pred_xy,
                              size_t n_pred,
                              const double *truth_xy,
                              size_t n_truth,
                              double radius,
                              struct MdScores *out);

// Harmonic mean of precision and recall (0 when both are 0).
double md_f1_score(double precision, double recall);

// Mean focal loss over `len` pixels; `grad_out` (optional) receives
// d loss / d p.
//
// # Safety
// `p`, `y` and non-null `grad_out` must hold `len` doubles.
enum MdStatus md_focal_loss(const double *p,
                            const double *y,
                            size_t len,
                            double gamma,
                            double alpha,
                            double *loss_out,
                            double *grad_out);

// Soft Dice loss over `len` pixels; `grad_out` (optional) receives
// d loss / d p.
//
// # Safety
// `p`, `y` and non-null `grad_out` must hold `len` doubles.
enum MdStatus md_dice_loss(const double *p,
                           const double *y,
                           size_t len,
                           double smooth,
                           double *loss_out,
                           double *grad_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MITODET_H */
