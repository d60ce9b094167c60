#ifndef ROADFORGE_H
#define ROADFORGE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_DEGENERATE = 3,
  RF_STATUS_NO_CONVERGENCE = 4,
  RF_STATUS_BEHIND_CAMERA = 5,
  RF_STATUS_AT_INFINITY = 6,
  RF_STATUS_DIMENSION_MISMATCH = 7,
  RF_STATUS_IO = 8,
  RF_STATUS_UNKNOWN_IMAGE = 9,
  RF_STATUS_PANIC = 99,
} RfStatus;

/**
 * Opaque evaluator: ground truth plus accumulated detections.
 */
typedef struct RfEvaluator RfEvaluator;

/**
 * Opaque dataset manifest.
 */
typedef struct RfManifest RfManifest;

typedef struct RfIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} RfIntrinsics;

typedef struct RfPose {
  double rotation[9];
  double translation[3];
} RfPose;

/**
 * Per-threshold and headline metrics. Thresholds are 2, 5, 10, 15, 20 and
 * 50 px, in that order.
 */
typedef struct RfEvalSummary {
  double ap[6];
  double recall[6];
  double map;
  double ap20;
  double ap50;
  double ar;
  size_t n_gt;
  size_t n_det;
} RfEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the buffer size needed for the
 * full message including the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t rf_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

/**
 * Projects a world point to pixels.
 *
 * # Safety
 * All pointers must be valid; `world` holds 3 and `out_pixel` 2 doubles.
 */
enum RfStatus rf_project_point(const struct RfIntrinsics *k,
                               const struct RfPose *pose_in,
                               const double *world,
                               double *out_pixel);

/**
 * Solves a camera pose from `n` correspondences. `world` holds `3n`
 * doubles, `pixels` `2n`. `out_errors` (optional, `n` doubles) receives
 * per-landmark reprojection errors, infinity for landmarks behind the
 * camera.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out_rms` and
 * `out_errors` may be null.
 */
enum RfStatus rf_solve_pnp(const struct RfIntrinsics *k,
                           const double *world,
                           const double *pixels,
                           size_t n,
                           struct RfPose *out_pose,
                           double *out_rms,
                           double *out_errors);

/**
 * Fits a pixel-to-ground homography from `n >= 4` pairs (`2n` doubles
 * each). The result has unit Frobenius norm.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out_h` holds 9 doubles.
 */
enum RfStatus rf_estimate_homography(const double *pixels,
                                     const double *ground,
                                     size_t n,
                                     double (*out_h)[9]);

/**
 * Pixel-to-ground homography of the `z = 0` plane for a calibrated camera.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RfStatus rf_pose_to_ground_homography(const struct RfIntrinsics *k,
                                           const struct RfPose *pose_in,
                                           double (*out_h)[9]);

/**
 * Maps a pixel to ground coordinates with homography `h`.
 *
 * # Safety
 * `h` holds 9 doubles, `pixel` and `out_ground` 2 each.
 */
enum RfStatus rf_image_to_ground(const double (*h)[9], const double *pixel, double *out_ground);

/**
 * Per-pixel median of `n` RGB8 frames of `width * height` pixels each.
 * Even counts take the lower median.
 *
 * # Safety
 * `frames` holds `n` pointers each valid for `width * height * 3` bytes;
 * `out` is valid for the same number of bytes.
 */
enum RfStatus rf_median_background(const uint8_t *const *frames,
                                   size_t n,
                                   uint32_t width,
                                   uint32_t height,
                                   uint8_t *out);

/**
 * Loads a dataset manifest. Free with [`rf_manifest_free`].
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 string; `out` is valid.
 */
enum RfStatus rf_manifest_load(const char *path, struct RfManifest **out);

/**
 * # Safety
 * `m` is null or was returned by [`rf_manifest_load`] and not yet freed.
 */
void rf_manifest_free(struct RfManifest *m);

/**
 * # Safety
 * `m` is a live manifest handle; `out` is valid.
 */
enum RfStatus rf_manifest_image_count(const struct RfManifest *m, size_t *out);

/**
 * New evaluator with no images. Free with [`rf_evaluator_free`].
 *
 * # Safety
 * `out` is valid.
 */
enum RfStatus rf_evaluator_new(struct RfEvaluator **out);

/**
 * Evaluator whose ground truth is taken from a manifest.
 *
 * # Safety
 * `m` is a live manifest handle; `out` is valid.
 */
enum RfStatus rf_evaluator_from_manifest(const struct RfManifest *m, struct RfEvaluator **out);

/**
 * Adds a ground-truth bottom center, registering the image if new.
 *
 * # Safety
 * `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
 */
enum RfStatus rf_evaluator_add_ground_truth(struct RfEvaluator *ev,
                                            const char *image_id,
                                            double u,
                                            double v);

/**
 * Registers an image with no ground truth.
 *
 * # Safety
 * `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
 */
enum RfStatus rf_evaluator_add_image(struct RfEvaluator *ev, const char *image_id);

/**
 * Adds a detection. The image must already be known to the evaluator.
 *
 * # Safety
 * `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
 */
enum RfStatus rf_evaluator_add_detection(struct RfEvaluator *ev,
                                         const char *image_id,
                                         double u,
                                         double v,
                                         double score);

/**
 * Computes metrics over everything added so far.
 *
 * # Safety
 * `ev` is a live evaluator; `out` is valid.
 */
enum RfStatus rf_evaluator_compute(const struct RfEvaluator *ev, struct RfEvalSummary *out);

/**
 * # Safety
 * `ev` is null or a live evaluator handle not used afterwards.
 */
void rf_evaluator_free(struct RfEvaluator *ev);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROADFORGE_H */
