#ifndef STEREOLOC_H
#define STEREOLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StereolocStatus {
  STEREOLOC_OK = 0,
  STEREOLOC_NULL_POINTER = 1,
  STEREOLOC_CONFIG_ERROR = 2,
  STEREOLOC_DATA_ERROR = 3,
  STEREOLOC_DOMAIN_ERROR = 4,
  STEREOLOC_NUMERIC_ERROR = 5,
  STEREOLOC_IO_ERROR = 6,
  STEREOLOC_BUFFER_TOO_SMALL = 7,
  STEREOLOC_PANIC = 8,
} StereolocStatus;

/**
 * Opaque trained model.
 */
typedef struct StereolocModel StereolocModel;

/**
 * Opaque stereo rig.
 */
typedef struct StereolocRig StereolocRig;

/**
 * One prediction, for the left detection at `left_index`.
 */
typedef struct StereolocLocalization {
  uint32_t left_index;
  /**
   * Index of the matched right detection, or -1 for none.
   */
  int32_t right_index;
  double x;
  double y;
  double z;
  double r;
  double beta;
  double psi;
  /**
   * Confidence-interval half-width, meters.
   */
  double b;
  /**
   * Match probability.
   */
  double ism;
  /**
   * 1 when flagged stereo, 0 when mono.
   */
  int32_t stereo;
} StereolocLocalization;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *stereoloc_last_error(void);

size_t stereoloc_num_joints(void);

/**
 * Create a rig. Writes the handle to `out`.
 *
 * # Safety
 * `out` must be null or a writable slot.
 */
enum StereolocStatus stereoloc_rig_new(double baseline_m,
                                       double focal_px,
                                       double u0,
                                       double v0,
                                       double width,
                                       double height,
                                       struct StereolocRig **out);

/**
 * The default KITTI-class rig: 0.54 m baseline, 721 px focal, 1240x380.
 */
struct StereolocRig *stereoloc_rig_default(void);

/**
 * # Safety
 * `rig` must be null or a handle from this library not yet freed.
 */
void stereoloc_rig_free(struct StereolocRig *rig);

/**
 * Depth in meters for a disparity in pixels.
 *
 * # Safety
 * `rig` must be a live rig handle and `out` a writable double.
 */
enum StereolocStatus stereoloc_disparity_to_depth(const struct StereolocRig *rig,
                                                  double disparity_px,
                                                  double *out);

/**
 * Depth error in meters caused by a disparity error at a given depth.
 *
 * # Safety
 * `rig` must be a live rig handle and `out` a writable double.
 */
enum StereolocStatus stereoloc_stereo_pixel_error(const struct StereolocRig *rig,
                                                  double depth_m,
                                                  double disparity_error_px,
                                                  double *out);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string and `out` a writable slot.
 */
enum StereolocStatus stereoloc_model_load(const char *path, struct StereolocModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void stereoloc_model_free(struct StereolocModel *model);

/**
 * Localize every left detection of one stereo frame.
 *
 * Keypoints are pixel coordinates laid out `[person][joint][u, v]`, with
 * one visibility byte per `[person][joint]` (nonzero = visible). `out`
 * must hold at least `n_left` entries; exactly `n_left` are written.
 *
 * # Safety
 * All pointers must be valid for the sizes implied by `n_left`, `n_right`
 * and `out_capacity`. Arrays for a zero count may be null.
 */
enum StereolocStatus stereoloc_predict(const struct StereolocModel *model,
                                       const struct StereolocRig *rig,
                                       const double *left_joints,
                                       const uint8_t *left_visible,
                                       size_t n_left,
                                       const double *right_joints,
                                       const uint8_t *right_visible,
                                       size_t n_right,
                                       struct StereolocLocalization *out,
                                       size_t out_capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEREOLOC_H */
