#ifndef MARKERPROP_H
#define MARKERPROP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of keypoints per individual, in the fixed keypoint order.
 */
#define MP_KEYPOINT_COUNT 9

typedef enum {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  MP_STATUS_INVALID_ARGUMENT = 2,
  MP_STATUS_NON_FINITE = 3,
  MP_STATUS_DEGENERATE = 4,
  MP_STATUS_PARSE_ERROR = 5,
  MP_STATUS_BUFFER_TOO_SMALL = 6,
  MP_STATUS_EMPTY = 7,
  MP_STATUS_PANIC = 8,
} MpStatus;

/**
 * Opaque camera: intrinsics plus world → camera extrinsic.
 */
typedef struct MpCamera MpCamera;

/**
 * Opaque keypoint template parsed from its JSON file.
 */
typedef struct MpTemplate MpTemplate;

/**
 * Pinhole intrinsics with Brown–Conrady distortion `k1, k2, p1, p2, k3`.
 */
typedef struct {
  double fx;
  double fy;
  double cx;
  double cy;
  double distortion[5];
  uint32_t width;
  uint32_t height;
} MpIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failed call on this thread into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for writes of `len` bytes.
 */
size_t mp_last_error_message(char *buf, size_t len);

/**
 * Least-squares rigid transform mapping `source` onto `target` (`n` points each).
 * Writes the transform (12 doubles) and the RMS residual in millimeters.
 *
 * # Safety
 * `source` and `target` must hold `3 * n` doubles, `out_transform` 12 and `out_rms` 1.
 */
MpStatus mp_rigid_fit(const double *source,
                      const double *target,
                      size_t n,
                      double *out_transform,
                      double *out_rms);

/**
 * Creates a camera from intrinsics and a world → camera extrinsic (12 doubles).
 *
 * # Safety
 * `intrinsics` must point to a valid struct, `extrinsic` to 12 doubles and `out` to a
 * writable handle slot.
 */
MpStatus mp_camera_new(const MpIntrinsics *intrinsics, const double *extrinsic, MpCamera **out);

/**
 * Releases a camera. Null is ignored.
 *
 * # Safety
 * `camera` must be null or a handle from [`mp_camera_new`] not yet freed.
 */
void mp_camera_free(MpCamera *camera);

/**
 * Camera center in world coordinates.
 *
 * # Safety
 * `camera` must be a live handle and `out_center` hold 3 doubles.
 */
MpStatus mp_camera_center(const MpCamera *camera, double *out_center);

/**
 * Projects `n` world points. Writes `2 * n` pixel coordinates and, per point, 1 when it is
 * in front of the camera and inside the image.
 *
 * # Safety
 * `camera` must be a live handle, `world` hold `3 * n` doubles, `out_pixels` `2 * n` and
 * `out_visible` `n` bytes.
 */
MpStatus mp_project(const MpCamera *camera,
                    const double *world,
                    size_t n,
                    double *out_pixels,
                    uint8_t *out_visible);

/**
 * Triangulates one point from `n` views: `cameras[i]` observed it at pixel
 * `pixels[2i], pixels[2i + 1]`. Fails as degenerate when no two rays are at least
 * `min_ray_angle_deg` apart. Writes the point and the RMS reprojection error in pixels.
 *
 * # Safety
 * `cameras` must hold `n` live handles, `pixels` `2 * n` doubles, `out_point` 3 and
 * `out_rms` 1.
 */
MpStatus mp_triangulate(const MpCamera *const *cameras,
                        const double *pixels_in,
                        size_t n,
                        double min_ray_angle_deg,
                        double *out_point,
                        double *out_rms);

/**
 * Camera pose from `n >= 6` world/pixel correspondences. Writes the world → camera
 * extrinsic (12 doubles) and the RMS reprojection error in pixels.
 *
 * # Safety
 * `world` must hold `3 * n` doubles, `pixels` `2 * n`, `intrinsics` a valid struct,
 * `out_extrinsic` 12 doubles and `out_rms` 1.
 */
MpStatus mp_solve_pnp(const double *world,
                      const double *pixels_in,
                      size_t n,
                      const MpIntrinsics *intrinsics,
                      double *out_extrinsic,
                      double *out_rms);

/**
 * Parses a template from its JSON text (UTF-8, NUL-terminated).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable handle slot.
 */
MpStatus mp_template_from_json(const char *json, MpTemplate **out);

/**
 * Releases a template. Null is ignored.
 *
 * # Safety
 * `template` must be null or a handle from [`mp_template_from_json`] not yet freed.
 */
void mp_template_free(MpTemplate *template_);

/**
 * Places the template's keypoints with the given head and backpack poses (local → world,
 * 12 doubles each) and projects them into `n_cameras` cameras. Keypoints follow the fixed
 * order given by [`mp_keypoint_name`]. Writes 27 world coordinates, then per camera 18 pixel coordinates and 9
 * visibility flags. `out_bboxes` may be null; otherwise it receives per camera
 * `x_min, y_min, x_max, y_max` of the visible keypoints with the 60 px margin, or NaNs
 * when none is visible.
 *
 * # Safety
 * `template` must be a live handle, `head_pose` and `backpack_pose` hold 12 doubles,
 * `cameras` `n_cameras` live handles, `out_world` 27 doubles, `out_pixels`
 * `18 * n_cameras`, `out_visible` `9 * n_cameras` bytes and `out_bboxes`, when not null,
 * `4 * n_cameras` doubles.
 */
MpStatus mp_propagate(const MpTemplate *template_,
                      const double *head_pose,
                      const double *backpack_pose,
                      const MpCamera *const *cameras,
                      size_t n_cameras,
                      double *out_world,
                      double *out_pixels,
                      uint8_t *out_visible,
                      double *out_bboxes);

/**
 * Bounding box of `n` pixels grown by `margin` on every side and clipped to a
 * `width × height` image. Writes `x_min, y_min, x_max, y_max`; [`MpStatus::Empty`] when
 * `n` is 0.
 *
 * # Safety
 * `pixels` must hold `2 * n` doubles and `out_bbox` 4.
 */
MpStatus mp_bbox(const double *pixels_in,
                 size_t n,
                 uint32_t width,
                 uint32_t height,
                 double margin,
                 double *out_bbox);

/**
 * Generalized ESD outlier test on `n > 10` values with at most
 * `ceil(max_outlier_fraction * n)` outliers at significance `alpha`. Writes the outlier
 * indices in removal order, most extreme first, into `out_indices` and their number
 * into `out_count`. [`MpStatus::BufferTooSmall`] when more than `capacity` were found;
 * `out_count` still receives the number needed.
 *
 * # Safety
 * `values` must hold `n` doubles, `out_indices` `capacity` elements and `out_count` 1.
 */
MpStatus mp_gesd(const double *values,
                 size_t n,
                 double max_outlier_fraction,
                 double alpha,
                 size_t *out_indices,
                 size_t capacity,
                 size_t *out_count);

/**
 * Name of keypoint `index` in the fixed order as a static NUL-terminated string, or null
 * when out of range.
 */
const char *mp_keypoint_name(size_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARKERPROP_H */
