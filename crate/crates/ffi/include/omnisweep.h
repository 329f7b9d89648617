#ifndef OMNISWEEP_H
#define OMNISWEEP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum OsStatus {
  OS_STATUS_OK = 0,
  // A required pointer argument was null.
  OS_STATUS_NULL_POINTER = 1,
  // Arguments were rejected (bad sizes, values or file contents).
  OS_STATUS_INVALID_ARGUMENT = 2,
  // A numerical routine failed (root solve, divergence, degeneracy).
  OS_STATUS_NUMERIC = 3,
  // Reading a file failed.
  OS_STATUS_IO = 4,
  // A panic was caught at the boundary.
  OS_STATUS_PANIC = 5,
} OsStatus;

// Opaque fisheye intrinsics.
typedef struct OsIntrinsics OsIntrinsics;

// Opaque calibrated rig.
typedef struct OsRig OsRig;

// Affine map from normalized to pixel coordinates.
typedef struct OsAffine {
  double c;
  double d;
  double e;
  double cx;
  double cy;
} OsAffine;

// Sphere-sweep grid; latitudes in radians.
typedef struct OsGrid {
  size_t width;
  size_t height;
  size_t num_spheres;
  double d_min;
  double phi_min;
  double phi_max;
} OsGrid;

// Semi-global matching parameters.
typedef struct OsSgmParams {
  double p1;
  double p2;
  // 4 or 8 aggregation paths; 0 skips aggregation.
  size_t paths;
  // Nonzero to wrap paths around the longitude seam.
  uint8_t wrap_horizontal;
} OsSgmParams;

// Inverse-depth index error statistics.
typedef struct OsDepthMetrics {
  double pct_gt1;
  double pct_gt3;
  double pct_gt5;
  double mae;
  double rms;
  size_t valid_pixels;
} OsDepthMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null when none.
// The pointer stays valid until the next failing call on this thread.
const char *os_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *os_version(void);

// Creates intrinsics from `poly_len` polynomial coefficients, the affine
// map, the image size and the field of view in degrees.
//
// # Safety
// `poly` must point to `poly_len` doubles; `out` must be writable.
enum OsStatus os_intrinsics_new(const double *poly,
                                size_t poly_len,
                                struct OsAffine affine,
                                uint32_t width,
                                uint32_t height,
                                double fov_deg,
                                struct OsIntrinsics **out);

// # Safety
// `handle` must be null or come from [`os_intrinsics_new`] /
// [`os_rig_intrinsics`] and not be freed already.
void os_intrinsics_free(struct OsIntrinsics *handle);

// Projects camera-frame point `xyz[3]` to `pixel[2]`; `valid` is set to 1
// when the point lies within the field of view.
//
// # Safety
// `handle` must be live; `xyz`, `pixel` and `valid` must be valid pointers.
enum OsStatus os_intrinsics_project(const struct OsIntrinsics *handle,
                                    const double *xyz,
                                    double *pixel,
                                    uint8_t *valid);

// Lifts `pixel[2]` to the unit ray `ray[3]`; `valid` is set to 1 when the
// pixel lies within the field of view.
//
// # Safety
// `handle` must be live; `pixel`, `ray` and `valid` must be valid pointers.
enum OsStatus os_intrinsics_unproject(const struct OsIntrinsics *handle,
                                      const double *pixel,
                                      double *ray,
                                      uint8_t *valid);

// Loads a rig calibration file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum OsStatus os_rig_load(const char *path, struct OsRig **out);

// # Safety
// `handle` must be null or come from [`os_rig_load`] and not be freed.
void os_rig_free(struct OsRig *handle);

// Number of cameras in the rig (0 for a null handle).
//
// # Safety
// `handle` must be null or live.
size_t os_rig_camera_count(const struct OsRig *handle);

// Copies camera `index`'s intrinsics into a new handle.
//
// # Safety
// `handle` must be live; `out` must be writable.
enum OsStatus os_rig_intrinsics(const struct OsRig *handle,
                                size_t index,
                                struct OsIntrinsics **out);

// Writes camera `index`'s world-to-camera pose as a row-major 3×4 matrix.
//
// # Safety
// `handle` must be live; `matrix` must point to 12 writable doubles.
enum OsStatus os_rig_pose(const struct OsRig *handle, size_t index, double *matrix);

// Aggregates a W×H×N cost volume (n-major, row-major slices; costs in
// [0, 1]) with SGM and writes the winning sphere index per pixel.
// `valid` flags are 0/1 bytes; invalid output pixels get index 0.
//
// # Safety
// `costs` and `valid` must hold W·H·N elements; `index_out` and
// `valid_out` must hold W·H elements.
enum OsStatus os_sgm_depth(struct OsGrid grid,
                           const float *costs,
                           const uint8_t *valid,
                           struct OsSgmParams params,
                           uint32_t *index_out,
                           uint8_t *valid_out);

// Error statistics of predicted against ground-truth sphere indices over
// pixels valid in both maps.
//
// # Safety
// All four arrays must hold W·H elements; `out` must be writable.
enum OsStatus os_depth_metrics(struct OsGrid grid,
                               const uint32_t *pred_index,
                               const uint8_t *pred_valid,
                               const uint32_t *gt_index,
                               const uint8_t *gt_valid,
                               struct OsDepthMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNISWEEP_H */
