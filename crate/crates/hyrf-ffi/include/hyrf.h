/* hyrf C API: hybrid radiance field models (load, render, compress). */

#ifndef HYRF_H
#define HYRF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirrored from the library's error classes.
 */
typedef enum HyrfStatus {
  HYRF_STATUS_OK = 0,
  /**
   * A pointer or argument violated this API's contract.
   */
  HYRF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unreadable, unparsable or corrupt data.
   */
  HYRF_STATUS_DATA_ERROR = 2,
  /**
   * Numeric divergence inside the library.
   */
  HYRF_STATUS_DIVERGENCE = 3,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  HYRF_STATUS_INTERNAL = 4,
} HyrfStatus;

/**
 * An opaque loaded model.
 */
typedef struct HyrfModel HyrfModel;

/**
 * Pinhole camera description. `rotation` is row-major world-to-camera;
 * `p_cam = R p + t` with +z forward and y down.
 */
typedef struct HyrfCamera {
  double rotation[9];
  double translation[3];
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double near;
} HyrfCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hyrf_last_error(void);

/**
 * Static library version string.
 */
const char *hyrf_version(void);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer; the
 * returned handle must be released with [`hyrf_model_free`].
 */
enum HyrfStatus hyrf_model_load(const char *path, struct HyrfModel **out);

/**
 * Loads a compressed bundle into a new model handle.
 *
 * # Safety
 * Same contract as [`hyrf_model_load`].
 */
enum HyrfStatus hyrf_model_load_bundle(const char *path, struct HyrfModel **out);

/**
 * Releases a model handle. A null pointer is a no-op.
 *
 * # Safety
 * `model` must have come from one of the load functions and not be freed
 * twice.
 */
void hyrf_model_free(struct HyrfModel *model);

/**
 * Number of explicit Gaussians in the model; 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t hyrf_model_gaussian_count(const struct HyrfModel *model);

/**
 * Training iteration recorded in the loaded checkpoint or bundle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t hyrf_model_iteration(const struct HyrfModel *model);

/**
 * Renders one view into a caller-allocated RGB f32 buffer of length
 * `width * height * 3`, values in [0, 1], row-major.
 *
 * # Safety
 * `model` and `camera` must be valid; `out_rgb` must point to at least
 * `out_len` floats.
 */
enum HyrfStatus hyrf_model_render(const struct HyrfModel *model,
                                  const struct HyrfCamera *camera,
                                  float *out_rgb,
                                  uintptr_t out_len);

/**
 * Compresses a checkpoint file into a bundle file with default codec
 * settings.
 *
 * # Safety
 * Both paths must be NUL-terminated strings.
 */
enum HyrfStatus hyrf_compress_file(const char *checkpoint_path, const char *bundle_path);

/**
 * Expands a bundle file back into a render-ready checkpoint file.
 *
 * # Safety
 * Both paths must be NUL-terminated strings.
 */
enum HyrfStatus hyrf_decompress_file(const char *bundle_path, const char *checkpoint_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYRF_H */
