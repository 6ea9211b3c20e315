#ifndef METASCOPE_H
#define METASCOPE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_DIMENSION = 3,
  MS_STATUS_FORMAT = 4,
  MS_STATUS_CONFIGURATION = 5,
  /*
   Sampling, aliasing, band or model-range violations.
   */
  MS_STATUS_NUMERICAL = 6,
  MS_STATUS_IO = 7,
  MS_STATUS_BUFFER_TOO_SMALL = 8,
  MS_STATUS_PANIC = 9,
} MsStatus;

typedef struct MsDegradeConfig MsDegradeConfig;

typedef struct MsImage MsImage;

typedef struct MsLens MsLens;

typedef struct MsMixtures MsMixtures;

typedef struct MsPsfStack MsPsfStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *ms_version(void);

/*
 Copies the calling thread's last error message into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length without the NUL, or
 0 when no error has been recorded.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t ms_last_error_message(char *buf, size_t len);

/*
 Ideal-phase lens with diffractive focal scaling.

 # Safety
 `out` must be a valid pointer to a handle slot.
 */
enum MsStatus ms_lens_new(double diameter_um,
                          double focal_length_um,
                          double wavelength_um,
                          struct MsLens **out);

/*
 Reads a lens design JSON.

 # Safety
 `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum MsStatus ms_lens_load(const char *path, struct MsLens **out);

/*
 # Safety
 `lens` must be null or a handle from this library, freed once.
 */
void ms_lens_free(struct MsLens *lens);

/*
 Best-focus distance for `wavelength_um` over `[z_min_um, z_max_um]` on a
 square lens grid of `grid_samples`.

 # Safety
 `lens` must be a live handle and `z_best_um` writable.
 */
enum MsStatus ms_focal_sweep(const struct MsLens *lens,
                             double wavelength_um,
                             double z_min_um,
                             double z_max_um,
                             size_t steps,
                             size_t grid_samples,
                             double *z_best_um);

/*
 Unit-sum PSFs for `count` wavelengths on a `window` x `window` raster of
 sample pitch `pitch_um`.

 # Safety
 `wavelengths_um` must point to `count` values; `out` a valid handle slot.
 */
enum MsStatus ms_psf_simulate(const struct MsLens *lens,
                              const double *wavelengths_um,
                              size_t count,
                              double sensor_distance_um,
                              size_t grid_samples,
                              size_t window,
                              double pitch_um,
                              struct MsPsfStack **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum MsStatus ms_psf_stack_read(const char *path, struct MsPsfStack **out);

/*
 # Safety
 `stack` must be a live handle; `path` a NUL-terminated string.
 */
enum MsStatus ms_psf_stack_write(const struct MsPsfStack *stack, const char *path);

/*
 # Safety
 `stack` must be a live handle; the output pointers must be writable.
 */
enum MsStatus ms_psf_stack_dims(const struct MsPsfStack *stack,
                                size_t *count,
                                size_t *rows,
                                size_t *cols);

/*
 Copies raster `index` row-major into `buf` of `len` doubles.

 # Safety
 `buf` must point to `len` writable doubles.
 */
enum MsStatus ms_psf_stack_copy(const struct MsPsfStack *stack,
                                size_t index,
                                double *buf,
                                size_t len);

/*
 # Safety
 `stack` must be null or a handle from this library, freed once.
 */
void ms_psf_stack_free(struct MsPsfStack *stack);

/*
 Linear-light image from planar `[channel][row][col]` floats.

 # Safety
 `data` must point to `channels * height * width` floats.
 */
enum MsStatus ms_image_new(size_t channels,
                           size_t height,
                           size_t width,
                           const float *data,
                           struct MsImage **out);

/*
 # Safety
 `image` must be a live handle; the output pointers must be writable.
 */
enum MsStatus ms_image_dims(const struct MsImage *image,
                            size_t *channels,
                            size_t *height,
                            size_t *width);

/*
 Copies the image planar into `buf` of `len` floats.

 # Safety
 `buf` must point to `len` writable floats.
 */
enum MsStatus ms_image_copy(const struct MsImage *image, float *buf, size_t len);

/*
 # Safety
 `image` must be null or a handle from this library, freed once.
 */
void ms_image_free(struct MsImage *image);

/*
 Reads a degradation config and the PSF stack it references.

 # Safety
 `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum MsStatus ms_config_load(const char *path, struct MsDegradeConfig **out);

/*
 Noise-free, unit-gain config around a PSF stack (copied).

 # Safety
 `stack` must be a live handle; `out` a valid handle slot.
 */
enum MsStatus ms_config_identity(const struct MsPsfStack *stack, struct MsDegradeConfig **out);

/*
 Replaces the config's PSF stack with a copy of `stack`.

 # Safety
 Both handles must be live.
 */
enum MsStatus ms_config_set_psf(struct MsDegradeConfig *config, const struct MsPsfStack *stack);

/*
 # Safety
 `config` must be null or a handle from this library, freed once.
 */
void ms_config_free(struct MsDegradeConfig *config);

/*
 # Safety
 Handles must be live; `out` a valid handle slot.
 */
enum MsStatus ms_degrade(const struct MsDegradeConfig *config,
                         const struct MsImage *clean,
                         uint64_t seed,
                         struct MsImage **out);

/*
 EM fit of `k` components to every raster of the stack.

 # Safety
 `stack` must be a live handle; `out` a valid handle slot.
 */
enum MsStatus ms_mixtures_fit(const struct MsPsfStack *stack,
                              size_t k,
                              uint64_t seed,
                              struct MsMixtures **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum MsStatus ms_mixtures_load(const char *path, struct MsMixtures **out);

/*
 # Safety
 `mixtures` must be null or a handle from this library, freed once.
 */
void ms_mixtures_free(struct MsMixtures *mixtures);

/*
 Correction pipeline; mixtures are matched to the config's channel
 wavelengths. `occ` non-zero enables chromatic aggregation.

 # Safety
 Handles must be live; `out` a valid handle slot.
 */
enum MsStatus ms_correct(const struct MsDegradeConfig *config,
                         const struct MsMixtures *mixtures,
                         const struct MsImage *degraded,
                         double snr,
                         int32_t occ,
                         struct MsImage **out);

/*
 # Safety
 Handles must be live; `out` writable.
 */
enum MsStatus ms_psnr(const struct MsImage *a, const struct MsImage *b, double *out);

/*
 Gaussian-window SSIM with an odd `window`.

 # Safety
 Handles must be live; `out` writable.
 */
enum MsStatus ms_ssim(const struct MsImage *a, const struct MsImage *b, size_t window, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASCOPE_H */
