#ifndef SPDC_H
#define SPDC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpdcStatus {
  SPDC_STATUS_OK = 0,
  SPDC_STATUS_NULL_ARGUMENT = 1,
  SPDC_STATUS_INVALID_ARGUMENT = 2,
  SPDC_STATUS_INVALID_SCENARIO = 3,
  SPDC_STATUS_IO = 4,
  SPDC_STATUS_FORMAT = 5,
  SPDC_STATUS_NUMERIC = 6,
  SPDC_STATUS_FIT_FAILED = 7,
  SPDC_STATUS_BUFFER_TOO_SMALL = 8,
  SPDC_STATUS_PANIC = 9,
} SpdcStatus;

typedef enum SpdcBlockedSide {
  /**
   * Blocks mapped x greater than the knife position.
   */
  SPDC_BLOCKED_SIDE_ABOVE = 0,
  /**
   * Blocks mapped x smaller than the knife position.
   */
  SPDC_BLOCKED_SIDE_BELOW = 1,
} SpdcBlockedSide;

/**
 * Opaque scenario handle.
 */
typedef struct SpdcScenario SpdcScenario;

/**
 * Detection setup. Lengths in meters. Polarization is always summed over
 * the (theta-hat, phi-hat) basis.
 */
typedef struct SpdcDetection {
  double na;
  double focal_length;
  double magnification;
  /**
   * Fiber mode radius in the collimated plane; 0 disables the fiber.
   */
  double fiber_sigma;
  double fiber_offset_x;
  double fiber_offset_y;
  /**
   * Filter passband as two wavelengths; both 0 disables the filter.
   */
  double filter_wavelength_a;
  double filter_wavelength_b;
  bool knife_enabled;
  double knife_position;
  enum SpdcBlockedSide knife_blocks;
} SpdcDetection;

typedef struct SpdcRate {
  double rate;
  double error_estimate;
  bool converged;
  /**
   * No direction passes the detection; `rate` is 0.
   */
  bool empty_domain;
} SpdcRate;

typedef struct SpdcErfFit {
  double m;
  double x0;
  double amplitude;
  double offset;
  /**
   * 95% half-widths for m, x0, amplitude, offset.
   */
  double ci95[4];
  double residual_norm;
} SpdcErfFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spdc_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into the library on the same thread.
 */
const char *spdc_last_error_message(void);

/**
 * Read a scenario manifest (and its blobs) from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpdcStatus spdc_scenario_read(const char *path, struct SpdcScenario **out);

/**
 * Build a named synthetic scenario ("single-dipole", "z-dipole",
 * "two-mode", "three-mode-random").
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum SpdcStatus spdc_scenario_preset(const char *name, uint64_t seed, struct SpdcScenario **out);

/**
 * Write the scenario as a manifest at `path` plus binary blobs beside it.
 *
 * # Safety
 * `scenario` must come from this library; `path` must be NUL-terminated.
 */
enum SpdcStatus spdc_scenario_write(const struct SpdcScenario *scenario, const char *path);

/**
 * Release a scenario. NULL is a no-op.
 *
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void spdc_scenario_free(struct SpdcScenario *scenario);

/**
 * # Safety
 * `scenario` must come from this library; `out` must be writable.
 */
enum SpdcStatus spdc_scenario_mode_count(const struct SpdcScenario *scenario, size_t *out);

/**
 * Complex eigenfrequency `omega - i gamma` of mode `index` (0-based).
 *
 * # Safety
 * `scenario` must come from this library; `omega` and `gamma` must be writable.
 */
enum SpdcStatus spdc_scenario_mode_eigenfrequency(const struct SpdcScenario *scenario,
                                                  size_t index,
                                                  double *omega,
                                                  double *gamma);

/**
 * Quality factor `omega / (2 gamma)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SpdcStatus spdc_q_factor(double omega, double gamma, double *out);

/**
 * Fill `out` with the default detection setup.
 *
 * # Safety
 * `out` must be writable.
 */
enum SpdcStatus spdc_detection_default(struct SpdcDetection *out);

/**
 * Detected pair rate integrated over `omega_points` signal frequencies
 * spanning the pair band of the filter (or the broadband window).
 *
 * # Safety
 * `scenario` must come from this library; `det` must be readable and
 * `out` writable.
 */
enum SpdcStatus spdc_detected_rate(const struct SpdcScenario *scenario,
                                   const struct SpdcDetection *det,
                                   size_t omega_points,
                                   struct SpdcRate *out);

/**
 * Detected rate per unit signal angular frequency on `omega_points`
 * frequencies over the pair band. Writes `omega_points` values to each of
 * `omega_s` and `density`, whose capacity is `capacity`.
 *
 * # Safety
 * `scenario` must come from this library; `det` must be readable; the
 * output arrays must hold `capacity` doubles.
 */
enum SpdcStatus spdc_spectrum(const struct SpdcScenario *scenario,
                              const struct SpdcDetection *det,
                              size_t omega_points,
                              double *omega_s,
                              double *density,
                              size_t capacity);

/**
 * Fit `offset + amplitude * erf((x - x0) / m)` to `n` samples.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` must be writable.
 */
enum SpdcStatus spdc_fit_erf(const double *x, const double *y, size_t n, struct SpdcErfFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPDC_H */
