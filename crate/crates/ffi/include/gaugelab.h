#ifndef GAUGELAB_H
#define GAUGELAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum GaugelabStatus {
  GAUGELAB_STATUS_OK = 0,
  GAUGELAB_STATUS_NULL_POINTER = 1,
  GAUGELAB_STATUS_INVALID_ARGUMENT = 2,
  GAUGELAB_STATUS_DIMENSION_MISMATCH = 3,
  GAUGELAB_STATUS_UNKNOWN_NAME = 4,
  GAUGELAB_STATUS_ORBIT_DEGENERATE = 5,
  GAUGELAB_STATUS_NON_TRANSVERSAL = 6,
  GAUGELAB_STATUS_SINGULAR_GRAM = 7,
  GAUGELAB_STATUS_DIVERGENCE = 8,
  GAUGELAB_STATUS_NO_CONVERGENCE = 9,
  GAUGELAB_STATUS_UNSUPPORTED = 10,
  GAUGELAB_STATUS_IO = 11,
  GAUGELAB_STATUS_PANIC = 12,
} GaugelabStatus;

// Opaque model handle.
typedef struct GaugelabModel GaugelabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *gaugelab_last_error(void);

// Library version as a static NUL-terminated string.
const char *gaugelab_version(void);

// Build a catalog model.
//
// `params_json` is a JSON object of model parameters, or null for defaults.
//
// # Safety
// `kind` must be a NUL-terminated string, `params_json` null or
// NUL-terminated, and `out` a valid pointer.
enum GaugelabStatus gaugelab_model_new(const char *kind,
                                       const char *params_json,
                                       uint64_t seed,
                                       struct GaugelabModel **out);

// Release a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from [`gaugelab_model_new`] not yet freed.
void gaugelab_model_free(struct GaugelabModel *model);

// Number of parameters.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum GaugelabStatus gaugelab_model_param_dim(const struct GaugelabModel *model, size_t *out);

// Number of symmetry generators.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum GaugelabStatus gaugelab_model_generator_count(const struct GaugelabModel *model, size_t *out);

// Seeded initial parameters; `len` must equal the parameter dimension.
//
// # Safety
// `theta_out` must point to `len` writable doubles.
enum GaugelabStatus gaugelab_model_init(const struct GaugelabModel *model,
                                        double *theta_out,
                                        size_t len);

// Full-batch training loss.
//
// # Safety
// `theta` must point to `len` doubles and `out` be a valid pointer.
enum GaugelabStatus gaugelab_model_loss(const struct GaugelabModel *model,
                                        const double *theta,
                                        size_t len,
                                        double *out);

// Full-batch gradient into `grad_out` (same length as `theta`); the loss is
// written to `loss_out` unless it is null.
//
// # Safety
// `theta` and `grad_out` must point to `len` doubles; `loss_out` must be
// null or valid.
enum GaugelabStatus gaugelab_model_grad(const struct GaugelabModel *model,
                                        const double *theta,
                                        size_t len,
                                        double *grad_out,
                                        double *loss_out);

// Orbit Gram matrix `H_ab = <xi_a, xi_b>`, row-major, `out_len = m * m`.
//
// # Safety
// `theta` must point to `len` doubles and `out` to `out_len` doubles.
enum GaugelabStatus gaugelab_model_orbit_gram(const struct GaugelabModel *model,
                                              const double *theta,
                                              size_t len,
                                              double *out,
                                              size_t out_len);

// Entropic gauge correction `(sigma^2 / 2 beta) log det G`.
//
// Uses the model's explicit gauge when it has one and the balanced gauge
// (`G = H`) otherwise.
//
// # Safety
// `theta` must point to `len` doubles and `out` be a valid pointer.
enum GaugelabStatus gaugelab_model_gauge_correction(const struct GaugelabModel *model,
                                                    const double *theta,
                                                    size_t len,
                                                    double sigma,
                                                    double beta,
                                                    double *out);

// Run an experiment from a JSON config and return the report as JSON.
//
// The report string must be released with [`gaugelab_string_free`]. A run
// that diverges still returns `Ok` with its `failure` field set.
//
// # Safety
// `config_json` must be NUL-terminated and `report_out` a valid pointer.
enum GaugelabStatus gaugelab_run_experiment(const char *config_json, char **report_out);

// Release a string returned by the library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void gaugelab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAUGELAB_H */
