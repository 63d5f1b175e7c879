#ifndef TBSITE_H
#define TBSITE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TbStatus {
  TB_STATUS_OK = 0,
  TB_STATUS_NULL_POINTER = 1,
  TB_STATUS_INVALID_ARGUMENT = 2,
  TB_STATUS_NUMERICAL = 3,
  TB_STATUS_PANIC = 4,
} TbStatus;

/**
 * Opaque configuration handle.
 */
typedef struct TbsiteConfig TbsiteConfig;

/**
 * Opaque model handle.
 */
typedef struct TbsiteModel TbsiteModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tbsite_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or
 * 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t tbsite_last_error_message(char *buf, size_t len);

/**
 * Model with default parameters.
 */
struct TbsiteModel *tbsite_model_new_default(void);

/**
 * Parses a model from a JSON object such as `{"kT": 0.05}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TbStatus tbsite_model_from_json(const char *json, struct TbsiteModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void tbsite_model_free(struct TbsiteModel *model);

/**
 * Configuration of `n` sites in `dim` dimensions from row-major positions.
 * Sites are labelled `(k, 0)` in input order.
 *
 * # Safety
 * `positions` must hold `n * dim` values and `out` must be valid.
 */
enum TbStatus tbsite_config_new(size_t dim,
                                size_t n,
                                const double *positions,
                                struct TbsiteConfig **out);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void tbsite_config_free(struct TbsiteConfig *config);

/**
 * Number of sites, or 0 for a null handle.
 *
 * # Safety
 * `config` must be null or a live handle.
 */
size_t tbsite_config_len(const struct TbsiteConfig *config);

/**
 * Band energy `Σ_s F(ε_s)` plus pair energy.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum TbStatus tbsite_total_energy(const struct TbsiteModel *model,
                                  const struct TbsiteConfig *config,
                                  double *out);

/**
 * Site energies (band part) of every site, by diagonalization.
 *
 * # Safety
 * Handles must be live and `out` valid for `len` values.
 */
enum TbStatus tbsite_site_energies(const struct TbsiteModel *model,
                                   const struct TbsiteConfig *config,
                                   double *out,
                                   size_t len);

/**
 * Gradient of the total energy, row-major `(site, coord)`.
 *
 * # Safety
 * Handles must be live and `out` valid for `len` values.
 */
enum TbStatus tbsite_total_gradient(const struct TbsiteModel *model,
                                    const struct TbsiteConfig *config,
                                    double *out,
                                    size_t len);

/**
 * Site energy of `site` by contour quadrature (`n_nodes = 0` selects the default).
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum TbStatus tbsite_contour_site_energy(const struct TbsiteModel *model,
                                         const struct TbsiteConfig *config,
                                         size_t site,
                                         size_t n_nodes,
                                         double *out);

/**
 * `∂E_site/∂y(m)` for every site `m`, row-major `(m, coord)`, by contour quadrature.
 *
 * # Safety
 * Handles must be live and `out` valid for `len` values.
 */
enum TbStatus tbsite_contour_site_gradient(const struct TbsiteModel *model,
                                           const struct TbsiteConfig *config,
                                           size_t site,
                                           size_t n_nodes,
                                           double *out,
                                           size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TBSITE_H */
