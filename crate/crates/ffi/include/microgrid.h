#ifndef MICROGRID_H
#define MICROGRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MgStatus {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_UTF8 = 2,
  MG_STATUS_CONFIG = 3,
  MG_STATUS_BUFFER_TOO_SMALL = 4,
  MG_STATUS_CONSTRAINT = 5,
  MG_STATUS_DIVERGENCE = 6,
  MG_STATUS_RUNTIME = 7,
  MG_STATUS_PANIC = 8,
} MgStatus;

/**
 * Opaque simulation handle.
 */
typedef struct MgSimulation MgSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a learning simulation from TOML setup text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgStatus mg_simulation_new(const char *toml, uint64_t seed, struct MgSimulation **out);

/**
 * Creates a simulation from a shipped preset (`setup1`, `setup2`,
 * `setup3`). With `uniform_random` nonzero, agents act uniformly at
 * random and never learn.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgStatus mg_simulation_from_preset(const char *name,
                                        uint64_t seed,
                                        int32_t uniform_random,
                                        struct MgSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from this library not yet freed.
 */
void mg_simulation_free(struct MgSimulation *sim);

/**
 * Number of microgrids, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t mg_simulation_num_grids(const struct MgSimulation *sim);

/**
 * Iterations run so far, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t mg_simulation_iteration(const struct MgSimulation *sim);

/**
 * Runs one iteration and writes each grid's reward into `rewards`, which
 * must hold at least `mg_simulation_num_grids` values. `rewards` may be
 * null when `len` is 0.
 *
 * # Safety
 * `rewards` must be valid for `len` writes.
 */
enum MgStatus mg_simulation_step(struct MgSimulation *sim, double *rewards, size_t len);

/**
 * Runs `iterations` more iterations without reporting rewards.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum MgStatus mg_simulation_run(struct MgSimulation *sim, uint64_t iterations);

/**
 * Battery level of every grid, same buffer rules as `mg_simulation_step`.
 *
 * # Safety
 * `levels` must be valid for `len` writes.
 */
enum MgStatus mg_simulation_batteries(const struct MgSimulation *sim, int64_t *levels, size_t len);

/**
 * Message for the last failure on this thread, or null if none.
 */
const char *mg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROGRID_H */
