#ifndef AMFEM_H
#define AMFEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum AmfemStatus {
  AMFEM_STATUS_OK = 0,
  AMFEM_STATUS_NULL_POINTER = 1,
  AMFEM_STATUS_INVALID_ARGUMENT = 2,
  AMFEM_STATUS_INVALID_MESH = 3,
  AMFEM_STATUS_SINGULAR = 4,
  AMFEM_STATUS_IO = 5,
  AMFEM_STATUS_OUT_OF_RANGE = 6,
  AMFEM_STATUS_INTERNAL = 7,
  AMFEM_STATUS_PANIC = 8,
} AmfemStatus;

// Refinement strategy.
typedef enum AmfemMode {
  AMFEM_MODE_UNIFORM = 0,
  AMFEM_MODE_ADAPTIVE = 1,
} AmfemMode;

// Experiment configuration.
typedef struct AmfemConfig AmfemConfig;

// A finished adaptive run for a single polynomial degree.
typedef struct AmfemRun AmfemRun;

// Quantities recorded on one mesh. Errors are NaN when no exact solution
// is known; `delta` is NaN when it is not defined.
typedef struct AmfemRecord {
  size_t iter;
  size_t nel;
  size_t flux_dofs;
  size_t scalar_dofs;
  double eta;
  double eta_tilde;
  double err_full;
  double err_l2_u;
  double err_l2_nu;
  double effectivity;
  double delta;
  size_t marked;
} AmfemRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t amfem_last_error(char *buf, size_t len);

// Create a configuration for a named experiment (`smooth`, `lshape`,
// `advdiff`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for writes.
enum AmfemStatus amfem_config_new(const char *name, struct AmfemConfig **out);

// Create a configuration from a JSON document with the same fields as the
// command-line configuration file.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum AmfemStatus amfem_config_from_json(const char *json, struct AmfemConfig **out);

// Release a configuration. Null is ignored.
//
// # Safety
// `cfg` must come from this library and not be used afterwards.
void amfem_config_free(struct AmfemConfig *cfg);

// Set the polynomial degrees used by [`amfem_experiment_run`].
//
// # Safety
// `cfg` must be a live handle and `degrees` valid for `count` reads.
enum AmfemStatus amfem_config_set_degrees(struct AmfemConfig *cfg,
                                          const size_t *degrees,
                                          size_t count);

// Set refinement mode, bulk fraction and number of meshes.
//
// # Safety
// `cfg` must be a live handle.
enum AmfemStatus amfem_config_set_loop(struct AmfemConfig *cfg,
                                       enum AmfemMode mode,
                                       double theta,
                                       size_t iterations);

// Set the output directory used by [`amfem_experiment_run`].
//
// # Safety
// `cfg` must be a live handle and `dir` a NUL-terminated string.
enum AmfemStatus amfem_config_set_output(struct AmfemConfig *cfg, const char *dir);

// Run every configured degree and write the convergence tables, logs and
// mesh dumps under the output directory.
//
// # Safety
// `cfg` must be a live handle.
enum AmfemStatus amfem_experiment_run(const struct AmfemConfig *cfg);

// Run the loop in memory for one degree without writing files.
//
// # Safety
// `cfg` must be a live handle; `out` must be valid for writes.
enum AmfemStatus amfem_run(const struct AmfemConfig *cfg, size_t p, struct AmfemRun **out);

// Release a run. Null is ignored.
//
// # Safety
// `run` must come from this library and not be used afterwards.
void amfem_run_free(struct AmfemRun *run);

// Number of meshes recorded in a run; 0 for null.
//
// # Safety
// `run` must be null or a live handle.
size_t amfem_run_len(const struct AmfemRun *run);

// Nonzero when the loop stopped on a failure before finishing.
//
// # Safety
// `run` must be null or a live handle.
int32_t amfem_run_failed(const struct AmfemRun *run);

// Copy record `index` of a run into `out`.
//
// # Safety
// `run` must be a live handle; `out` must be valid for writes.
enum AmfemStatus amfem_run_record(const struct AmfemRun *run,
                                  size_t index,
                                  struct AmfemRecord *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMFEM_H */
