#ifndef KS_STOKES_H
#define KS_STOKES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status returned by every fallible call.
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_INVALID_ARGUMENT = 1,
  KS_STATUS_NUMERICAL = 2,
  KS_STATUS_BLOWUP_SUSPECTED = 3,
  KS_STATUS_CFL_VIOLATION = 4,
  KS_STATUS_CONFIG = 5,
  KS_STATUS_PARSE = 6,
  KS_STATUS_IO = 7,
  KS_STATUS_NULL_POINTER = 8,
  KS_STATUS_PANIC = 9,
} KsStatus;

// Opaque coupled simulation.
typedef struct KsSimulation KsSimulation;

// Snapshot of the scalar diagnostics of a simulation.
typedef struct KsDiagnostics {
  double t;
  double mass;
  double l2_rho;
  double h1_rho;
  double linf_rho;
  double min_rho;
  double l2_u;
  double h1_u;
  double flux;
  double moment;
  double energy_residual;
  double criterion_integral;
} KsDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *ks_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ks_version(void);

// Simulation on `[0, lx] x [0, ly]` with `nx * ny` interior nodes, zero
// density and fluid at rest.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum KsStatus ks_simulation_new(double lx,
                                double ly,
                                size_t nx,
                                size_t ny,
                                double g,
                                struct KsSimulation **out);

// Simulation initialized from a TOML run configuration.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum KsStatus ks_simulation_from_toml(const char *toml, struct KsSimulation **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must come from this library and not be used afterwards.
void ks_simulation_free(struct KsSimulation *sim);

// Number of grid nodes, or 0 for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
size_t ks_simulation_len(const struct KsSimulation *sim);

// Current time, or NaN for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
double ks_simulation_time(const struct KsSimulation *sim);

// Replaces the density with `len` node values, row index `i * ny + j`.
//
// # Safety
// `values` must point to `len` readable doubles.
enum KsStatus ks_simulation_set_density(struct KsSimulation *sim, const double *values, size_t len);

// Copies the density into `out`, which holds `len` doubles.
//
// # Safety
// `out` must point to `len` writable doubles.
enum KsStatus ks_simulation_density(const struct KsSimulation *sim, double *out, size_t len);

// Copies the stream function into `out`, which holds `len` doubles.
//
// # Safety
// `out` must point to `len` writable doubles.
enum KsStatus ks_simulation_streamfunction(const struct KsSimulation *sim, double *out, size_t len);

// One coupled step of at most `dt_target`; the step taken goes to `dt_out`
// when it is non-null. A suspected blow-up leaves the state unchanged.
//
// # Safety
// `sim` must be a live handle; `dt_out` null or writable.
enum KsStatus ks_simulation_step(struct KsSimulation *sim, double dt_target, double *dt_out);

// Steps until `t_end` with targets of `dt_target`.
//
// # Safety
// `sim` must be a live handle.
enum KsStatus ks_simulation_advance(struct KsSimulation *sim, double t_end, double dt_target);

// Diagnostics of the current state.
//
// # Safety
// `sim` must be a live handle and `out` writable.
enum KsStatus ks_simulation_diagnostics(struct KsSimulation *sim, struct KsDiagnostics *out);

// Solves `-laplacian u = f` with zero Dirichlet data on an `nx * ny`
// interior grid.
//
// # Safety
// `f` and `out` must each point to `nx * ny` doubles.
enum KsStatus ks_solve_poisson(double lx,
                               double ly,
                               size_t nx,
                               size_t ny,
                               const double *f,
                               double *out);

// `prod_{j=1}^n (2^{j+2} - d) / (2^{j+2} - 2d)` for `d` in {2, 3}.
//
// # Safety
// `out` must be writable.
enum KsStatus ks_moser_partial_product(uint32_t n, uint32_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KS_STOKES_H */
