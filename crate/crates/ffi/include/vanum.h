#ifndef VANUM_H
#define VANUM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum VanumStatus {
  VANUM_STATUS_OK = 0,
  VANUM_STATUS_NULL_POINTER = 1,
  VANUM_STATUS_INVALID_ARGUMENT = 2,
  VANUM_STATUS_CONFIG = 3,
  // A modelling assumption does not hold for the supplied data.
  VANUM_STATUS_ASSUMPTION = 4,
  VANUM_STATUS_NOT_CONVERGED = 5,
  VANUM_STATUS_NUMERIC = 6,
  VANUM_STATUS_IO = 7,
  VANUM_STATUS_BUFFER_TOO_SMALL = 8,
  VANUM_STATUS_PANIC = 9,
} VanumStatus;

// An online allocator bound to a configuration.
typedef struct VanumAvr VanumAvr;

// A resolved configuration: universe, utilities, process and initial state.
typedef struct VanumConfig VanumConfig;

// Copies the calling thread's last error message into `buf` (NUL terminated, truncated to `len`).
// Returns the full message length in bytes, excluding the terminator.
size_t vanum_last_error_message(char *buf, size_t len);

// Static, NUL-terminated name of a status code.
const char *vanum_status_name(enum VanumStatus status);

// Parses and resolves a TOML experiment configuration.
enum VanumStatus vanum_config_from_toml(const char *toml, struct VanumConfig **out);

// Resolves one of the built-in scenarios by name.
enum VanumStatus vanum_config_from_scenario(const char *name, struct VanumConfig **out);

// Frees a configuration. Null is ignored.
void vanum_config_free(struct VanumConfig *cfg);

enum VanumStatus vanum_config_n_users(const struct VanumConfig *cfg, size_t *out);

enum VanumStatus vanum_config_n_constraints(const struct VanumConfig *cfg, size_t *out);

// Writes the configuration digest (64 hex characters plus NUL) into `buf`.
enum VanumStatus vanum_config_digest(const struct VanumConfig *cfg, char *buf, size_t len);

// Certified bounds of the constraint universe.
enum VanumStatus vanum_universe_bounds(const struct VanumConfig *cfg,
                                       double *r_max,
                                       double *v_max,
                                       double *delta_feas);

// Solves the slot program at `(m, v)` against constraint `constraint` and writes the allocation to `r_out`.
enum VanumStatus vanum_slot_solve(const struct VanumConfig *cfg,
                                  size_t constraint,
                                  const double *m,
                                  const double *v,
                                  size_t n_users,
                                  double *r_out);

// Solves the stationary program and writes its fixed point `(m, v)` and objective.
enum VanumStatus vanum_stationary_solve(const struct VanumConfig *cfg,
                                        size_t n_users,
                                        double *m_out,
                                        double *v_out,
                                        double *objective);

// Creates an allocator at the configuration's initial state.
enum VanumStatus vanum_avr_new(const struct VanumConfig *cfg, struct VanumAvr **out);

// Frees an allocator. Null is ignored.
void vanum_avr_free(struct VanumAvr *avr);

// Serves one slot under constraint `constraint`, writing the allocation to `r_out`.
// On failure the allocator state is left unchanged.
enum VanumStatus vanum_avr_step(struct VanumAvr *avr,
                                size_t constraint,
                                size_t n_users,
                                double *r_out);

// Current estimates `(m, v)` and the index of the next slot.
enum VanumStatus vanum_avr_theta(const struct VanumAvr *avr,
                                 size_t n_users,
                                 double *m_out,
                                 double *v_out,
                                 uint64_t *next_slot);

// Library version as a static NUL-terminated string.
const char *vanum_version(void);

#endif  /* VANUM_H */
