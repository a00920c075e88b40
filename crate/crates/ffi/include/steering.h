#ifndef STEERING_H
#define STEERING_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes; zero is success.
typedef enum SteeringStatus {
  STEERING_STATUS_OK = 0,
  STEERING_STATUS_INVALID_ARGUMENT = 1,
  STEERING_STATUS_DEGENERATE_GEOMETRY = 2,
  STEERING_STATUS_ILL_POSED_FIT = 3,
  STEERING_STATUS_ILL_CONDITIONED = 4,
  STEERING_STATUS_INSUFFICIENT_DATA = 5,
  STEERING_STATUS_PARSE = 6,
  STEERING_STATUS_IO = 7,
  STEERING_STATUS_NULL_POINTER = 8,
  STEERING_STATUS_PANIC = 9,
} SteeringStatus;

// Opaque set of Bob's measurement axes with angular uncertainties.
typedef struct SteeringMeasurementSet SteeringMeasurementSet;

// Opaque precomputed strategy table for one measurement set and alphabet
// size; cheap to query at many gain parameters.
typedef struct SteeringStrategyTable SteeringStrategyTable;

// Optimal gain parameter at a given efficiency.
typedef struct SteeringGainOptimum {
  double eta;
  double r;
  double h;
  // Smallest state purity that can still violate the bound.
  double mu_min;
  bool violable;
} SteeringGainOptimum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *steering_version(void);

// Message for the most recent failure on this thread, or NULL if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *steering_last_error_message(void);

// Static name of a status code, e.g. `"invalid-argument"`.
const char *steering_status_name(enum SteeringStatus status);

// Builds a measurement set from `n` row-major `(x, y, z)` triples.
//
// Rows are normalized. `sigmas` may be NULL for zero uncertainty, otherwise
// it must hold `n` angular uncertainties in radians.
//
// # Safety
// `axes` must point to `3 * n` doubles, `sigmas` to `n` doubles or be NULL,
// and `out` must be writable.
enum SteeringStatus steering_measurement_set_new(const double *axes,
                                                 size_t n,
                                                 const double *sigmas,
                                                 struct SteeringMeasurementSet **out);

// Builds a named preset (`octahedral`, `measured`, `worst-no-message`, `worst-one-bit`).
//
// # Safety
// `name` must be a NUL-terminated string and `out` writable.
enum SteeringStatus steering_measurement_set_preset(const char *name,
                                                    struct SteeringMeasurementSet **out);

// Releases a set. NULL is ignored.
//
// # Safety
// `set` must come from this library and not be used afterwards.
void steering_measurement_set_free(struct SteeringMeasurementSet *set);

// Number of settings, or 0 for NULL.
//
// # Safety
// `set` must be NULL or a live handle.
size_t steering_measurement_set_len(const struct SteeringMeasurementSet *set);

// Copies the unit axes into `out` as `3 * len` row-major doubles.
//
// # Safety
// `out` must have room for `capacity` doubles.
enum SteeringStatus steering_measurement_set_axes(const struct SteeringMeasurementSet *set,
                                                  double *out,
                                                  size_t capacity);

// Precomputes every cheating strategy for alphabet size `d`.
//
// # Safety
// `set` must be a live handle and `out` writable.
enum SteeringStatus steering_strategy_table_build(const struct SteeringMeasurementSet *set,
                                                  size_t d,
                                                  struct SteeringStrategyTable **out);

// Releases a table. NULL is ignored.
//
// # Safety
// `table` must come from this library and not be used afterwards.
void steering_strategy_table_free(struct SteeringStrategyTable *table);

// Bound `h(r)` and the index of a maximizing strategy.
//
// `out_strategy` may be NULL.
//
// # Safety
// `table` must be a live handle; `out_h` writable.
enum SteeringStatus steering_strategy_table_bound(const struct SteeringStrategyTable *table,
                                                  double r,
                                                  double *out_h,
                                                  uint64_t *out_strategy);

// Optimal gain parameter at efficiency `eta`.
//
// # Safety
// `table` must be a live handle; `out` writable.
enum SteeringStatus steering_strategy_table_optimal_gain(const struct SteeringStrategyTable *table,
                                                         double eta,
                                                         struct SteeringGainOptimum *out);

// One-shot `h(r)` for alphabet size `d`; `out_strategy` may be NULL.
//
// # Safety
// `set` must be a live handle; `out_h` writable.
enum SteeringStatus steering_bound(const struct SteeringMeasurementSet *set,
                                   size_t d,
                                   double r,
                                   double *out_h,
                                   uint64_t *out_strategy);

// One-shot optimal gain for alphabet size `d` at efficiency `eta`.
//
// # Safety
// `set` must be a live handle; `out` writable.
enum SteeringStatus steering_optimal_gain(const struct SteeringMeasurementSet *set,
                                          size_t d,
                                          double eta,
                                          struct SteeringGainOptimum *out);

// Largest quantum violation `1 − h(0)` for alphabet size `d`.
//
// # Safety
// `set` must be a live handle; `out` writable.
enum SteeringStatus steering_tsirelson(const struct SteeringMeasurementSet *set,
                                       size_t d,
                                       double *out);

// Worst-case rotation of `set` within `k_sigma` standard deviations.
//
// `d = 1` uses the no-message construction, `d = 2` the one-bit one.
//
// # Safety
// `set` must be a live handle; `out` writable. The new set must be freed.
enum SteeringStatus steering_worst_case(const struct SteeringMeasurementSet *set,
                                        size_t d,
                                        double k_sigma,
                                        struct SteeringMeasurementSet **out);

// Minimum influence speed implied by a spacelike separation, in m/s and in
// units of `c`. Either output may be NULL.
//
// # Safety
// Non-null outputs must be writable.
enum SteeringStatus steering_ftl_speed(double distance_m,
                                       double time_s,
                                       double *out_speed,
                                       double *out_over_c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEERING_H */
