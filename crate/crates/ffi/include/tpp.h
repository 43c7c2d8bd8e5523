#ifndef TPP_H
#define TPP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes. Zero is success.
typedef enum TppStatus {
  TPP_STATUS_OK = 0,
  // A required pointer argument was null.
  TPP_STATUS_NULL_POINTER = 1,
  // An argument is out of range, or the handle does not support the call.
  TPP_STATUS_INVALID_ARGUMENT = 2,
  TPP_STATUS_IO = 3,
  TPP_STATUS_PARSE = 4,
  TPP_STATUS_CONFIG = 5,
  // The data violates an input contract (ordering, type range, emptiness).
  TPP_STATUS_VALIDATION = 6,
  // A computation left its numeric domain.
  TPP_STATUS_NUMERIC = 7,
  TPP_STATUS_DIVERGENCE = 8,
  TPP_STATUS_UNSTABLE = 9,
  // A bug: the library panicked. The handle arguments are still valid.
  TPP_STATUS_PANIC = 10,
} TppStatus;

// A set of event sequences with 1-based marks.
typedef struct TppDataset TppDataset;

// A loaded checkpoint.
typedef struct TppModel TppModel;

// Metrics over a dataset. MAPE values are fractions.
typedef struct TppMetrics {
  // Mean time NLL per event with a positive interval.
  double nll;
  double mape_interval;
  double mape_printed;
  double acc1;
  double acc3;
  size_t n_events;
} TppMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *tpp_version(void);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *tpp_last_error(void);

// Reads a JSON-lines dataset (`timestamps`, `types` per line). Sequences
// longer than the library limit are truncated.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TppStatus tpp_dataset_load(const char *path, size_t num_types, struct TppDataset **out);

// Builds a dataset from flat arrays: sequence `s` owns the next
// `lengths[s]` entries of `times` and `marks` (marks 1-based).
//
// # Safety
// `lengths` must hold `n_sequences` values, and `times` and `marks` their
// sum; `out` must be writable.
enum TppStatus tpp_dataset_from_arrays(const double *times,
                                       const uint32_t *marks,
                                       const size_t *lengths,
                                       size_t n_sequences,
                                       size_t num_types,
                                       struct TppDataset **out);

// Simulates `n_sequences` sequences of the default two-type Hawkes process
// on `[0, horizon]`; sequence `k` uses random stream `k` of `seed`.
//
// # Safety
// `out` must be writable.
enum TppStatus tpp_dataset_synth_hawkes(size_t n_sequences,
                                        uint64_t seed,
                                        double horizon,
                                        struct TppDataset **out);

// Number of sequences; 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t tpp_dataset_len(const struct TppDataset *ds);

// Total number of events; 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t tpp_dataset_num_events(const struct TppDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void tpp_dataset_free(struct TppDataset *ds);

// Loads a checkpoint written by `tpp train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TppStatus tpp_model_load(const char *path, struct TppModel **out);

// Number of event types; 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t tpp_model_num_types(const struct TppModel *model);

// 1 when the model was trained in Granger mode, else 0.
//
// # Safety
// `model` must be null or a live model handle.
int32_t tpp_model_is_granger(const struct TppModel *model);

// NLL, both MAPE variants and top-1 / top-3 accuracy of `model` on `ds`.
// Times are rescaled with the checkpoint's normalization constant first.
// `points` sets the quadrature resolution of next-time predictions.
//
// # Safety
// Handles must be live; `out` must be writable.
enum TppStatus tpp_model_evaluate(const struct TppModel *model,
                                  const struct TppDataset *ds,
                                  size_t points,
                                  struct TppMetrics *out);

// Copies the `M × M` edge probabilities (row = target, column = source)
// into `out`, which must hold `capacity >= M * M` values.
//
// # Safety
// `model` must be live; `out` must hold `capacity` doubles.
enum TppStatus tpp_model_edge_probs(const struct TppModel *model, double *out, size_t capacity);

// Largest sensitivity of the `target` intensity to timestamps of earlier
// `source` events in sequence `index` of `ds`, under the model's
// evaluation graph. Types are 1-based. Zero when the graph closes the edge.
//
// # Safety
// Handles must be live; `out` must be writable.
enum TppStatus tpp_model_certificate(const struct TppModel *model,
                                     const struct TppDataset *ds,
                                     size_t index,
                                     size_t source,
                                     size_t target,
                                     double *out);

// # Safety
// `model` must be null or a handle not yet freed.
void tpp_model_free(struct TppModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TPP_H */
