/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef HRSNN_H
#define HRSNN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Success.
#define HRSNN_OK 0

// Invalid configuration or input (exit code 2 of the binary).
#define HRSNN_ERR_CONFIG 2

// Numerical failure (exit code 3).
#define HRSNN_ERR_NUMERIC 3

// File could not be read, written or parsed (exit code 4).
#define HRSNN_ERR_IO 4

// A required pointer was null or a string was not valid UTF-8.
#define HRSNN_ERR_ARGUMENT 5

// Internal error (a caught panic).
#define HRSNN_ERR_PANIC 6

// Opaque experiment configuration.
typedef struct HrsnnConfig HrsnnConfig;

// Opaque model: network graph plus per-neuron parameters.
typedef struct HrsnnModel HrsnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hrsnn_version(void);

// Message of the last failure on this thread, or null if the last call
// succeeded. Valid until the next call into the library on this thread.
const char *hrsnn_last_error(void);

// Default configuration (no seed set).
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
int32_t hrsnn_config_default(struct HrsnnConfig **out);

// Parse configuration text; unknown sections or keys are errors.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
int32_t hrsnn_config_parse(const char *text, struct HrsnnConfig **out);

// Load a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t hrsnn_config_load(const char *path, struct HrsnnConfig **out);

// Set the master seed.
//
// # Safety
// `cfg` must be a live handle from this library.
int32_t hrsnn_config_set_seed(struct HrsnnConfig *cfg, uint64_t seed);

// Set the task: `lorenz63`, `lorenz96`, `rossler` or `synth-class`.
//
// # Safety
// `cfg` must be a live handle and `task` a NUL-terminated string.
int32_t hrsnn_config_set_task(struct HrsnnConfig *cfg, const char *task);

// Release a configuration. Null is ignored.
//
// # Safety
// `cfg` must be null or a handle not yet freed.
void hrsnn_config_free(struct HrsnnConfig *cfg);

// Build a network and draw its neuron parameters (the `build` stage).
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer.
int32_t hrsnn_model_build(const struct HrsnnConfig *cfg, struct HrsnnModel **out);

// Load a snapshot (graph file plus its `.params.json` sidecar).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t hrsnn_model_load(const char *path, struct HrsnnModel **out);

// Save a snapshot (graph file plus its `.params.json` sidecar).
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
int32_t hrsnn_model_save(const struct HrsnnModel *model, const char *path);

// Number of neurons (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
uintptr_t hrsnn_model_n_neurons(const struct HrsnnModel *model);

// Number of synapses (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
uintptr_t hrsnn_model_n_synapses(const struct HrsnnModel *model);

// STDP-train on the configured task stream (the `train` stage); the trained
// model is a new handle.
//
// # Safety
// `model` and `cfg` must be live handles and `out` a valid pointer.
int32_t hrsnn_model_train(const struct HrsnnModel *model,
                          const struct HrsnnConfig *cfg,
                          struct HrsnnModel **out);

// Prune with the configured method (the `prune` stage); the final model is
// a new handle.
//
// # Safety
// `model` and `cfg` must be live handles and `out` a valid pointer.
int32_t hrsnn_model_prune(const struct HrsnnModel *model,
                          const struct HrsnnConfig *cfg,
                          struct HrsnnModel **out);

// Memory capacity on white noise and the mean spike count per neuron of the
// same run, with the evaluate-stage seed.
//
// # Safety
// `model` and `cfg` must be live handles; the out-pointers must be valid.
int32_t hrsnn_model_memory_capacity(const struct HrsnnModel *model,
                                    const struct HrsnnConfig *cfg,
                                    double *out_capacity,
                                    double *out_mean_spikes);

// Evaluate on the configured task (the `evaluate` stage) and return the
// report as JSON. `extended` adds capacity, efficiency and separation rank;
// `reference` (nullable) is the dense parent model for the SOP ratio.
//
// # Safety
// `model` and `cfg` must be live handles, `reference` null or a live
// handle, and `out` a valid pointer.
int32_t hrsnn_model_evaluate_json(const struct HrsnnModel *model,
                                  const struct HrsnnConfig *cfg,
                                  bool extended,
                                  const struct HrsnnModel *reference,
                                  char **out);

// Graph snapshot JSON of the model.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
int32_t hrsnn_model_snapshot_json(const struct HrsnnModel *model, char **out);

// Release a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void hrsnn_model_free(struct HrsnnModel *model);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void hrsnn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRSNN_H */
