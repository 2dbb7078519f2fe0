#ifndef ADAPTIVE_REPLAY_H
#define ADAPTIVE_REPLAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmrStatus {
  AMR_STATUS_OK = 0,
  AMR_STATUS_NULL_POINTER = 1,
  // Bad configuration or argument values.
  AMR_STATUS_INVALID_ARGUMENT = 2,
  // A dataset or manifest file could not be parsed.
  AMR_STATUS_LOAD = 3,
  // Non-finite loss or divergence during training.
  AMR_STATUS_NUMERIC = 4,
  AMR_STATUS_IO = 5,
  AMR_STATUS_BUFFER_TOO_SMALL = 6,
  AMR_STATUS_INTERNAL = 7,
} AmrStatus;

// Hidden-layer nonlinearity codes for [`amr_model_new`].
enum AmrActivation
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  AMR_ACTIVATION_TANH = 0,
  AMR_ACTIVATION_RELU = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum AmrActivation AmrActivation;
#else
typedef uint32_t AmrActivation;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Output head codes for [`amr_model_new`].
enum AmrHead
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  AMR_HEAD_REGRESSION = 0,
  AMR_HEAD_CLASSIFICATION = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum AmrHead AmrHead;
#else
typedef uint32_t AmrHead;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Opaque bandit handle.
typedef struct AmrBandit AmrBandit;

// Opaque MLP handle.
typedef struct AmrModel AmrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *amr_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *amr_version(void);

// Creates a randomly initialised MLP. `layer_sizes` lists the input
// dimension followed by each layer's width; `activation` and `head` take
// [`AmrActivation`] and [`AmrHead`] codes.
//
// # Safety
// `layer_sizes` must point to `n_sizes` readable values and `out` must be
// writable.
enum AmrStatus amr_model_new(const size_t *layer_sizes,
                             size_t n_sizes,
                             uint32_t activation,
                             uint32_t head,
                             uint64_t seed,
                             struct AmrModel **out);

// # Safety
// `model` must come from [`amr_model_new`] and not be used afterwards. NULL is ignored.
void amr_model_free(struct AmrModel *model);

// Number of trainable parameters, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t amr_model_num_params(const struct AmrModel *model);

// # Safety
// `model` must be NULL or a live handle.
size_t amr_model_input_dim(const struct AmrModel *model);

// # Safety
// `model` must be NULL or a live handle.
size_t amr_model_output_dim(const struct AmrModel *model);

// Raw network outputs (logits for classification) into `out`.
//
// # Safety
// `features` must hold `n_features` values and `out` must have room for `out_len`.
enum AmrStatus amr_model_forward(const struct AmrModel *model,
                                 const double *features,
                                 size_t n_features,
                                 double *out,
                                 size_t out_len);

// Mean squared error of one regression example.
//
// # Safety
// Pointers must cover the given lengths; `out_loss` must be writable.
enum AmrStatus amr_model_regression_loss(const struct AmrModel *model,
                                         const double *features,
                                         size_t n_features,
                                         const double *target,
                                         size_t n_target,
                                         double *out_loss);

// Cross-entropy of one classification example with label `class`.
//
// # Safety
// `features` must hold `n_features` values; `out_loss` must be writable.
enum AmrStatus amr_model_class_loss(const struct AmrModel *model,
                                    const double *features,
                                    size_t n_features,
                                    size_t class_,
                                    double *out_loss);

// Bandit over `k` clusters with zero initial means.
//
// # Safety
// `out` must be writable.
enum AmrStatus amr_bandit_new(size_t k, double beta, double temperature, struct AmrBandit **out);

// # Safety
// `bandit` must come from [`amr_bandit_new`] and not be used afterwards. NULL is ignored.
void amr_bandit_free(struct AmrBandit *bandit);

// One moving-average step with this iteration's per-cluster probe means.
//
// # Safety
// `probe_means` must hold `k` values.
enum AmrStatus amr_bandit_update(struct AmrBandit *bandit, const double *probe_means, size_t k);

// Current per-cluster means.
//
// # Safety
// `out` must have room for `out_len` values.
enum AmrStatus amr_bandit_means(const struct AmrBandit *bandit, double *out, size_t out_len);

// Replay distribution over clusters (tempered softmax of the means).
//
// # Safety
// `out` must have room for `out_len` values.
enum AmrStatus amr_bandit_distribution(const struct AmrBandit *bandit, double *out, size_t out_len);

// Same as `amr run <config>`: trains the configured strategy on every seed
// and writes result files to the output directory.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum AmrStatus amr_run(const char *config_path);

// Same as `amr compare <config>`. When `out_table_json` is not NULL it
// receives the table rows as a JSON array; release it with
// [`amr_string_free`].
//
// # Safety
// `config_path` must be a NUL-terminated string; `out_table_json` NULL or writable.
enum AmrStatus amr_compare(const char *config_path, char **out_table_json);

// # Safety
// `s` must come from this library and not be used afterwards. NULL is ignored.
void amr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAPTIVE_REPLAY_H */
