#ifndef BOOTSC_H
#define BOOTSC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BOOTSC_OK 0

#define BOOTSC_ERR_NULL 1

#define BOOTSC_ERR_INVALID 2

#define BOOTSC_ERR_NUMERICAL 3

#define BOOTSC_ERR_IO 4

#define BOOTSC_ERR_CHECKPOINT 5

#define BOOTSC_ERR_PANIC 6

#define BOOTSC_ORTH_NONE 0

#define BOOTSC_ORTH_QR 1

#define BOOTSC_ORTH_PROCRUSTES 2

/*
 Trained model loaded from a checkpoint.
 */
typedef struct BootscModel BootscModel;

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into this library on the same thread.
 */
const char *bootsc_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *bootsc_version(void);

/*
 Loads a checkpoint written by `bootsc train`. On success `*out` owns a
 model that must be released with [`bootsc_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t bootsc_model_load(const char *path, struct BootscModel **out);

/*
 Releases a model; null is ignored.

 # Safety
 `model` must come from [`bootsc_model_load`] and not be used afterwards.
 */
void bootsc_model_free(struct BootscModel *model);

/*
 # Safety
 `model` must be a live handle.
 */
size_t bootsc_model_input_dim(const struct BootscModel *model);

/*
 # Safety
 `model` must be a live handle.
 */
size_t bootsc_model_embed_dim(const struct BootscModel *model);

/*
 # Safety
 `model` must be a live handle.
 */
size_t bootsc_model_num_clusters(const struct BootscModel *model);

/*
 Cluster assignment for `n` samples of width `d` (must equal the model's
 input width). Writes `n` labels and, when `embeddings` is non-null, the
 `n × embed_dim` unit-norm embeddings.

 # Safety
 Buffers must have the stated sizes.
 */
int32_t bootsc_model_predict(const struct BootscModel *model,
                             const double *x,
                             size_t n,
                             size_t d,
                             uint32_t *labels,
                             double *embeddings);

/*
 Fixed-iteration Sinkhorn on an `m × n` score matrix; writes the
 `m × n` plan (rows sum to 1).

 # Safety
 `logits` and `plan` must hold `m·n` doubles.
 */
int32_t bootsc_sinkhorn(const double *logits,
                        size_t m,
                        size_t n,
                        double eta,
                        size_t iterations,
                        double *plan);

/*
 Orthogonalizes an `n × d` matrix with one of the `BOOTSC_ORTH_*` modes;
 writes the result and, when non-null, `‖Z − Z_new‖_F`.

 # Safety
 `z` and `z_new` must hold `n·d` doubles.
 */
int32_t bootsc_orthogonalize(const double *z,
                             size_t n,
                             size_t d,
                             int32_t mode,
                             double *z_new,
                             double *inconsistency);

/*
 Clustering metrics of two label vectors of length `n`.

 # Safety
 Label arrays must hold `n` entries; outputs must be valid pointers.
 */
int32_t bootsc_evaluate(const uint32_t *y_true,
                        const uint32_t *y_pred,
                        size_t n,
                        double *nmi,
                        double *acc,
                        double *ari);

#endif  /* BOOTSC_H */
