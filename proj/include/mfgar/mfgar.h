/*
 * Copyright 2026 The mfgar Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#ifndef MFGAR_MFGAR_H
#define MFGAR_MFGAR_H

/* C interface to the multi-fidelity surrogate library.
 *
 * Objects are opaque handles created by the library and released with the
 * matching *_free function. Every fallible call returns an mfgar_status; on
 * failure, mfgar_last_error() describes the problem for the calling thread
 * until its next failing call. Strings passed in are UTF-8 and are copied;
 * strings handed out stay valid until the owning handle is freed. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MFGAR_API __declspec(dllexport)
#else
#define MFGAR_API __attribute__((visibility("default")))
#endif

typedef enum mfgar_status {
  MFGAR_OK = 0,
  MFGAR_ERR_INVALID_ARGUMENT = 1,
  MFGAR_ERR_SHAPE_MISMATCH = 2,
  MFGAR_ERR_NUMERICAL = 3,
  MFGAR_ERR_FIT_FAILURE = 4,
  MFGAR_ERR_IO = 5,
  MFGAR_ERR_UNSUPPORTED = 6,
  MFGAR_ERR_INTERNAL = 99
} mfgar_status;

typedef struct mfgar_dataset mfgar_dataset;
typedef struct mfgar_model mfgar_model;
typedef struct mfgar_benchmark mfgar_benchmark;

MFGAR_API const char* mfgar_version(void);
/* Message of the calling thread's most recent failure ("" if none). */
MFGAR_API const char* mfgar_last_error(void);
MFGAR_API const char* mfgar_status_name(mfgar_status status);

/* ---- datasets ---------------------------------------------------------- */

typedef struct mfgar_dataset_options {
  const char* pde;          /* "burgers", "poisson" or "heat" */
  const char* mesh_variant; /* "main" or "appendix" */
  size_t n_low;
  size_t n_high;
  size_t n_test;
  const char* sampler;   /* "sobol" or "uniform" */
  const char* structure; /* "subset" or "nonsubset" */
  int aligned;           /* nonzero: low outputs resampled to the record grid */
  uint64_t seed;
  size_t workers;
} mfgar_dataset_options;

MFGAR_API void mfgar_dataset_options_init(mfgar_dataset_options* options);
MFGAR_API mfgar_status mfgar_dataset_generate(const mfgar_dataset_options* options, mfgar_dataset** out);
/* Writes the manifest, tensors and input tables into dir (created if needed). */
MFGAR_API mfgar_status mfgar_dataset_write(const mfgar_dataset* dataset, const char* dir);
MFGAR_API mfgar_status mfgar_dataset_read(const char* dir, mfgar_dataset** out);
/* Sample count of a training level (0 = low, 1 = high). */
MFGAR_API mfgar_status mfgar_dataset_level_size(const mfgar_dataset* dataset, size_t level, size_t* n);
MFGAR_API mfgar_status mfgar_dataset_test_size(const mfgar_dataset* dataset, size_t* n);
MFGAR_API mfgar_status mfgar_dataset_input_dim(const mfgar_dataset* dataset, size_t* dim);
MFGAR_API void mfgar_dataset_free(mfgar_dataset* dataset);

/* ---- models ------------------------------------------------------------ */

typedef struct mfgar_fit_options {
  int max_iters;
  double step;
  double tol;
  uint64_t seed;
  size_t latent_rank;
  double laplace_scale;
  int center; /* nonzero: subtract per-level output means before fitting */
} mfgar_fit_options;

MFGAR_API void mfgar_fit_options_init(mfgar_fit_options* options);
/* kind: "gar", "cigar", "ar" or "hogp". n_high = 0 uses every high sample,
 * otherwise the first n_high. options may be NULL for defaults. */
MFGAR_API mfgar_status mfgar_model_fit(const char* kind, const mfgar_dataset* dataset, size_t n_high,
                                       const mfgar_fit_options* options, mfgar_model** out);
MFGAR_API mfgar_status mfgar_model_save(const mfgar_model* model, const char* path);
MFGAR_API mfgar_status mfgar_model_load(const char* path, mfgar_model** out);
MFGAR_API const char* mfgar_model_kind(const mfgar_model* model);
/* Number of entries in one predicted field. */
MFGAR_API mfgar_status mfgar_model_output_size(const mfgar_model* model, size_t* n);
MFGAR_API mfgar_status mfgar_model_training_nll(const mfgar_model* model, double* nll);
/* Predictive mean and marginal variance at one input (row-major field). */
MFGAR_API mfgar_status mfgar_model_predict(const mfgar_model* model, const double* x, size_t dim, double* mean,
                                           double* variance, size_t n);
/* RMSE and NLL on the dataset's test set. */
MFGAR_API mfgar_status mfgar_model_evaluate(const mfgar_model* model, const mfgar_dataset* dataset, double* rmse,
                                            double* nll);
/* Optimizer trace of the fit as CSV (stage,iter,objective,grad_norm); only
 * the header for loaded models, which carry no trace. */
MFGAR_API const char* mfgar_model_fit_trace_csv(const mfgar_model* model);
MFGAR_API void mfgar_model_free(mfgar_model* model);

/* Number of eigendecompositions of per-mode output covariances performed so
 * far in this process (all threads). */
MFGAR_API uint64_t mfgar_output_factorization_count(void);

/* ---- benchmark sweeps -------------------------------------------------- */

typedef struct mfgar_benchmark_options {
  const char* pde;
  const char* mesh_variant;
  const char* models; /* comma-separated model kinds */
  size_t n_low;
  const size_t* n_high_sweep;
  size_t n_sweep;
  size_t n_test;
  const char* sampler;
  const char* structure;
  int aligned;
  size_t repeats;
  uint64_t seed;
  size_t workers;
  const char* out_dir; /* NULL or "": nothing is written */
  int save_models;
  mfgar_fit_options fit;
} mfgar_benchmark_options;

typedef struct mfgar_benchmark_row {
  const char* model;
  size_t n_high;
  size_t repeat;
  uint64_t seed;
  int ok;
  double rmse;
  double nll;
  double wall_time;
  const char* error;
  const char* dataset;
  const char* model_file;
} mfgar_benchmark_row;

/* Called once per finished row; calls are serialized. The row's strings are
 * only valid for the duration of the call. */
typedef void (*mfgar_row_callback)(const mfgar_benchmark_row* row, void* user);

MFGAR_API void mfgar_benchmark_options_init(mfgar_benchmark_options* options);
/* Fit failures do not fail the call; they show up as rows with ok == 0. */
MFGAR_API mfgar_status mfgar_benchmark_run(const mfgar_benchmark_options* options, mfgar_row_callback callback,
                                           void* user, mfgar_benchmark** out);
MFGAR_API size_t mfgar_benchmark_row_count(const mfgar_benchmark* bench);
MFGAR_API mfgar_status mfgar_benchmark_get_row(const mfgar_benchmark* bench, size_t index, mfgar_benchmark_row* row);
MFGAR_API size_t mfgar_benchmark_failures(const mfgar_benchmark* bench);
MFGAR_API const char* mfgar_benchmark_csv(const mfgar_benchmark* bench);
MFGAR_API void mfgar_benchmark_free(mfgar_benchmark* bench);

#ifdef __cplusplus
}
#endif

#endif /* MFGAR_MFGAR_H */
