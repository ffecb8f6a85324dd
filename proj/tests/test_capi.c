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

/* Exercises the C interface from C: lifecycle, error reporting, fit/predict,
 * persistence and a tiny benchmark sweep. Exits nonzero on the first failure. */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mfgar/mfgar.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static void count_rows(const mfgar_benchmark_row* row, void* user) {
  size_t* n = (size_t*)user;
  if (row->model && strlen(row->model) > 0) ++*n;
}

static mfgar_dataset* tiny_dataset(int aligned) {
  mfgar_dataset_options o;
  mfgar_dataset* d = NULL;
  mfgar_dataset_options_init(&o);
  o.pde = "heat";
  o.mesh_variant = "main";
  o.n_low = 6;
  o.n_high = 3;
  o.n_test = 4;
  o.aligned = aligned;
  o.seed = 11;
  EXPECT(mfgar_dataset_generate(&o, &d) == MFGAR_OK);
  return d;
}

int main(void) {
  const char* dir = "capi_test_data";
  mfgar_dataset* d = tiny_dataset(0);
  mfgar_dataset* back = NULL;
  mfgar_model* m = NULL;
  mfgar_model* loaded = NULL;
  mfgar_fit_options fit;
  size_t n = 0, dim = 0, out = 0, i;
  double rmse = 0, nll = 0, rmse2 = 0, nll2 = 0;
  double x[3] = {0.5, 0.5, 0.5};
  double *mean, *var, *mean2;

  EXPECT(strcmp(mfgar_version(), "") != 0);
  EXPECT(d != NULL);
  EXPECT(mfgar_dataset_level_size(d, 0, &n) == MFGAR_OK && n == 6);
  EXPECT(mfgar_dataset_level_size(d, 1, &n) == MFGAR_OK && n == 3);
  EXPECT(mfgar_dataset_test_size(d, &n) == MFGAR_OK && n == 4);
  EXPECT(mfgar_dataset_input_dim(d, &dim) == MFGAR_OK && dim == 3);

  /* Errors carry a status and a message. */
  EXPECT(mfgar_dataset_level_size(d, 5, &n) == MFGAR_ERR_INVALID_ARGUMENT);
  EXPECT(strstr(mfgar_last_error(), "out of range") != NULL);
  EXPECT(mfgar_model_fit("nar", d, 0, NULL, &m) == MFGAR_ERR_INVALID_ARGUMENT && m == NULL);
  EXPECT(mfgar_model_fit("ar", d, 0, NULL, &m) == MFGAR_ERR_INVALID_ARGUMENT);
  EXPECT(strstr(mfgar_last_error(), "aligned") != NULL);
  EXPECT(mfgar_dataset_read("/nonexistent/dir", &back) == MFGAR_ERR_IO && back == NULL);
  EXPECT(mfgar_dataset_write(NULL, dir) == MFGAR_ERR_INVALID_ARGUMENT);
  EXPECT(strcmp(mfgar_status_name(MFGAR_ERR_IO), "i/o error") == 0);

  /* Datasets round-trip through disk. */
  EXPECT(mfgar_dataset_write(d, dir) == MFGAR_OK);
  EXPECT(mfgar_dataset_read(dir, &back) == MFGAR_OK);
  EXPECT(mfgar_dataset_level_size(back, 1, &n) == MFGAR_OK && n == 3);

  mfgar_fit_options_init(&fit);
  fit.max_iters = 10;
  EXPECT(mfgar_model_fit("gar", d, 2, &fit, &m) == MFGAR_OK);
  EXPECT(strcmp(mfgar_model_kind(m), "gar") == 0);
  EXPECT(mfgar_model_output_size(m, &out) == MFGAR_OK && out > 0);
  EXPECT(mfgar_model_training_nll(m, &nll) == MFGAR_OK && isfinite(nll));
  EXPECT(strncmp(mfgar_model_fit_trace_csv(m), "stage,iter,objective,grad_norm\n0,", 33) == 0);

  mean = (double*)malloc(out * sizeof(double));
  var = (double*)malloc(out * sizeof(double));
  mean2 = (double*)malloc(out * sizeof(double));
  EXPECT(mfgar_model_predict(m, x, 3, mean, var, out) == MFGAR_OK);
  for (i = 0; i < out; ++i) EXPECT(var[i] > 0.0);
  EXPECT(mfgar_model_predict(m, x, 3, mean, var, out - 1) == MFGAR_ERR_SHAPE_MISMATCH);
  EXPECT(mfgar_model_evaluate(m, back, &rmse, &nll) == MFGAR_OK && rmse > 0.0);

  /* Saved models predict identically. */
  EXPECT(mfgar_model_save(m, "capi_test_model.json") == MFGAR_OK);
  EXPECT(mfgar_model_load("capi_test_model.json", &loaded) == MFGAR_OK);
  EXPECT(mfgar_model_predict(loaded, x, 3, mean2, NULL, out) == MFGAR_OK);
  EXPECT(mfgar_model_predict(m, x, 3, mean, NULL, out) == MFGAR_OK);
  EXPECT(memcmp(mean, mean2, out * sizeof(double)) == 0);
  EXPECT(mfgar_model_evaluate(loaded, back, &rmse2, &nll2) == MFGAR_OK);
  EXPECT(rmse2 == rmse && nll2 == nll);
  EXPECT(strcmp(mfgar_model_fit_trace_csv(loaded), "stage,iter,objective,grad_norm\n") == 0);
  EXPECT(mfgar_model_load("/nonexistent/model.json", &loaded) == MFGAR_ERR_IO);

  {
    mfgar_benchmark_options b;
    mfgar_benchmark* bench = NULL;
    mfgar_benchmark_row row;
    size_t sweep[2] = {1, 2};
    size_t seen = 0;
    mfgar_benchmark_options_init(&b);
    b.pde = "poisson";
    b.models = "gar,ar";
    b.n_low = 4;
    b.n_high_sweep = sweep;
    b.n_sweep = 2;
    b.n_test = 3;
    b.repeats = 1;
    b.fit.max_iters = 5;
    EXPECT(mfgar_benchmark_run(&b, count_rows, &seen, &bench) == MFGAR_OK);
    EXPECT(mfgar_benchmark_row_count(bench) == 4 && seen == 4);
    EXPECT(mfgar_benchmark_failures(bench) == 2); /* ar on unaligned data */
    EXPECT(mfgar_benchmark_get_row(bench, 2, &row) == MFGAR_OK);
    EXPECT(strcmp(row.model, "ar") == 0 && row.ok == 0 && strstr(row.error, "aligned") != NULL);
    EXPECT(mfgar_benchmark_get_row(bench, 9, &row) == MFGAR_ERR_INVALID_ARGUMENT);
    EXPECT(strncmp(mfgar_benchmark_csv(bench), "row_type,", 9) == 0);
    mfgar_benchmark_free(bench);

    b.n_sweep = 0;
    bench = NULL;
    EXPECT(mfgar_benchmark_run(&b, NULL, NULL, &bench) == MFGAR_ERR_INVALID_ARGUMENT && bench == NULL);
  }

  free(mean);
  free(var);
  free(mean2);
  mfgar_model_free(loaded);
  mfgar_model_free(m);
  mfgar_dataset_free(back);
  mfgar_dataset_free(d);
  mfgar_dataset_free(NULL);
  remove("capi_test_model.json");

  if (failures) fprintf(stderr, "%d expectation(s) failed\n", failures);
  else printf("C interface: all checks passed\n");
  return failures ? 1 : 0;
}
