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

#include "mfgar/mfgar.h"

#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "mfgar/benchmark.hpp"
#include "mfgar/error.hpp"
#include "mfgar/hogp.hpp"
#include "mfgar/metrics.hpp"
#include "mfgar/model.hpp"
#include "mfgar/pdebench.hpp"

struct mfgar_dataset {
  mfgar::PdeDataset data;
};

struct mfgar_model {
  mfgar::FittedModel model;
  std::string kind;
  std::string trace;
};

struct mfgar_benchmark {
  mfgar::BenchmarkConfig config;
  mfgar::BenchmarkResult result;
  std::vector<std::string> kinds;
  std::string csv;
};

namespace {

thread_local std::string g_last_error;

mfgar_status to_status(mfgar::ErrorCode code) {
  switch (code) {
    case mfgar::ErrorCode::kInvalidArgument: return MFGAR_ERR_INVALID_ARGUMENT;
    case mfgar::ErrorCode::kShapeMismatch: return MFGAR_ERR_SHAPE_MISMATCH;
    case mfgar::ErrorCode::kNumerical: return MFGAR_ERR_NUMERICAL;
    case mfgar::ErrorCode::kFitFailure: return MFGAR_ERR_FIT_FAILURE;
    case mfgar::ErrorCode::kIo: return MFGAR_ERR_IO;
    case mfgar::ErrorCode::kUnsupported: return MFGAR_ERR_UNSUPPORTED;
  }
  return MFGAR_ERR_INTERNAL;
}

/// Runs fn, translating exceptions into a status and the thread's last error.
template <class Fn>
mfgar_status guarded(Fn&& fn) {
  try {
    fn();
    return MFGAR_OK;
  } catch (const mfgar::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MFGAR_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MFGAR_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MFGAR_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  mfgar::require(p != nullptr, mfgar::ErrorCode::kInvalidArgument, std::string(what) + " must not be null");
}

std::string trace_csv(const mfgar::FittedModel& m) {
  std::string out = "stage,iter,objective,grad_norm\n";
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (const auto& e : m.stages[s].trace) {
      out += std::to_string(s) + "," + std::to_string(e.iter) + "," + mfgar::format_double(e.objective) + "," +
             mfgar::format_double(e.grad_norm) + "\n";
    }
  }
  return out;
}

std::string or_default(const char* s, const char* fallback) { return s && *s ? s : fallback; }

mfgar::PdeSpec make_spec(const char* pde, const char* variant) {
  return mfgar::default_spec(mfgar::parse_pde_kind(or_default(pde, "poisson")),
                             mfgar::parse_mesh_variant(or_default(variant, "main")));
}

mfgar::ModelFitConfig make_fit(const mfgar_fit_options* o) {
  mfgar_fit_options d;
  mfgar_fit_options_init(&d);
  if (!o) o = &d;
  mfgar::ModelFitConfig c;
  c.optim.max_iters = o->max_iters;
  c.optim.step = o->step;
  c.optim.tol = o->tol;
  c.optim.seed = o->seed;
  c.latent_rank = o->latent_rank;
  c.prior.scale = o->laplace_scale;
  c.center = o->center != 0;
  return c;
}

}  // namespace

extern "C" {

const char* mfgar_version(void) { return "0.1.0"; }

const char* mfgar_last_error(void) { return g_last_error.c_str(); }

const char* mfgar_status_name(mfgar_status status) {
  switch (status) {
    case MFGAR_OK: return "ok";
    case MFGAR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MFGAR_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case MFGAR_ERR_NUMERICAL: return "numerical failure";
    case MFGAR_ERR_FIT_FAILURE: return "fit failure";
    case MFGAR_ERR_IO: return "i/o error";
    case MFGAR_ERR_UNSUPPORTED: return "unsupported";
    case MFGAR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void mfgar_dataset_options_init(mfgar_dataset_options* o) {
  if (!o) return;
  const mfgar::DatasetConfig d;
  *o = mfgar_dataset_options{};
  o->pde = "poisson";
  o->mesh_variant = "main";
  o->n_low = d.n_low;
  o->n_high = d.n_high;
  o->n_test = d.n_test;
  o->sampler = "sobol";
  o->structure = "subset";
  o->aligned = d.aligned ? 1 : 0;
  o->seed = d.seed;
  o->workers = 1;
}

mfgar_status mfgar_dataset_generate(const mfgar_dataset_options* o, mfgar_dataset** out) {
  return guarded([&] {
    need(o, "options");
    need(out, "out");
    *out = nullptr;
    mfgar::DatasetConfig c;
    c.spec = make_spec(o->pde, o->mesh_variant);
    c.n_low = o->n_low;
    c.n_high = o->n_high;
    c.n_test = o->n_test;
    c.sampler = mfgar::parse_sampler(or_default(o->sampler, "sobol"));
    c.structure = mfgar::parse_structure(or_default(o->structure, "subset"));
    c.aligned = o->aligned != 0;
    c.seed = o->seed;
    auto handle = std::make_unique<mfgar_dataset>();
    handle->data = mfgar::make_dataset(c, o->workers == 0 ? 1 : o->workers);
    *out = handle.release();
  });
}

mfgar_status mfgar_dataset_write(const mfgar_dataset* dataset, const char* dir) {
  return guarded([&] {
    need(dataset, "dataset");
    need(dir, "dir");
    mfgar::write_dataset(dataset->data, dir);
  });
}

mfgar_status mfgar_dataset_read(const char* dir, mfgar_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    auto handle = std::make_unique<mfgar_dataset>();
    handle->data = mfgar::read_dataset(dir);
    *out = handle.release();
  });
}

mfgar_status mfgar_dataset_level_size(const mfgar_dataset* dataset, size_t level, size_t* n) {
  return guarded([&] {
    need(dataset, "dataset");
    need(n, "n");
    const auto& levels = dataset->data.train.levels;
    mfgar::require(level < levels.size(), mfgar::ErrorCode::kInvalidArgument,
                   "level " + std::to_string(level) + " out of range");
    *n = static_cast<size_t>(levels[level].inputs.rows());
  });
}

mfgar_status mfgar_dataset_test_size(const mfgar_dataset* dataset, size_t* n) {
  return guarded([&] {
    need(dataset, "dataset");
    need(n, "n");
    *n = static_cast<size_t>(dataset->data.test_inputs.rows());
  });
}

mfgar_status mfgar_dataset_input_dim(const mfgar_dataset* dataset, size_t* dim) {
  return guarded([&] {
    need(dataset, "dataset");
    need(dim, "dim");
    *dim = dataset->data.train.input_dim();
  });
}

void mfgar_dataset_free(mfgar_dataset* dataset) { delete dataset; }

void mfgar_fit_options_init(mfgar_fit_options* o) {
  if (!o) return;
  const mfgar::ModelFitConfig d;
  *o = mfgar_fit_options{};
  o->max_iters = d.optim.max_iters;
  o->step = d.optim.step;
  o->tol = d.optim.tol;
  o->seed = d.optim.seed;
  o->latent_rank = d.latent_rank;
  o->laplace_scale = d.prior.scale;
  o->center = d.center ? 1 : 0;
}

mfgar_status mfgar_model_fit(const char* kind, const mfgar_dataset* dataset, size_t n_high,
                             const mfgar_fit_options* options, mfgar_model** out) {
  return guarded([&] {
    need(kind, "kind");
    need(dataset, "dataset");
    need(out, "out");
    *out = nullptr;
    const mfgar::ModelKind k = mfgar::parse_model_kind(kind);
    const auto& train = dataset->data.train;
    auto handle = std::make_unique<mfgar_model>();
    handle->model = mfgar::fit_model(
        k, n_high == 0 ? train : mfgar::high_prefix(train, n_high), make_fit(options));
    handle->kind = mfgar::to_string(k);
    handle->trace = trace_csv(handle->model);
    *out = handle.release();
  });
}

mfgar_status mfgar_model_save(const mfgar_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    mfgar::require(static_cast<bool>(f), mfgar::ErrorCode::kIo, std::string("cannot write '") + path + "'");
    f << mfgar::model_to_json(model->model);
    mfgar::require(static_cast<bool>(f), mfgar::ErrorCode::kIo, std::string("failed writing '") + path + "'");
  });
}

mfgar_status mfgar_model_load(const char* path, mfgar_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    std::ifstream f(path, std::ios::binary);
    mfgar::require(static_cast<bool>(f), mfgar::ErrorCode::kIo, std::string("cannot read '") + path + "'");
    std::ostringstream text;
    text << f.rdbuf();
    auto handle = std::make_unique<mfgar_model>();
    handle->model = mfgar::model_from_json(text.str());
    handle->kind = mfgar::to_string(handle->model.kind);
    handle->trace = trace_csv(handle->model);
    *out = handle.release();
  });
}

const char* mfgar_model_kind(const mfgar_model* model) { return model ? model->kind.c_str() : ""; }

mfgar_status mfgar_model_output_size(const mfgar_model* model, size_t* n) {
  return guarded([&] {
    need(model, "model");
    need(n, "n");
    size_t total = 1;
    for (auto d : mfgar::output_shape(model->model)) total *= d;
    *n = total;
  });
}

mfgar_status mfgar_model_training_nll(const mfgar_model* model, double* nll) {
  return guarded([&] {
    need(model, "model");
    need(nll, "nll");
    *nll = mfgar::training_nll(model->model);
  });
}

mfgar_status mfgar_model_predict(const mfgar_model* model, const double* x, size_t dim, double* mean,
                                 double* variance, size_t n) {
  return guarded([&] {
    need(model, "model");
    need(x, "x");
    mfgar::Vector xs = Eigen::Map<const mfgar::Vector>(x, static_cast<Eigen::Index>(dim));
    const mfgar::PosteriorField p = mfgar::predict(model->model, xs);
    const auto m = p.mean.as_vector();
    const auto v = p.variance_diag.as_vector();
    mfgar::require(n == static_cast<size_t>(m.size()), mfgar::ErrorCode::kShapeMismatch,
                   "output buffers hold " + std::to_string(n) + " values, the field has " +
                       std::to_string(m.size()));
    for (size_t i = 0; i < n; ++i) {
      if (mean) mean[i] = m[static_cast<Eigen::Index>(i)];
      if (variance) variance[i] = v[static_cast<Eigen::Index>(i)];
    }
  });
}

mfgar_status mfgar_model_evaluate(const mfgar_model* model, const mfgar_dataset* dataset, double* rmse,
                                  double* nll) {
  return guarded([&] {
    need(model, "model");
    need(dataset, "dataset");
    const auto& d = dataset->data;
    const mfgar::EvalReport r = mfgar::evaluate(mfgar::predict_all(model->model, d.test_inputs),
                                                mfgar::split_samples(d.test_outputs), model->kind,
                                                mfgar::to_string(d.config.spec.kind));
    if (rmse) *rmse = r.rmse;
    if (nll) *nll = r.nll;
  });
}

const char* mfgar_model_fit_trace_csv(const mfgar_model* model) { return model ? model->trace.c_str() : ""; }

void mfgar_model_free(mfgar_model* model) { delete model; }

uint64_t mfgar_output_factorization_count(void) { return mfgar::output_factorization_count(); }

void mfgar_benchmark_options_init(mfgar_benchmark_options* o) {
  if (!o) return;
  static const size_t kSweep[] = {4, 8, 16, 32};
  const mfgar::BenchmarkConfig d;
  *o = mfgar_benchmark_options{};
  o->pde = "poisson";
  o->mesh_variant = "main";
  o->models = "gar";
  o->n_low = d.n_low;
  o->n_high_sweep = kSweep;
  o->n_sweep = 4;
  o->n_test = d.n_test;
  o->sampler = "sobol";
  o->structure = "subset";
  o->aligned = d.aligned ? 1 : 0;
  o->repeats = d.repeats;
  o->seed = d.seed;
  o->workers = 1;
  o->out_dir = nullptr;
  o->save_models = d.save_models ? 1 : 0;
  mfgar_fit_options_init(&o->fit);
}

mfgar_status mfgar_benchmark_run(const mfgar_benchmark_options* o, mfgar_row_callback callback, void* user,
                                 mfgar_benchmark** out) {
  return guarded([&] {
    need(o, "options");
    need(out, "out");
    *out = nullptr;
    mfgar::BenchmarkConfig c;
    c.spec = make_spec(o->pde, o->mesh_variant);
    c.models.clear();
    std::stringstream models(or_default(o->models, "gar"));
    for (std::string item; std::getline(models, item, ',');) {
      if (!item.empty()) c.models.push_back(mfgar::parse_model_kind(item));
    }
    c.n_low = o->n_low;
    mfgar::require(o->n_sweep == 0 || o->n_high_sweep != nullptr, mfgar::ErrorCode::kInvalidArgument,
                   "n_high_sweep must not be null");
    c.n_high_sweep.assign(o->n_high_sweep, o->n_high_sweep + o->n_sweep);
    c.n_test = o->n_test;
    c.sampler = mfgar::parse_sampler(or_default(o->sampler, "sobol"));
    c.structure = mfgar::parse_structure(or_default(o->structure, "subset"));
    c.aligned = o->aligned != 0;
    c.repeats = o->repeats;
    c.seed = o->seed;
    c.workers = o->workers == 0 ? 1 : o->workers;
    c.out_dir = o->out_dir ? o->out_dir : "";
    c.save_models = o->save_models != 0;
    c.fit = make_fit(&o->fit);

    mfgar::RowSink sink;
    if (callback) {
      sink = [&](const mfgar::BenchmarkRow& r) {
        const std::string kind = mfgar::to_string(r.model);
        const mfgar_benchmark_row row{kind.c_str(), r.n_high, r.repeat, r.seed, r.ok ? 1 : 0, r.rmse, r.nll,
                                      r.wall_time, r.error.c_str(), r.dataset.c_str(), r.model_file.c_str()};
        callback(&row, user);
      };
    }
    auto handle = std::make_unique<mfgar_benchmark>();
    handle->result = mfgar::run_benchmark(c, sink);
    for (const auto& r : handle->result.rows) handle->kinds.push_back(mfgar::to_string(r.model));
    handle->csv = mfgar::benchmark_csv(c, handle->result);
    handle->config = std::move(c);
    *out = handle.release();
  });
}

size_t mfgar_benchmark_row_count(const mfgar_benchmark* bench) { return bench ? bench->result.rows.size() : 0; }

mfgar_status mfgar_benchmark_get_row(const mfgar_benchmark* bench, size_t index, mfgar_benchmark_row* row) {
  return guarded([&] {
    need(bench, "bench");
    need(row, "row");
    mfgar::require(index < bench->result.rows.size(), mfgar::ErrorCode::kInvalidArgument,
                   "row " + std::to_string(index) + " out of range");
    const auto& r = bench->result.rows[index];
    *row = mfgar_benchmark_row{bench->kinds[index].c_str(), r.n_high, r.repeat, r.seed, r.ok ? 1 : 0,
                               r.rmse, r.nll, r.wall_time, r.error.c_str(), r.dataset.c_str(),
                               r.model_file.c_str()};
  });
}

size_t mfgar_benchmark_failures(const mfgar_benchmark* bench) { return bench ? bench->result.failures() : 0; }

const char* mfgar_benchmark_csv(const mfgar_benchmark* bench) { return bench ? bench->csv.c_str() : ""; }

void mfgar_benchmark_free(mfgar_benchmark* bench) { delete bench; }

}  // extern "C"
