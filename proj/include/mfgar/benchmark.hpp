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

#pragma once

// Sweep over the number of high-fidelity training samples: for every repeat a
// dataset is generated with its own seed, and every model is fitted to each
// prefix of the high-fidelity samples and scored on the shared test set.

#include <functional>
#include <string>
#include <vector>

#include "mfgar/model.hpp"
#include "mfgar/pdebench.hpp"

namespace mfgar {

struct BenchmarkConfig {
  PdeSpec spec = default_spec(PdeKind::kPoisson);
  std::vector<ModelKind> models{ModelKind::kGar};
  std::size_t n_low = 32;
  std::vector<std::size_t> n_high_sweep{4, 8, 16, 32};
  std::size_t n_test = 128;
  Structure structure = Structure::kSubset;
  bool aligned = false;
  Sampler sampler = Sampler::kSobol;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;  // repeat r uses dataset seed `seed + r`
  ModelFitConfig fit;
  std::size_t workers = 1;
  /// When non-empty, datasets, fitted models and tables are written here.
  std::string out_dir;
  bool save_models = true;

  /// Sweep values in 1..n_low, at least one model, repeats >= 1.
  void validate() const;
};

struct BenchmarkRow {
  ModelKind model = ModelKind::kGar;
  std::size_t n_high = 0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double rmse = 0.0;
  double nll = 0.0;
  std::string error;       // why the fit failed, empty when ok
  std::string dataset;     // dataset directory, relative to out_dir
  std::string model_file;  // model document, relative to out_dir
  double wall_time = 0.0;  // seconds for fit + prediction
};

struct BenchmarkSummary {
  ModelKind model = ModelKind::kGar;
  std::size_t n_high = 0;
  std::size_t n_ok = 0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;  // sample standard deviation over successful repeats
  double mean_nll = 0.0;
  double std_nll = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;  // ordered by model, n_high, repeat
  std::vector<BenchmarkSummary> summary;
  std::size_t failures() const;
  const BenchmarkSummary& at(ModelKind model, std::size_t n_high) const;
};

using RowSink = std::function<void(const BenchmarkRow&)>;

/// Fit failures become flagged rows; the sweep continues. The sink, if given,
/// sees each row as it completes (calls are serialized). Output files when
/// out_dir is set: benchmark.csv, timings.csv, summary.dat, config.json,
/// datasets/repeat_<r>/ and models/<model>_nh<n>_r<r>.json.
BenchmarkResult run_benchmark(const BenchmarkConfig& config, const RowSink& sink = {});

/// Deterministic table: one run row per (model, n_high, repeat), then one
/// mean row and one std row per (model, n_high). No timings.
std::string benchmark_csv(const BenchmarkConfig& config, const BenchmarkResult& result);
/// model,n_high,repeat,wall_time_s
std::string timings_csv(const BenchmarkResult& result);
/// Gnuplot data: one index block per model with n_high, mean/std RMSE and NLL.
std::string gnuplot_table(const BenchmarkResult& result);
std::string config_json(const BenchmarkConfig& config);

}  // namespace mfgar
