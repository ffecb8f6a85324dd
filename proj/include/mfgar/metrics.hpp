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

// Evaluation metrics over a set of predicted test fields.

#include <string>
#include <vector>

#include "mfgar/hogp.hpp"
#include "mfgar/tensor.hpp"

namespace mfgar {

/// Root mean squared error over every entry of every test field.
/// Throws kShapeMismatch when the sets or field shapes disagree and
/// kInvalidArgument when they are empty.
double rmse(const std::vector<DenseTensor>& means, const std::vector<DenseTensor>& truths);
double rmse(const std::vector<PosteriorField>& predictions, const std::vector<DenseTensor>& truths);

/// Mean per-entry Gaussian negative log likelihood without the constant term:
/// 0.5 log v + (y - mu)^2 / (2 v), using the diagonal predictive variance
/// floored at 1e-12.
double nll_metric(const std::vector<PosteriorField>& predictions,
                  const std::vector<DenseTensor>& truths);

/// Entrywise sqrt of the mean squared error over the test samples.
DenseTensor rmse_error_field(const std::vector<DenseTensor>& means,
                             const std::vector<DenseTensor>& truths);

/// Samples of a stacked (N, d_1..d_M) tensor as N fields.
std::vector<DenseTensor> split_samples(const DenseTensor& stacked);

struct EvalReport {
  std::string model_kind;
  std::string dataset;
  std::size_t n_test = 0;
  double rmse = 0.0;
  double nll = 0.0;
  std::vector<double> per_sample_rmse;
};

EvalReport evaluate(const std::vector<PosteriorField>& predictions,
                    const std::vector<DenseTensor>& truths, const std::string& model_kind,
                    const std::string& dataset);

/// "model,dataset,n_test,rmse,nll"
std::string report_csv_header();
std::string to_csv_row(const EvalReport& report);
std::string to_json(const EvalReport& report);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

}  // namespace mfgar
