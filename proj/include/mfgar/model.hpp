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

// One handle type over every fitted surrogate: GAR, its AR special case,
// CIGAR, and a high-fidelity-only HOGP baseline. Fitting, prediction and a
// versioned JSON document (parameters plus the training data they condition
// on) are dispatched on the kind.

#include <string>
#include <variant>
#include <vector>

#include "mfgar/cigar.hpp"
#include "mfgar/gar.hpp"
#include "mfgar/hogp.hpp"

namespace mfgar {

enum class ModelKind { kGar, kCigar, kAr, kHogp };

std::string to_string(ModelKind kind);
/// Accepts gar, cigar, ar, hogp (alias hogp-high-only).
ModelKind parse_model_kind(const std::string& name);

struct ModelFitConfig {
  OptimConfig optim;
  LaplacePrior prior;
  std::size_t latent_rank = 2;
  double match_tol = 0.0;
  bool center = true;
};

struct FittedModel {
  ModelKind kind = ModelKind::kGar;
  std::variant<GarModel, CigarModel, TgpModel> model;  // ar is a GarModel
  std::vector<OptimResult> stages;                      // empty after loading
};

/// gar/ar/cigar use every level; hogp is fitted to the top level alone.
FittedModel fit_model(ModelKind kind, const MultiFidelityDataset& data, const ModelFitConfig& config);

/// Top-level prediction in observation space (offset added, noise included).
PosteriorField predict(const FittedModel& model, const Vector& x_star);
std::vector<PosteriorField> predict_all(const FittedModel& model, const Matrix& inputs);

/// Negative log-likelihood of the training data under the fitted parameters.
double training_nll(const FittedModel& model);

/// Field shape of the top-level prediction.
Shape output_shape(const FittedModel& model);

std::string model_to_json(const FittedModel& model);
/// Throws kIo for unreadable or inconsistent documents.
FittedModel model_from_json(const std::string& text);

}  // namespace mfgar
