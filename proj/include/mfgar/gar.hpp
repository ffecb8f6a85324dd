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

// Generalized autoregression (GAR) over tensor-variate GPs.
//
// Level 0 is a TGP; every higher level i+1 is
//     g^{i+1}(x) = g^i(x) x_1 W_1 ... x_M W_M + f^r(x) + noise,
// where g^i is the observed (noisy) process of level i and f^r an independent
// TGP. When every high-fidelity input also appears at the level below (subset
// data) the likelihood separates into one TGP term per level; otherwise the
// low-fidelity values at the unmatched inputs are integrated out in closed
// form. Predictions target the noise-free chain s^{i+1} = W s^i + f^r plus the
// top level's observation noise.

#include <memory>
#include <string>
#include <vector>

#include "mfgar/hogp.hpp"
#include "mfgar/tensor.hpp"

namespace mfgar {

struct FidelityLevel {
  Matrix inputs;        // N x l
  DenseTensor outputs;  // (N, d_1..d_M)
};

struct MultiFidelityDataset {
  std::vector<FidelityLevel> levels;  // lowest fidelity first

  std::size_t num_levels() const { return levels.size(); }
  std::size_t input_dim() const;
  /// Row/sample agreement per level, one input dimension, non-increasing
  /// sample counts, and a common output order.
  void validate() const;
};

/// Pads every level's outputs with trailing size-1 modes to the largest order.
MultiFidelityDataset pad_dataset_modes(const MultiFidelityDataset& data);

/// Correspondence between the samples of two adjacent levels.
struct SubsetPlan {
  std::vector<std::size_t> matched_high;    // high rows that have a low twin
  std::vector<std::size_t> matched_low;     // the twin's row in the low level
  std::vector<std::size_t> unmatched_high;  // high rows without a twin

  bool is_subset() const { return unmatched_high.empty(); }
  std::size_t num_high() const { return matched_high.size() + unmatched_high.size(); }
};

/// Matches every high row to a low row at distance <= tol (exact equality when
/// tol == 0). Throws when a high row matches more than one low row.
SubsetPlan build_subset_plan(const Matrix& low_inputs, const Matrix& high_inputs,
                             double tol = 0.0);
/// Plan between levels `level - 1` and `level`.
SubsetPlan build_subset_plan(const MultiFidelityDataset& data, std::size_t level,
                             double tol = 0.0);

struct GarTransition {
  TuckerWeights weights;  // factor m: d^{i+1}_m x d^i_m
  TgpParams residual;     // kernel, output covariances and noise of f^r
  SubsetPlan plan;
};

/// Cached quantities for one transition.
struct TransitionState {
  bool subset = true;
  double nll = 0.0;
  /// Residual TGP over the high-level inputs; its outputs are the (expected)
  /// residual Y^{i+1} - W g^i(X^{i+1}).
  TgpModel residual;
  // Imaginary set (non-subset only).
  Matrix hat_inputs;    // unmatched high inputs
  Matrix hat_mean;      // N_hat x d^i, posterior mean of g^i there
  Matrix hat_cov_chol;  // Cholesky factor of that posterior covariance
  Matrix post_factor;   // L with L L^T = posterior covariance given level i+1 too
  Vector post_shift;    // posterior mean shift of the imaginary values
};

struct GarState {
  TgpModel base;
  std::vector<TransitionState> transitions;
};

struct GarModel {
  std::string kind = "gar";                 // "gar" or "ar"
  TgpParams base;
  std::vector<FidelityLevel> levels;        // training data as modelled (centered)
  std::vector<DenseTensor> offsets;         // per-level mean added back; empty = zero
  std::vector<GarTransition> transitions;   // transitions[i]: level i -> i + 1
  double match_tol = 0.0;
  std::size_t imaginary_cap = 4096;         // max (unmatched count) x (low field size)
  /// Evaluate every transition with the marginalizing algebra, even subset ones.
  bool always_marginalize = false;
  std::shared_ptr<const GarState> state;

  std::size_t num_levels() const { return levels.size(); }
  Shape output_shape(std::size_t level) const { return levels.at(level).outputs.trailing_shape(); }
};

/// Recomputes plans and caches after any change to parameters or data.
void gar_prepare(GarModel& model);

/// Assembles a model from raw data and given parameters (no fitting).
/// With center == true each level is centered by its per-entry mean.
GarModel make_gar_model(const MultiFidelityDataset& data, TgpParams base,
                        std::vector<GarTransition> transitions, bool center = false,
                        double match_tol = 0.0);

struct GarNll {
  double total = 0.0;
  std::vector<double> per_level;  // [0] level-0 TGP, [i] level i given levels < i
};

/// Structured negative log-likelihood of all levels.
GarNll gar_nll(const GarModel& model);

/// The same quantity from the explicit joint covariance of every observation
/// (validation path). Throws kUnsupported when the stacked size exceeds cap.
double gar_joint_nll_dense(const GarModel& model, std::size_t cap = 400);

/// Prediction at the top level.
PosteriorField gar_predict(const GarModel& model, const Vector& x_star);
/// Prediction at any level, given the data of that level and the ones below.
PosteriorField gar_predict_level(const GarModel& model, std::size_t level, const Vector& x_star);
/// Dense conditional Gaussian of the same prediction (validation path).
PosteriorField gar_predict_dense(const GarModel& model, const Vector& x_star,
                                 std::size_t cap = 400);

/// Joint posterior of level `level`'s process at several inputs given all data
/// up to that level; noisy flags select the observed process over the
/// noise-free chain. Mean is centered (offset not added).
JointPosterior gar_level_posterior(const GarModel& model, std::size_t level,
                                   const Matrix& queries, const std::vector<char>& noisy);

enum class WeightMode {
  kFull,    // every entry of every W_m is trained
  kScalar,  // W_1 = rho I, other W_m = I (AR)
  kFixed,   // weights held at their initial value
};

struct GarFitConfig {
  OptimConfig optim;
  LaplacePrior prior;
  bool center = true;
  std::size_t latent_rank = 2;
  bool share_features = true;  // residual reuses the level below's latent features when aligned
  double match_tol = 0.0;
  WeightMode weights = WeightMode::kFull;
  std::size_t imaginary_cap = 4096;
};

struct GarFitResult {
  GarModel model;
  std::vector<OptimResult> stages;  // [0] level 0, then one per transition
};

/// Identity when sizes agree, otherwise ones on the main diagonal.
TuckerWeights init_weights(const Shape& low, const Shape& high);

/// Level-by-level fit: the level-0 TGP first, then each transition's weights and
/// residual with the levels below frozen.
GarFitResult gar_fit_recursive(const MultiFidelityDataset& data, const GarFitConfig& config);
/// Same, but requires subset structure at every transition.
GarFitResult gar_fit_subset(const MultiFidelityDataset& data, const GarFitConfig& config);
/// AR: a single scalar weight on aligned outputs.
GarFitResult ar_baseline_fit(const MultiFidelityDataset& data, GarFitConfig config);

/// Training objective of one transition with the levels below frozen: the
/// negative log-likelihood of level t+1 given levels <= t, plus the Laplace
/// penalty on trainable residual features.
class TransitionObjective {
 public:
  TransitionObjective(const GarModel& model, std::size_t transition, WeightMode weights,
                      TgpTrainMask mask, LaplacePrior prior = {});

  Vector pack(const GarTransition& t) const;
  void unpack(const Vector& x, GarTransition& t) const;
  double operator()(const Vector& x, Vector* grad) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

}  // namespace mfgar
