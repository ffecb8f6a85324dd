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

// CIGAR: two-level GAR with identity output covariances (S = I at both levels)
// and column-orthonormal weight factors (W_m^T W_m = I).
//
// Under these constraints the projection of the high-fidelity data onto the
// range of W and its orthogonal complement are independent. Every output
// column of the range part shares one N-sized Gaussian problem with the low
// level, and the complement is an identity-output GP over the high inputs, so
// training and prediction only solve input-space (N x N) systems and never
// form or factorize an output covariance.

#include <memory>
#include <vector>

#include "mfgar/gar.hpp"

namespace mfgar {

struct CigarState;

struct CigarModel {
  TgpParams low;       // input kernel + noise; identity outputs
  TgpParams residual;  // input kernel + noise; identity outputs
  TuckerWeights weights;
  std::vector<FidelityLevel> levels;  // [low, high] as modelled (centered)
  std::vector<DenseTensor> offsets;   // per-level mean added back; empty = zero
  double match_tol = 0.0;
  SubsetPlan plan;
  std::shared_ptr<const CigarState> state;

  Shape output_shape(std::size_t level) const { return levels.at(level).outputs.trailing_shape(); }
};

/// Nearest column-orthonormal factor (polar factor of the thin SVD) for every
/// weight factor. Throws kNumerical for a rank-deficient factor.
TuckerWeights orthonormalize(const TuckerWeights& weights);

/// Largest |W_m^T W_m - I| entry over all factors.
double orthogonality_error(const TuckerWeights& weights);

/// Identity-output kernel parameters (no latent features).
TgpParams identity_params(const ArdKernelParams& kernel, double log_noise);

/// Recomputes the plan and caches.
void cigar_prepare(CigarModel& model);

CigarModel make_cigar_model(const MultiFidelityDataset& data, TgpParams low, TgpParams residual,
                            TuckerWeights weights, bool center = false, double match_tol = 0.0);

struct CigarNll {
  double low = 0.0;   // low level alone
  double high = 0.0;  // high level given the low level
  double total = 0.0;
};

CigarNll cigar_nll(const CigarModel& model);

/// Mean = W (range posterior mean) + complement posterior mean; variance per
/// entry = v_range diag(W W^T) + v_complement (1 - diag(W W^T)) + noise.
PosteriorField cigar_predict(const CigarModel& model, const Vector& x_star);

struct CigarFitConfig {
  OptimConfig optim;
  bool center = true;
  double match_tol = 0.0;
};

struct CigarFitResult {
  CigarModel model;
  std::vector<OptimResult> stages;    // [0] low level, [1] high level
  double max_orthogonality_error = 0.0;  // over every evaluated weight iterate
};

/// Staged fit: low-level kernel and noise first, then the weights (projected
/// back to orthonormal columns after every step), residual kernel and noise.
CigarFitResult cigar_fit(const MultiFidelityDataset& data, const CigarFitConfig& config);

/// Training objectives. Stage kLow: the low-level NLL over its kernel and noise.
/// Stage kHigh: the high-level NLL given the low level over weights, residual
/// kernel and noise.
class CigarObjective {
 public:
  enum class Stage { kLow, kHigh };
  CigarObjective(const CigarModel& model, Stage stage);

  Vector pack(const CigarModel& model) const;
  void unpack(const Vector& x, CigarModel& model) const;
  double operator()(const Vector& x, Vector* grad) const;
  /// Projects the weight block of x to orthonormal columns (kHigh only).
  void project(Vector& x) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

}  // namespace mfgar
