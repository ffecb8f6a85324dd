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

// Tensor-variate GP (HOGP): vec(Y) ~ N(0, K (x) S_1 (x) ... (x) S_M + noise * I)
// for a sample-major output tensor Y of shape (N, d_1, ..., d_M).

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "mfgar/kernels.hpp"
#include "mfgar/kron.hpp"
#include "mfgar/optim.hpp"
#include "mfgar/tensor.hpp"

namespace mfgar {

/// Floor on every noise variance; the eigenvalues of the joint covariance are
/// therefore never below this value when inverted.
inline constexpr double kJitter = 1e-6;

struct TgpParams {
  ArdKernelParams input_kernel;
  double log_noise = 0.0;  // noise variance = kJitter + exp(log_noise)
  LatentFeatures features;
  bool identity_outputs = false;  // S_m = I for every mode, no latent features

  double noise() const;
  std::size_t output_order() const { return features.order(); }
  /// S_m for each output mode.
  std::vector<Matrix> output_covs(const Shape& output_shape) const;
};

double noise_from_log(double log_noise);
double log_from_noise(double noise);

/// Factorized covariance of a fitted TGP, valid for the params it was built from.
struct TgpCache {
  EigenFactors eigs;        // factor 0 = K(X, X), then S_1..S_M
  std::vector<Matrix> covs; // S_1..S_M
  DenseTensor alpha;        // (K (x) S + noise I)^{-1} vec(Y), shaped like Y
};

struct TgpModel {
  TgpParams params;
  Matrix inputs;        // N x l
  DenseTensor outputs;  // (N, d_1..d_M), as seen by the likelihood
  DenseTensor offset;   // per-entry mean added back at prediction; empty = zero
  std::shared_ptr<const TgpCache> cache;

  Shape output_shape() const { return outputs.trailing_shape(); }
  std::size_t num_samples() const { return static_cast<std::size_t>(inputs.rows()); }
  /// Drops the cache and replaces the parameters.
  void set_params(TgpParams p);
  /// The cache, building it if absent.
  std::shared_ptr<const TgpCache> ensure_cache() const;
};

/// Number of output-covariance eigendecompositions performed (all threads).
std::uint64_t output_factorization_count();

TgpCache build_tgp_cache(const TgpParams& params, const Matrix& inputs, const DenseTensor& outputs);

/// Eigendecomposed covariance factors for given parameters and inputs.
struct TgpFactorization {
  Matrix gram;               // K(X, X)
  std::vector<Matrix> covs;  // S_1..S_M
  EigenFactors eigs;         // factor 0 = K, then S_1..S_M
  DenseTensor denom;         // joint eigenvalues + noise, shape (N, d_1..d_M)
  double noise = 0.0;
};

TgpFactorization tgp_factorize(const TgpParams& params, const Matrix& inputs,
                               const Shape& output_shape);

/// trace weights c_k for factor k: c_k[j] = sum over entries with index j at
/// factor k of (product of the other factors' eigenvalues) / denom.
Vector trace_weights(const TgpFactorization& f, std::size_t k);

/// unfold_k(a o w_k) unfold_k(b)^T where w_k is the outer product of every
/// factor's eigenvalues except factor k (ones there). Tensors in eigen coordinates.
Matrix weighted_unfold_product(const TgpFactorization& f, std::size_t k, const DenseTensor& a,
                               const DenseTensor& b);

struct TgpGradient {
  ArdGradient input_kernel;
  double log_noise = 0.0;
  std::vector<Matrix> features;         // dL/dV_m (empty matrix for untouched modes)
  std::vector<Vector> feature_lengthscales;
  DenseTensor outputs;                  // dL/dY
};

struct TgpEvaluation {
  double nll = 0.0;
  QuadLogdet parts;
  std::optional<TgpGradient> grad;
};

/// Negative log marginal likelihood, including (N d / 2) log(2 pi), and optionally
/// its exact gradient with respect to every parameter and to Y.
TgpEvaluation tgp_evaluate(const TgpParams& params, const Matrix& inputs,
                           const DenseTensor& outputs, bool with_grad);

double tgp_nll(const TgpModel& model);

/// Chain rule from dL/dK, dL/dS_m (grad_factor[0..M]) and dL/d(noise variance)
/// to the log/latent parameterization. `outputs` is left empty.
TgpGradient tgp_chain_gradient(const TgpParams& params, const Matrix& inputs,
                               const TgpFactorization& f, const std::vector<Matrix>& grad_factor,
                               double grad_noise_variance);

/// Diagonal Gaussian over an output field.
struct PosteriorField {
  DenseTensor mean;           // output shape
  DenseTensor variance_diag;  // same shape, entries >= 0
};

/// Posterior covariance diagonal in factored form:
///   diag = coeff x_1 (B_1 .^ 2) x_2 ... x_M (B_M .^ 2)
/// i.e. the covariance is (B_1 (x) ... (x) B_M) diag(vec(coeff)) (...)^T.
struct CovTerm {
  DenseTensor coeff;
  std::vector<Matrix> basis;

  DenseTensor diag() const;
  /// Term of W C W^T.
  CovTerm mapped(const TuckerWeights& w) const;
};

/// Posterior of the noise-free latent field at x (no offset, no noise).
struct PointPosterior {
  DenseTensor mean;
  CovTerm cov;
};

PointPosterior tgp_point_posterior(const TgpModel& model, const Vector& x_star);

/// Dense joint posterior over several query points (rows of `queries`).
/// mean is |Q| x d (one field per row, row-major within the field); cov is the
/// (|Q| d) x (|Q| d) covariance with sample-major ordering. A query flagged
/// noisy refers to the observed process (latent + noise); a noisy query that
/// coincides with a training input is the observation itself.
struct JointPosterior {
  Matrix mean;
  Matrix cov;
};

JointPosterior tgp_joint_posterior(const TgpModel& model, const Matrix& queries,
                                   const std::vector<char>& noisy);

/// Index of a training row equal to x (euclidean distance <= tol), if any.
std::optional<std::size_t> find_input(const Matrix& inputs, const Vector& x, double tol = 0.0);

/// Observation-space prediction: mean + offset, diag variance + noise.
PosteriorField tgp_predict(const TgpModel& model, const Vector& x_star);

/// Which parameters an optimizer may move.
struct TgpTrainMask {
  bool input_kernel = true;
  bool noise = true;
  bool features = true;              // latent coordinates
  bool feature_lengthscales = true;
};

Vector pack_tgp(const TgpParams& params, const TgpTrainMask& mask);
void unpack_tgp(const Vector& x, TgpParams& params, const TgpTrainMask& mask,
                Eigen::Index offset = 0);
Eigen::Index packed_tgp_size(const TgpParams& params, const TgpTrainMask& mask);
Vector pack_tgp_gradient(const TgpParams& params, const TgpGradient& grad,
                         const TgpTrainMask& mask);

struct TgpFitConfig {
  OptimConfig optim;
  LaplacePrior prior;
  bool center = true;
  bool identity_outputs = false;
  std::size_t latent_rank = 2;
  /// When set, the latent coordinates are taken from here and held fixed.
  std::optional<LatentFeatures> shared_features;
};

/// Data-driven initial parameters: amplitude from the output variance,
/// lengthscales from the input ranges, small noise, seeded latent features.
TgpParams init_tgp_params(const Matrix& inputs, const DenseTensor& outputs,
                          const TgpFitConfig& config);

struct TgpFitResult {
  TgpModel model;
  OptimResult optim;
};

/// Maximum-likelihood fit of all hyperparameters (plus the Laplace penalty on
/// latent features when its scale is positive).
TgpFitResult tgp_fit(const Matrix& inputs, const DenseTensor& outputs, const TgpFitConfig& config);

/// Per-entry mean over the first mode.
DenseTensor sample_mean(const DenseTensor& y);
DenseTensor subtract_rows(const DenseTensor& y, const DenseTensor& row);

}  // namespace mfgar
