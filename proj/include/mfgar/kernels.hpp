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

#include <cstdint>
#include <vector>

#include "mfgar/tensor.hpp"

namespace mfgar {

/// k(x, x') = amplitude * exp(-sum_k (x_k - x'_k)^2 / lengthscale_k^2).
/// Stored as logs so every value is an unconstrained optimizer coordinate.
struct ArdKernelParams {
  double log_amplitude = 0.0;
  Vector log_lengthscales;

  double amplitude() const;
  Vector lengthscales() const;
  std::size_t dims() const { return static_cast<std::size_t>(log_lengthscales.size()); }

  static ArdKernelParams isotropic(std::size_t dims, double amplitude, double lengthscale);
};

/// Cross Gram matrix, rows of x1 against rows of x2.
Matrix ard_gram(const ArdKernelParams& params, const Matrix& x1, const Matrix& x2);

struct ArdGradient {
  double log_amplitude = 0.0;
  Vector log_lengthscales;
};

/// Chain rule from dL/dK (`grad_gram`, same shape as K) to the kernel's log-parameters.
/// `gram` must be ard_gram(params, x1, x2).
ArdGradient ard_gram_param_grad(const ArdKernelParams& params, const Matrix& x1,
                                const Matrix& x2, const Matrix& gram, const Matrix& grad_gram);

/// dL/dX for K = ard_gram(params, X, X), given dL/dK.
Matrix ard_gram_input_grad(const ArdKernelParams& params, const Matrix& x, const Matrix& gram,
                           const Matrix& grad_gram);

/// Latent coordinates for one output mode: d_m rows, r columns, plus the kernel
/// that turns them into the mode covariance S_m. The amplitude of that kernel is
/// held at 1; the input kernel carries the overall scale.
struct LatentMode {
  Matrix features;
  ArdKernelParams kernel;
};

struct LatentFeatures {
  std::vector<LatentMode> modes;

  std::size_t order() const { return modes.size(); }
};

/// Seeded N(0, 0.01) features with rank min(d_m, max_rank) and unit lengthscales.
LatentFeatures init_latent_features(const Shape& output_shape, std::uint64_t seed,
                                    std::size_t max_rank = 2);

/// S_m = k_m(V_m, V_m). Size-1 modes give [[1]].
Matrix output_cov(const LatentFeatures& features, std::size_t mode);

struct LaplacePrior {
  double scale = 0.0;
};

/// -scale * sum |v| over every latent entry (log density up to a constant).
double laplace_log_prior(const LatentFeatures& features, const LaplacePrior& prior);

}  // namespace mfgar
