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

#include "mfgar/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mfgar/error.hpp"

namespace mfgar {

double ArdKernelParams::amplitude() const { return std::exp(log_amplitude); }

Vector ArdKernelParams::lengthscales() const { return log_lengthscales.array().exp(); }

ArdKernelParams ArdKernelParams::isotropic(std::size_t dims, double amplitude, double lengthscale) {
  require(amplitude > 0 && lengthscale > 0, ErrorCode::kInvalidArgument,
          "kernel amplitude and lengthscale must be positive");
  ArdKernelParams p;
  p.log_amplitude = std::log(amplitude);
  p.log_lengthscales = Vector::Constant(static_cast<Eigen::Index>(dims), std::log(lengthscale));
  return p;
}

namespace {

void check_params(const ArdKernelParams& params, const Matrix& x1, const Matrix& x2) {
  require(std::isfinite(params.log_amplitude) && params.log_lengthscales.allFinite(),
          ErrorCode::kNumerical, "kernel parameters are not finite");
  require(static_cast<std::size_t>(x1.cols()) == params.dims() &&
              static_cast<std::size_t>(x2.cols()) == params.dims(),
          ErrorCode::kShapeMismatch,
          "input dimension does not match the number of lengthscales (" +
              std::to_string(params.dims()) + ")");
}

}  // namespace

Matrix ard_gram(const ArdKernelParams& params, const Matrix& x1, const Matrix& x2) {
  check_params(params, x1, x2);
  const Vector inv_ls2 = (-2.0 * params.log_lengthscales).array().exp();
  const double amp = params.amplitude();
  Matrix k(x1.rows(), x2.rows());
  for (Eigen::Index i = 0; i < x1.rows(); ++i) {
    for (Eigen::Index j = 0; j < x2.rows(); ++j) {
      double r2 = 0.0;
      for (Eigen::Index c = 0; c < x1.cols(); ++c) {
        const double diff = x1(i, c) - x2(j, c);
        r2 += diff * diff * inv_ls2(c);
      }
      k(i, j) = amp * std::exp(-r2);
    }
  }
  return k;
}

ArdGradient ard_gram_param_grad(const ArdKernelParams& params, const Matrix& x1,
                                const Matrix& x2, const Matrix& gram, const Matrix& grad_gram) {
  check_params(params, x1, x2);
  const Vector inv_ls2 = (-2.0 * params.log_lengthscales).array().exp();
  ArdGradient g;
  g.log_amplitude = (gram.array() * grad_gram.array()).sum();
  g.log_lengthscales = Vector::Zero(static_cast<Eigen::Index>(params.dims()));
  // dK_ij / dlog(l_c) = K_ij * 2 (x_ic - x_jc)^2 / l_c^2
  for (Eigen::Index i = 0; i < x1.rows(); ++i) {
    for (Eigen::Index j = 0; j < x2.rows(); ++j) {
      const double w = gram(i, j) * grad_gram(i, j);
      if (w == 0.0) continue;
      for (Eigen::Index c = 0; c < x1.cols(); ++c) {
        const double diff = x1(i, c) - x2(j, c);
        g.log_lengthscales(c) += w * 2.0 * diff * diff * inv_ls2(c);
      }
    }
  }
  return g;
}

Matrix ard_gram_input_grad(const ArdKernelParams& params, const Matrix& x, const Matrix& gram,
                           const Matrix& grad_gram) {
  check_params(params, x, x);
  const Vector inv_ls2 = (-2.0 * params.log_lengthscales).array().exp();
  Matrix g = Matrix::Zero(x.rows(), x.cols());
  // x_i appears in row i and column i of K.
  const Matrix sym = grad_gram + grad_gram.transpose();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      if (i == j) continue;
      const double w = sym(i, j) * gram(i, j);
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        g(i, c) += -2.0 * w * (x(i, c) - x(j, c)) * inv_ls2(c);
      }
    }
  }
  return g;
}

LatentFeatures init_latent_features(const Shape& output_shape, std::uint64_t seed,
                                    std::size_t max_rank) {
  require(max_rank >= 1, ErrorCode::kInvalidArgument, "latent rank must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentFeatures lf;
  for (std::size_t d : output_shape) {
    const std::size_t r = std::min(d, max_rank);
    LatentMode mode;
    mode.features = Matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(r));
    for (Eigen::Index i = 0; i < mode.features.rows(); ++i)
      for (Eigen::Index j = 0; j < mode.features.cols(); ++j) mode.features(i, j) = 0.1 * normal(rng);
    mode.kernel = ArdKernelParams::isotropic(r, 1.0, 1.0);
    lf.modes.push_back(std::move(mode));
  }
  return lf;
}

Matrix output_cov(const LatentFeatures& features, std::size_t mode) {
  require(mode < features.order(), ErrorCode::kInvalidArgument, "output_cov: mode out of range");
  const auto& m = features.modes[mode];
  if (m.features.rows() == 1) return Matrix::Ones(1, 1);
  return ard_gram(m.kernel, m.features, m.features);
}

double laplace_log_prior(const LatentFeatures& features, const LaplacePrior& prior) {
  require(prior.scale >= 0.0, ErrorCode::kInvalidArgument, "Laplace scale must be nonnegative");
  double l1 = 0.0;
  for (const auto& m : features.modes) l1 += m.features.cwiseAbs().sum();
  return -prior.scale * l1;
}

}  // namespace mfgar
