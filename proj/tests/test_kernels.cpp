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

#include "doctest.h"
#include "mfgar/error.hpp"
#include "mfgar/kernels.hpp"
#include "oracles.hpp"

using namespace mfgar;

TEST_CASE("ARD Gram matrix matches the loop oracle") {
  std::mt19937_64 rng(21);
  const Matrix a = oracle::random_matrix(rng, 6, 3);
  const Matrix b = oracle::random_matrix(rng, 4, 3);
  ArdKernelParams p;
  p.log_amplitude = std::log(1.7);
  p.log_lengthscales = (Vector(3) << 0.1, -0.3, 0.5).finished();
  const Matrix k = ard_gram(p, a, b);
  CHECK((k - oracle::se_gram(1.7, p.lengthscales(), a, b)).norm() < 1e-12);
  CHECK_THROWS_AS(ard_gram(p, Matrix::Zero(2, 2), b), Error);
}

TEST_CASE("kernel parameter and input gradients match finite differences") {
  std::mt19937_64 rng(22);
  const Matrix x = oracle::random_matrix(rng, 5, 2);
  const Matrix gk = oracle::random_matrix(rng, 5, 5);  // arbitrary dL/dK
  ArdKernelParams p = ArdKernelParams::isotropic(2, 1.3, 0.8);
  p.log_lengthscales(1) = 0.2;
  auto loss_params = [&](const Vector& v) {
    ArdKernelParams q = p;
    q.log_amplitude = v(0);
    q.log_lengthscales = v.tail(2);
    return (ard_gram(q, x, x).array() * gk.array()).sum();
  };
  Vector v(3);
  v << p.log_amplitude, p.log_lengthscales;
  const ArdGradient g = ard_gram_param_grad(p, x, x, ard_gram(p, x, x), gk);
  Vector gv(3);
  gv << g.log_amplitude, g.log_lengthscales;
  CHECK(oracle::max_rel_err(gv, oracle::fd_grad(loss_params, v)) < 1e-6);

  auto loss_inputs = [&](const Vector& flat) {
    const Matrix xx = Eigen::Map<const Matrix>(flat.data(), 5, 2);
    return (ard_gram(p, xx, xx).array() * gk.array()).sum();
  };
  const Vector xf = Eigen::Map<const Vector>(x.data(), x.size());
  const Matrix gx = ard_gram_input_grad(p, x, ard_gram(p, x, x), gk);
  const Vector gxf = Eigen::Map<const Vector>(gx.data(), gx.size());
  CHECK(oracle::max_rel_err(gxf, oracle::fd_grad(loss_inputs, xf)) < 1e-6);
}

TEST_CASE("latent features are seeded and give valid covariances") {
  const LatentFeatures a = init_latent_features({4, 1, 3}, 7);
  const LatentFeatures b = init_latent_features({4, 1, 3}, 7);
  REQUIRE(a.order() == 3);
  CHECK(a.modes[0].features == b.modes[0].features);
  CHECK(a.modes[0].features.cols() == 2);
  CHECK(a.modes[1].features.cols() == 1);
  CHECK(output_cov(a, 1)(0, 0) == 1.0);
  const Matrix s = output_cov(a, 2);
  CHECK(s.rows() == 3);
  CHECK((s - s.transpose()).norm() == 0.0);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  LaplacePrior prior{2.0};
  double l1 = 0;
  for (const auto& m : a.modes) l1 += m.features.cwiseAbs().sum();
  CHECK(laplace_log_prior(a, prior) == doctest::Approx(-2.0 * l1));
  CHECK_THROWS_AS(laplace_log_prior(a, LaplacePrior{-1.0}), Error);
}
