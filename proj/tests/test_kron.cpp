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
#include "mfgar/kron.hpp"
#include "oracles.hpp"

using namespace mfgar;

TEST_CASE("eigendecomposition reconstructs and sorts descending") {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::random_spd(rng, 6);
  const SymEig e = sym_eig(a);
  CHECK((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a).norm() < 1e-10);
  for (Eigen::Index i = 1; i < e.values.size(); ++i) CHECK(e.values(i - 1) >= e.values(i));
  Matrix bad = a;
  bad(0, 1) += 1.0;
  CHECK_THROWS_AS(sym_eig(bad), Error);
  bad = a;
  bad(2, 2) = std::nan("");
  CHECK_THROWS_AS(sym_eig(bad), Error);
}

TEST_CASE("structured likelihood pieces match a dense Cholesky") {
  std::mt19937_64 rng(12);
  const std::vector<Matrix> mats{oracle::random_spd(rng, 5), oracle::random_spd(rng, 3),
                                 oracle::random_spd(rng, 4)};
  const EigenFactors eigs = make_eigen_factors(mats);
  CHECK(eigs.shape() == Shape{5, 3, 4});
  const DenseTensor y = oracle::random_tensor(rng, {5, 3, 4});
  const double noise = 0.37;
  const Matrix cov = oracle::kron_loops(mats) + noise * Matrix::Identity(60, 60);
  const Vector yv = oracle::flat(y);

  const QuadLogdet ql = kron_quad_and_logdet(eigs, noise, y);
  Eigen::LLT<Matrix> llt(cov);
  const double quad = yv.dot(llt.solve(yv));
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < 60; ++i) logdet += 2 * std::log(llt.matrixL()(i, i));
  CHECK(ql.quad == doctest::Approx(quad).epsilon(1e-10));
  CHECK(ql.logdet == doctest::Approx(logdet).epsilon(1e-10));

  const DenseTensor x = kron_solve(eigs, noise, y);
  CHECK((oracle::flat(x) - llt.solve(yv)).norm() < 1e-10 * yv.norm());

  CHECK_THROWS_AS(kron_quad_and_logdet(eigs, 0.0, y), Error);
}

TEST_CASE("eigenbasis rotation is orthogonal") {
  std::mt19937_64 rng(13);
  const std::vector<Matrix> mats{oracle::random_spd(rng, 4), oracle::random_spd(rng, 3)};
  const EigenFactors eigs = make_eigen_factors(mats);
  const DenseTensor y = oracle::random_tensor(rng, {4, 3});
  const DenseTensor r = to_eigenbasis(y, eigs);
  CHECK(r.as_vector().norm() == doctest::Approx(y.as_vector().norm()));
  CHECK((from_eigenbasis(r, eigs) - y).as_vector().norm() < 1e-12);
  const DenseTensor lam = joint_eigenvalues(eigs);
  CHECK(lam.at({0, 0}) ==
        doctest::Approx(eigs.factors[0].values(0) * eigs.factors[1].values(0)));
}
