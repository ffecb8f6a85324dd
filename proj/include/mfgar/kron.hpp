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

// Eigendecomposition-structured solves against K (x) S_1 (x) ... (x) S_M + noise * I.
//
// With A_k = V_k diag(l_k) V_k^T for every factor, the joint matrix is
// P diag(l_0 o l_1 o ... o l_M) P^T with P = V_0 (x) ... (x) V_M, so the solve,
// the quadratic form and the log-determinant all reduce to Tucker products with
// the eigenvector factors and elementwise work on the Kruskal eigenvalue tensor.

#include <span>
#include <vector>

#include "mfgar/tensor.hpp"

namespace mfgar {

/// A = vectors * diag(values) * vectors^T, values sorted descending.
struct SymEig {
  Matrix vectors;
  Vector values;
};

/// Symmetric eigendecomposition. Inputs with relative asymmetry below 1e-10 are
/// symmetrized; larger asymmetry or non-finite entries throw.
SymEig sym_eig(const Matrix& a);

/// Per-factor eigensystems; factor 0 is the input-space kernel matrix.
/// Eigenvalues are clamped at zero (round-off on PSD Gram matrices).
struct EigenFactors {
  std::vector<SymEig> factors;

  Shape shape() const;
};

EigenFactors make_eigen_factors(std::span<const Matrix> matrices);

/// lambda_0 o lambda_1 o ... o lambda_M.
DenseTensor joint_eigenvalues(const EigenFactors& eigs);

/// y x_k V_k^T for every factor k.
DenseTensor to_eigenbasis(const DenseTensor& y, const EigenFactors& eigs);
/// y x_k V_k for every factor k.
DenseTensor from_eigenbasis(const DenseTensor& y, const EigenFactors& eigs);

struct QuadLogdet {
  double quad = 0.0;
  double logdet = 0.0;
};

/// vec(Y)^T (A + noise I)^{-1} vec(Y) via eta = P (Lambda + noise)^{-1/2} P^T vec(Y),
/// and log|A + noise I| = sum log(lambda_joint + noise).
QuadLogdet kron_quad_and_logdet(const EigenFactors& eigs, double noise, const DenseTensor& y);

/// (A + noise I)^{-1} vec(Y), returned with the shape of Y.
DenseTensor kron_solve(const EigenFactors& eigs, double noise, const DenseTensor& y);

}  // namespace mfgar
