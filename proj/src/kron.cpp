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

#include "mfgar/kron.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "mfgar/error.hpp"

namespace mfgar {

SymEig sym_eig(const Matrix& a) {
  require(a.rows() == a.cols(), ErrorCode::kShapeMismatch, "sym_eig: matrix is not square");
  require(a.allFinite(), ErrorCode::kNumerical, "sym_eig: non-finite entries");
  if (a.rows() == 0) return {};
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1.0);
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-10 * scale, ErrorCode::kInvalidArgument,
          "sym_eig: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  require(solver.info() == Eigen::Success, ErrorCode::kNumerical,
          "sym_eig: eigensolver did not converge");
  // Eigen returns ascending order.
  SymEig out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

Shape EigenFactors::shape() const {
  Shape s;
  for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.values.size()));
  return s;
}

EigenFactors make_eigen_factors(std::span<const Matrix> matrices) {
  EigenFactors eigs;
  eigs.factors.reserve(matrices.size());
  for (const auto& m : matrices) {
    SymEig e = sym_eig(m);
    e.values = e.values.cwiseMax(0.0);
    eigs.factors.push_back(std::move(e));
  }
  return eigs;
}

DenseTensor joint_eigenvalues(const EigenFactors& eigs) {
  std::vector<Vector> values;
  values.reserve(eigs.factors.size());
  for (const auto& f : eigs.factors) values.push_back(f.values);
  return outer(values);
}

DenseTensor to_eigenbasis(const DenseTensor& y, const EigenFactors& eigs) {
  require(y.shape() == eigs.shape(), ErrorCode::kShapeMismatch,
          "eigen factors do not match tensor shape");
  DenseTensor out = y;
  for (std::size_t k = 0; k < eigs.factors.size(); ++k) {
    out = mode_product(out, eigs.factors[k].vectors.transpose(), k);
  }
  return out;
}

DenseTensor from_eigenbasis(const DenseTensor& y, const EigenFactors& eigs) {
  require(y.shape() == eigs.shape(), ErrorCode::kShapeMismatch,
          "eigen factors do not match tensor shape");
  DenseTensor out = y;
  for (std::size_t k = 0; k < eigs.factors.size(); ++k) {
    out = mode_product(out, eigs.factors[k].vectors, k);
  }
  return out;
}

QuadLogdet kron_quad_and_logdet(const EigenFactors& eigs, double noise, const DenseTensor& y) {
  require(noise > 0.0 && std::isfinite(noise), ErrorCode::kInvalidArgument,
          "noise variance must be positive");
  const DenseTensor lambda = joint_eigenvalues(eigs);
  DenseTensor t = to_eigenbasis(y, eigs);
  QuadLogdet out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double a = lambda[i] + noise;
    t[i] /= std::sqrt(a);
    out.logdet += std::log(a);
  }
  const DenseTensor eta = from_eigenbasis(t, eigs);
  out.quad = eta.as_vector().squaredNorm();
  return out;
}

DenseTensor kron_solve(const EigenFactors& eigs, double noise, const DenseTensor& y) {
  require(noise > 0.0 && std::isfinite(noise), ErrorCode::kInvalidArgument,
          "noise variance must be positive");
  const DenseTensor lambda = joint_eigenvalues(eigs);
  DenseTensor t = to_eigenbasis(y, eigs);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] /= lambda[i] + noise;
  return from_eigenbasis(t, eigs);
}

}  // namespace mfgar
