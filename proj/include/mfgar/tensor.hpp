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

// Dense tensors and the Tucker / Kronecker / Kruskal operations used by every
// likelihood and posterior in the library.
//
// Layout convention: row-major, the LAST mode varies fastest. For a tensor of
// shape (n_1, ..., n_K) the linear index of (i_1, ..., i_K) is
//   ((i_1 * n_2 + i_2) * n_3 + i_3) ...
// With this ordering the Kronecker factors appear in mode order:
//   vec(T x_1 A_1 ... x_K A_K) = (A_1 (x) A_2 (x) ... (x) A_K) vec(T)
// and a sample-major tensor (N, d_1, ..., d_M) has covariance K (x) S_1 ...

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mfgar {

using Shape = std::vector<std::size_t>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t shape_size(const Shape& shape);

class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Shape shape, double fill = 0.0);
  DenseTensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  Eigen::Map<const Vector> as_vector() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Vector> as_vector() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  /// Rows = first mode, columns = product of the remaining modes.
  Eigen::Map<const RowMatrix> as_matrix() const;
  Eigen::Map<RowMatrix> as_matrix();

  /// Shape with the first mode dropped (the per-sample field shape).
  Shape trailing_shape() const;

  bool operator==(const DenseTensor& other) const = default;

 private:
  std::size_t linear_index(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

std::vector<double> vec(const DenseTensor& tensor);
DenseTensor unvec(const Shape& shape, std::span<const double> values);

/// Tensor-matrix product at `mode`: out[.., j, ..] = sum_k w(j, k) T[.., k, ..].
DenseTensor mode_product(const DenseTensor& tensor, const Matrix& w, std::size_t mode);

/// Group of per-mode linear maps, factor m is d_m^h x d_m^l.
struct TuckerWeights {
  std::vector<Matrix> factors;

  std::size_t size() const noexcept { return factors.size(); }
  /// Dense Kronecker product W_1 (x) ... (x) W_M.
  Matrix kron() const;
};

/// Applies factor m at tensor mode m + mode_offset, for every factor.
DenseTensor tucker_apply(const DenseTensor& tensor, const TuckerWeights& weights,
                         std::size_t mode_offset = 0);

/// Same as tucker_apply with the transposed factors.
DenseTensor tucker_apply_transposed(const DenseTensor& tensor, const TuckerWeights& weights,
                                    std::size_t mode_offset = 0);

/// Gradient with respect to every factor W_m of sum_n <u_n, v_n x_1 W_1 ... x_M W_M>,
/// where u and v are sample-major (n, high field) and (n, low field) tensors.
/// Equivalently the per-factor pullback of G = sum_n vec(u_n) vec(v_n)^T taken
/// against W_1 (x) ... (x) W_M.
std::vector<Matrix> tucker_weight_grad(const DenseTensor& u, const DenseTensor& v,
                                       const TuckerWeights& weights);

/// Mode-m unfolding: d_m rows, remaining modes (in order) flattened as columns.
Matrix unfold(const DenseTensor& tensor, std::size_t mode);
DenseTensor fold(const Matrix& unfolded, std::size_t mode, const Shape& shape);

Matrix kron(const Matrix& a, const Matrix& b);
Matrix kron_all(std::span<const Matrix> factors);

/// (F_1 (x) ... (x) F_M) X for a matrix X, without forming the Kronecker product.
Matrix kron_apply(std::span<const Matrix> factors, const Matrix& x);

/// Kruskal (outer) product of vectors: out[i_1..i_K] = prod_k v_k[i_k].
DenseTensor outer(std::span<const Vector> vectors);

/// Keeps the listed first-mode slices, in the given order (E^T applied at mode 1).
DenseTensor select_first_mode(const DenseTensor& tensor, std::span<const std::size_t> rows);

/// Stacks along the first mode; trailing shapes must match.
DenseTensor concat_first_mode(const DenseTensor& a, const DenseTensor& b);

/// Pads with trailing size-1 modes up to `order`.
DenseTensor pad_modes(const DenseTensor& tensor, std::size_t order);

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator-(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator*(double s, const DenseTensor& a);
DenseTensor hadamard(const DenseTensor& a, const DenseTensor& b);

}  // namespace mfgar
