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

#include "mfgar/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "mfgar/error.hpp"

namespace mfgar {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

std::size_t prefix_size(const Shape& s, std::size_t mode) {
  return std::accumulate(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mode),
                         std::size_t{1}, std::multiplies<>());
}

std::size_t suffix_size(const Shape& s, std::size_t mode) {
  return std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(mode) + 1, s.end(),
                         std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_size(shape_) == data_.size(), ErrorCode::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_str(shape_));
}

std::size_t DenseTensor::linear_index(std::initializer_list<std::size_t> idx) const {
  require(idx.size() == shape_.size(), ErrorCode::kShapeMismatch, "index rank mismatch");
  std::size_t lin = 0;
  std::size_t m = 0;
  for (auto i : idx) {
    require(i < shape_[m], ErrorCode::kInvalidArgument, "tensor index out of range");
    lin = lin * shape_[m] + i;
    ++m;
  }
  return lin;
}

double& DenseTensor::at(std::initializer_list<std::size_t> idx) {
  return data_[linear_index(idx)];
}

double DenseTensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[linear_index(idx)];
}

Eigen::Map<const RowMatrix> DenseTensor::as_matrix() const {
  const auto rows = shape_.empty() ? std::size_t{1} : shape_[0];
  const auto cols = rows == 0 ? std::size_t{0} : data_.size() / rows;
  return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<RowMatrix> DenseTensor::as_matrix() {
  const auto rows = shape_.empty() ? std::size_t{1} : shape_[0];
  const auto cols = rows == 0 ? std::size_t{0} : data_.size() / rows;
  return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Shape DenseTensor::trailing_shape() const {
  if (shape_.empty()) return {};
  return Shape(shape_.begin() + 1, shape_.end());
}

std::vector<double> vec(const DenseTensor& tensor) { return tensor.storage(); }

DenseTensor unvec(const Shape& shape, std::span<const double> values) {
  return DenseTensor(shape, std::vector<double>(values.begin(), values.end()));
}

DenseTensor mode_product(const DenseTensor& tensor, const Matrix& w, std::size_t mode) {
  const Shape& s = tensor.shape();
  require(mode < s.size(), ErrorCode::kShapeMismatch, "mode index out of range");
  require(static_cast<std::size_t>(w.cols()) == s[mode], ErrorCode::kShapeMismatch,
          "mode product: factor has " + std::to_string(w.cols()) + " columns but mode " +
              std::to_string(mode) + " has size " + std::to_string(s[mode]));
  const std::size_t pre = prefix_size(s, mode);
  const std::size_t post = suffix_size(s, mode);
  const std::size_t d_in = s[mode];
  const std::size_t d_out = static_cast<std::size_t>(w.rows());
  Shape out_shape = s;
  out_shape[mode] = d_out;
  DenseTensor out(out_shape);
  const RowMatrix wr = w;
  for (std::size_t p = 0; p < pre; ++p) {
    Eigen::Map<const RowMatrix> in(tensor.data().data() + p * d_in * post,
                                   static_cast<Eigen::Index>(d_in),
                                   static_cast<Eigen::Index>(post));
    Eigen::Map<RowMatrix> dst(out.data().data() + p * d_out * post,
                              static_cast<Eigen::Index>(d_out),
                              static_cast<Eigen::Index>(post));
    dst.noalias() = wr * in;
  }
  return out;
}

Matrix TuckerWeights::kron() const { return kron_all(factors); }

DenseTensor tucker_apply(const DenseTensor& tensor, const TuckerWeights& weights,
                         std::size_t mode_offset) {
  require(weights.size() + mode_offset <= tensor.order(), ErrorCode::kShapeMismatch,
          "tucker_apply: more factors than tensor modes");
  DenseTensor out = tensor;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    out = mode_product(out, weights.factors[m], m + mode_offset);
  }
  return out;
}

DenseTensor tucker_apply_transposed(const DenseTensor& tensor, const TuckerWeights& weights,
                                    std::size_t mode_offset) {
  require(weights.size() + mode_offset <= tensor.order(), ErrorCode::kShapeMismatch,
          "tucker_apply: more factors than tensor modes");
  DenseTensor out = tensor;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    out = mode_product(out, weights.factors[m].transpose(), m + mode_offset);
  }
  return out;
}

std::vector<Matrix> tucker_weight_grad(const DenseTensor& u, const DenseTensor& v,
                                       const TuckerWeights& weights) {
  require(u.order() == weights.size() + 1 && v.order() == weights.size() + 1 &&
              u.dim(0) == v.dim(0),
          ErrorCode::kShapeMismatch, "tucker_weight_grad: tensors must be (n, field)");
  std::vector<Matrix> grads;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    DenseTensor p = v;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (k != m) p = mode_product(p, weights.factors[k], k + 1);
    }
    grads.push_back(unfold(u, m + 1) * unfold(p, m + 1).transpose());
  }
  return grads;
}

Matrix unfold(const DenseTensor& tensor, std::size_t mode) {
  const Shape& s = tensor.shape();
  require(mode < s.size(), ErrorCode::kShapeMismatch, "unfold: mode out of range");
  const std::size_t pre = prefix_size(s, mode);
  const std::size_t post = suffix_size(s, mode);
  const std::size_t d = s[mode];
  Matrix out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(pre * post));
  const double* src = tensor.data().data();
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t q = 0; q < post; ++q) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p * post + q)) =
            src[(p * d + i) * post + q];
      }
    }
  }
  return out;
}

DenseTensor fold(const Matrix& unfolded, std::size_t mode, const Shape& shape) {
  require(mode < shape.size(), ErrorCode::kShapeMismatch, "fold: mode out of range");
  const std::size_t pre = prefix_size(shape, mode);
  const std::size_t post = suffix_size(shape, mode);
  const std::size_t d = shape[mode];
  require(static_cast<std::size_t>(unfolded.rows()) == d &&
              static_cast<std::size_t>(unfolded.cols()) == pre * post,
          ErrorCode::kShapeMismatch, "fold: unfolded matrix does not match shape");
  DenseTensor out(shape);
  double* dst = out.data().data();
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t q = 0; q < post; ++q) {
        dst[(p * d + i) * post + q] =
            unfolded(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p * post + q));
      }
    }
  }
  return out;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix kron_apply(std::span<const Matrix> factors, const Matrix& x) {
  Shape in_shape;
  for (const auto& f : factors) in_shape.push_back(static_cast<std::size_t>(f.cols()));
  require(shape_size(in_shape) == static_cast<std::size_t>(x.rows()), ErrorCode::kShapeMismatch,
          "kron_apply: row count does not match the factor column product");
  const auto n = static_cast<std::size_t>(x.cols());
  std::size_t out_rows = 1;
  for (const auto& f : factors) out_rows *= static_cast<std::size_t>(f.rows());
  if (n == 0) return Matrix(static_cast<Eigen::Index>(out_rows), 0);
  in_shape.push_back(n);
  const RowMatrix xr = x;
  DenseTensor t(in_shape, std::vector<double>(xr.data(), xr.data() + xr.size()));
  for (std::size_t m = 0; m < factors.size(); ++m) t = mode_product(t, factors[m], m);
  return Eigen::Map<const RowMatrix>(t.data().data(), static_cast<Eigen::Index>(out_rows),
                                     static_cast<Eigen::Index>(n));
}

Matrix kron_all(std::span<const Matrix> factors) {
  Matrix out = Matrix::Ones(1, 1);
  for (const auto& f : factors) out = kron(out, f);
  return out;
}

DenseTensor outer(std::span<const Vector> vectors) {
  Shape shape;
  for (const auto& v : vectors) shape.push_back(static_cast<std::size_t>(v.size()));
  DenseTensor out(shape, 1.0);
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    const std::size_t pre = prefix_size(shape, m);
    const std::size_t post = suffix_size(shape, m);
    const std::size_t d = shape[m];
    double* dst = out.data().data();
    for (std::size_t p = 0; p < pre; ++p) {
      for (std::size_t i = 0; i < d; ++i) {
        const double v = vectors[m](static_cast<Eigen::Index>(i));
        double* row = dst + (p * d + i) * post;
        for (std::size_t q = 0; q < post; ++q) row[q] *= v;
      }
    }
  }
  return out;
}

DenseTensor select_first_mode(const DenseTensor& tensor, std::span<const std::size_t> rows) {
  require(tensor.order() >= 1, ErrorCode::kShapeMismatch, "select on a rank-0 tensor");
  Shape shape = tensor.shape();
  const std::size_t stride = shape[0] == 0 ? 0 : tensor.size() / shape[0];
  shape[0] = rows.size();
  DenseTensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < tensor.dim(0), ErrorCode::kInvalidArgument, "selection index out of range");
    std::copy_n(tensor.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

DenseTensor concat_first_mode(const DenseTensor& a, const DenseTensor& b) {
  require(a.trailing_shape() == b.trailing_shape(), ErrorCode::kShapeMismatch,
          "concat: trailing shapes differ");
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return DenseTensor(shape, std::move(data));
}

DenseTensor pad_modes(const DenseTensor& tensor, std::size_t order) {
  require(tensor.order() <= order, ErrorCode::kShapeMismatch, "pad_modes: tensor already larger");
  Shape shape = tensor.shape();
  shape.resize(order, 1);
  return DenseTensor(shape, tensor.storage());
}

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "tensor sum: shape mismatch");
  DenseTensor out = a;
  out.as_vector() += b.as_vector();
  return out;
}

DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "tensor difference: shape mismatch");
  DenseTensor out = a;
  out.as_vector() -= b.as_vector();
  return out;
}

DenseTensor operator*(double s, const DenseTensor& a) {
  DenseTensor out = a;
  out.as_vector() *= s;
  return out;
}

DenseTensor hadamard(const DenseTensor& a, const DenseTensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "hadamard: shape mismatch");
  DenseTensor out = a;
  out.as_vector().array() *= b.as_vector().array();
  return out;
}

}  // namespace mfgar
