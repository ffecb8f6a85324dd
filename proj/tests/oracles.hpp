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

// Reference implementations used only by the tests. They are deliberately naive
// (explicit index loops, dense matrices, Cholesky) and share no code with the
// structured library paths they check.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mfgar/tensor.hpp"

namespace oracle {

using mfgar::DenseTensor;
using mfgar::Matrix;
using mfgar::Shape;
using mfgar::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index d, double ridge = 0.1) {
  const Matrix a = random_matrix(rng, d, d);
  return a * a.transpose() / static_cast<double>(d) +
         ridge * Matrix::Identity(d, d);
}

inline DenseTensor random_tensor(std::mt19937_64& rng, const Shape& shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseTensor t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

/// Row-major multi-index of a linear offset.
inline std::vector<std::size_t> unravel(std::size_t lin, const Shape& shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t k = shape.size(); k-- > 0;) {
    idx[k] = lin % shape[k];
    lin /= shape[k];
  }
  return idx;
}

inline std::size_t ravel(const std::vector<std::size_t>& idx, const Shape& shape) {
  std::size_t lin = 0;
  for (std::size_t k = 0; k < shape.size(); ++k) lin = lin * shape[k] + idx[k];
  return lin;
}

/// Entry-by-entry Kronecker product of a list of matrices (first factor slowest).
inline Matrix kron_loops(const std::vector<Matrix>& fs) {
  Shape rs, cs;
  for (const auto& f : fs) {
    rs.push_back(static_cast<std::size_t>(f.rows()));
    cs.push_back(static_cast<std::size_t>(f.cols()));
  }
  const std::size_t nr = mfgar::shape_size(rs), nc = mfgar::shape_size(cs);
  Matrix out(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc));
  for (std::size_t i = 0; i < nr; ++i) {
    const auto ri = unravel(i, rs);
    for (std::size_t j = 0; j < nc; ++j) {
      const auto cj = unravel(j, cs);
      double v = 1.0;
      for (std::size_t k = 0; k < fs.size(); ++k)
        v *= fs[k](static_cast<Eigen::Index>(ri[k]), static_cast<Eigen::Index>(cj[k]));
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return out;
}

inline Vector flat(const DenseTensor& t) {
  Vector v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

/// Gaussian negative log density of y under N(0, cov), by Cholesky.
inline double gauss_nll(const Matrix& cov, const Vector& y) {
  Eigen::LLT<Matrix> llt(cov);
  const Vector z = llt.matrixL().solve(y);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return 0.5 * z.squaredNorm() + 0.5 * logdet +
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
}

/// Squared-exponential ARD Gram matrix by loops.
inline Matrix se_gram(double amp, const Vector& ls, const Matrix& a, const Matrix& b) {
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double d = (a(i, c) - b(j, c)) / ls(c);
        s += d * d;
      }
      k(i, j) = amp * std::exp(-s);
    }
  return k;
}

/// Central-difference gradient of f.
template <class F>
Vector fd_grad(F&& f, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    p(i) = x(i) + step;
    const double fp = f(p);
    p(i) = x(i) - step;
    const double fm = f(p);
    p(i) = x(i);
    g(i) = (fp - fm) / (2 * step);
  }
  return g;
}

inline double max_rel_err(const Vector& a, const Vector& b, double floor = 1e-8) {
  double worst = 0.0;
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a(i)), std::abs(b(i)), floor * scale + 1e-12});
    worst = std::max(worst, std::abs(a(i) - b(i)) / d);
  }
  return worst;
}

}  // namespace oracle
