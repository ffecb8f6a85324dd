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

// Independent GAR reference: every observation is written as a linear map of
// stacked latent components [f_0, e_0, f_1, e_1, ...] evaluated at the union of
// all inputs, so the joint covariance is L P L^T with a block-diagonal P. No
// library covariance code is used.

#include <random>
#include <vector>

#include "mfgar/gar.hpp"
#include "oracles.hpp"

namespace oracle {

struct GarInstance {
  mfgar::MultiFidelityDataset data;
  mfgar::TgpParams base;
  std::vector<mfgar::GarTransition> transitions;
};

inline mfgar::TgpParams random_tgp_params(std::mt19937_64& rng, const Shape& out,
                                          std::size_t in_dim) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mfgar::TgpParams p;
  p.input_kernel = mfgar::ArdKernelParams::isotropic(in_dim, 0.5 + u(rng), 0.4 + 0.6 * u(rng));
  p.log_noise = std::log(0.02 + 0.1 * u(rng));
  p.features = mfgar::init_latent_features(out, rng(), 2);
  for (auto& m : p.features.modes) m.features *= 4.0;
  return p;
}

/// Random instance with `levels` levels. When subset is false at least one
/// high input per transition is new.
inline GarInstance random_gar_instance(std::mt19937_64& rng, const std::vector<Shape>& shapes,
                                       const std::vector<Eigen::Index>& counts,
                                       std::size_t in_dim, bool subset) {
  GarInstance inst;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix prev;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Matrix x(counts[i], static_cast<Eigen::Index>(in_dim));
    for (Eigen::Index n = 0; n < counts[i]; ++n) {
      const bool reuse = i > 0 && (subset || n > 0) && n < prev.rows();
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(n, c) = reuse ? prev(n, c) : u(rng);
    }
    Shape full{static_cast<std::size_t>(counts[i])};
    full.insert(full.end(), shapes[i].begin(), shapes[i].end());
    inst.data.levels.push_back({x, random_tensor(rng, full)});
    prev = x;
  }
  inst.base = random_tgp_params(rng, shapes[0], in_dim);
  for (std::size_t i = 1; i < shapes.size(); ++i) {
    mfgar::GarTransition t;
    for (std::size_t m = 0; m < shapes[i].size(); ++m) {
      t.weights.factors.push_back(0.7 * random_matrix(rng, static_cast<Eigen::Index>(shapes[i][m]),
                                                      static_cast<Eigen::Index>(shapes[i - 1][m])));
    }
    t.residual = random_tgp_params(rng, shapes[i], in_dim);
    inst.transitions.push_back(t);
  }
  return inst;
}

class LatentStack {
 public:
  /// `extra` inputs are added to the union so that they can be predicted.
  LatentStack(const mfgar::GarModel& model, const Matrix& extra) : model_(model) {
    for (const auto& lv : model.levels) add_inputs(lv.inputs);
    add_inputs(extra);
    std::size_t offset = 0;
    for (std::size_t j = 0; j < model.num_levels(); ++j) {
      const Eigen::Index d = dim(j);
      const auto nu = static_cast<Eigen::Index>(union_.size());
      f_offset_.push_back(offset);
      offset += static_cast<std::size_t>(nu * d);
      e_offset_.push_back(offset);
      offset += static_cast<std::size_t>(nu * d);
    }
    total_ = static_cast<Eigen::Index>(offset);
    prior_ = Matrix::Zero(total_, total_);
    Matrix xu(static_cast<Eigen::Index>(union_.size()), model.levels[0].inputs.cols());
    for (std::size_t k = 0; k < union_.size(); ++k) xu.row(static_cast<Eigen::Index>(k)) = union_[k];
    for (std::size_t j = 0; j < model.num_levels(); ++j) {
      const mfgar::TgpParams& p = params(j);
      const Shape shape = model.output_shape(j);
      std::vector<Matrix> fs{se_gram(p.input_kernel.amplitude(), p.input_kernel.lengthscales(), xu, xu)};
      for (std::size_t m = 0; m < shape.size(); ++m) {
        const auto dm = static_cast<Eigen::Index>(shape[m]);
        if (p.identity_outputs) {
          fs.push_back(Matrix::Identity(dm, dm));
        } else {
          const auto& mode = p.features.modes[m];
          fs.push_back(se_gram(1.0, mode.kernel.lengthscales(), mode.features, mode.features));
        }
      }
      const Matrix k = kron_loops(fs);
      prior_.block(static_cast<Eigen::Index>(f_offset_[j]), static_cast<Eigen::Index>(f_offset_[j]), k.rows(), k.cols()) = k;
      prior_.block(static_cast<Eigen::Index>(e_offset_[j]), static_cast<Eigen::Index>(e_offset_[j]), k.rows(), k.cols()).diagonal().setConstant(p.noise());
    }
  }

  /// Map from latents to level a's process at input x (noise-free when !noisy).
  Matrix row_map(std::size_t a, const Vector& x, bool noisy) const {
    const std::size_t u = index_of(x);
    Matrix out = Matrix::Zero(dim(a), total_);
    for (std::size_t j = 0; j <= a; ++j) {
      const Matrix w = chain(a, j);
      const Eigen::Index d = dim(j);
      const auto at = static_cast<Eigen::Index>(u) * d;
      out.middleCols(static_cast<Eigen::Index>(f_offset_[j]) + at, d) += w;
      if (noisy) out.middleCols(static_cast<Eigen::Index>(e_offset_[j]) + at, d) += w;
    }
    return out;
  }

  /// Every observation of levels <= top, sample-major within each level.
  Matrix data_map(std::size_t top) const {
    std::vector<Matrix> rows;
    Eigen::Index n = 0;
    for (std::size_t a = 0; a <= top; ++a) {
      const auto& x = model_.levels[a].inputs;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        rows.push_back(row_map(a, x.row(r).transpose(), true));
        n += rows.back().rows();
      }
    }
    Matrix out(n, total_);
    Eigen::Index pos = 0;
    for (const auto& r : rows) {
      out.middleRows(pos, r.rows()) = r;
      pos += r.rows();
    }
    return out;
  }

  Vector data(std::size_t top) const {
    std::vector<double> v;
    for (std::size_t a = 0; a <= top; ++a) {
      const auto& lv = model_.levels[a];
      v.insert(v.end(), lv.outputs.storage().begin(), lv.outputs.storage().end());
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  double nll() const {
    const std::size_t top = model_.num_levels() - 1;
    const Matrix l = data_map(top);
    return gauss_nll(l * prior_ * l.transpose(), data(top));
  }

  struct Conditional {
    Vector mean;
    Matrix cov;
  };

  /// Joint conditional of several targets (rows of row_map) given the data of
  /// levels <= top.
  Conditional condition(const std::vector<Matrix>& targets, std::size_t top) const {
    Eigen::Index n = 0;
    for (const auto& t : targets) n += t.rows();
    Matrix lt(n, total_);
    Eigen::Index pos = 0;
    for (const auto& t : targets) {
      lt.middleRows(pos, t.rows()) = t;
      pos += t.rows();
    }
    const Matrix ld = data_map(top);
    const Matrix sdd = ld * prior_ * ld.transpose();
    const Matrix std_ = lt * prior_ * ld.transpose();
    const Eigen::LDLT<Matrix> solver(sdd);
    Conditional c;
    c.mean = std_ * solver.solve(data(top));
    c.cov = lt * prior_ * lt.transpose() - std_ * solver.solve(Matrix(std_.transpose()));
    return c;
  }

 private:
  const mfgar::TgpParams& params(std::size_t j) const {
    return j == 0 ? model_.base : model_.transitions[j - 1].residual;
  }
  Eigen::Index dim(std::size_t j) const {
    return static_cast<Eigen::Index>(mfgar::shape_size(model_.output_shape(j)));
  }
  Matrix chain(std::size_t a, std::size_t j) const {
    Matrix w = Matrix::Identity(dim(j), dim(j));
    for (std::size_t k = j; k < a; ++k) w = kron_loops(model_.transitions[k].weights.factors) * w;
    return w;
  }
  void add_inputs(const Matrix& x) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Vector v = x.row(r).transpose();
      bool found = false;
      for (const auto& u : union_) found = found || u == v;
      if (!found) union_.push_back(v);
    }
  }
  std::size_t index_of(const Vector& x) const {
    for (std::size_t k = 0; k < union_.size(); ++k) {
      if (union_[k] == x) return k;
    }
    throw std::runtime_error("input not in the latent union");
  }

  const mfgar::GarModel& model_;
  std::vector<Vector> union_;
  std::vector<std::size_t> f_offset_, e_offset_;
  Eigen::Index total_ = 0;
  Matrix prior_;
};

}  // namespace oracle
