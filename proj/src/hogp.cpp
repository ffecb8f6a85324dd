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

#include "mfgar/hogp.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include "mfgar/error.hpp"

namespace mfgar {

namespace {

std::atomic<std::uint64_t> g_output_factorizations{0};

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_data(const TgpParams& params, const Matrix& inputs, const DenseTensor& outputs) {
  require(outputs.order() == params.output_order() + 1, ErrorCode::kShapeMismatch,
          "output tensor order does not match the number of output modes + 1");
  require(outputs.dim(0) == static_cast<std::size_t>(inputs.rows()), ErrorCode::kShapeMismatch,
          "first output mode must equal the number of input rows");
  require(static_cast<std::size_t>(inputs.cols()) == params.input_kernel.dims(),
          ErrorCode::kShapeMismatch, "input dimension does not match the kernel");
}

SymEig identity_eig(std::size_t d) {
  SymEig e;
  e.vectors = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  e.values = Vector::Ones(static_cast<Eigen::Index>(d));
  return e;
}

EigenFactors factorize(const TgpParams& params, const Matrix& gram,
                       const std::vector<Matrix>& covs) {
  EigenFactors eigs;
  SymEig k = sym_eig(gram);
  k.values = k.values.cwiseMax(0.0);
  eigs.factors.push_back(std::move(k));
  for (const auto& s : covs) {
    const auto d = static_cast<std::size_t>(s.rows());
    if (params.identity_outputs || d == 1) {
      SymEig e = identity_eig(d);
      if (d == 1) e.values(0) = std::max(s(0, 0), 0.0);
      eigs.factors.push_back(std::move(e));
      continue;
    }
    g_output_factorizations.fetch_add(1, std::memory_order_relaxed);
    SymEig e = sym_eig(s);
    e.values = e.values.cwiseMax(0.0);
    eigs.factors.push_back(std::move(e));
  }
  return eigs;
}

// sum over every mode except `mode` of t, giving a vector of length dim(mode).
Vector sum_except(const DenseTensor& t, std::size_t mode) {
  return unfold(t, mode).rowwise().sum();
}

}  // namespace

double noise_from_log(double log_noise) { return kJitter + std::exp(log_noise); }

double log_from_noise(double noise) {
  require(noise > kJitter, ErrorCode::kInvalidArgument, "noise must exceed the jitter floor");
  return std::log(noise - kJitter);
}

double TgpParams::noise() const { return noise_from_log(log_noise); }

std::vector<Matrix> TgpParams::output_covs(const Shape& output_shape) const {
  require(output_shape.size() == features.order(), ErrorCode::kShapeMismatch,
          "latent features do not match the output mode count");
  std::vector<Matrix> covs;
  covs.reserve(output_shape.size());
  for (std::size_t m = 0; m < output_shape.size(); ++m) {
    const auto d = static_cast<Eigen::Index>(output_shape[m]);
    require(features.modes[m].features.rows() == d, ErrorCode::kShapeMismatch,
            "latent feature rows do not match output mode size");
    if (identity_outputs) {
      covs.push_back(Matrix::Identity(d, d));
    } else {
      covs.push_back(output_cov(features, m));
    }
  }
  return covs;
}

void TgpModel::set_params(TgpParams p) {
  params = std::move(p);
  cache.reset();
}

std::shared_ptr<const TgpCache> TgpModel::ensure_cache() const {
  if (cache) return cache;
  return std::make_shared<const TgpCache>(build_tgp_cache(params, inputs, outputs));
}

std::uint64_t output_factorization_count() {
  return g_output_factorizations.load(std::memory_order_relaxed);
}

TgpFactorization tgp_factorize(const TgpParams& params, const Matrix& inputs,
                               const Shape& output_shape) {
  TgpFactorization f;
  f.covs = params.output_covs(output_shape);
  f.gram = ard_gram(params.input_kernel, inputs, inputs);
  f.eigs = factorize(params, f.gram, f.covs);
  f.noise = params.noise();
  f.denom = joint_eigenvalues(f.eigs);
  f.denom.as_vector().array() += f.noise;
  return f;
}

Vector trace_weights(const TgpFactorization& f, std::size_t k) {
  std::vector<Vector> vals;
  for (std::size_t q = 0; q < f.eigs.factors.size(); ++q) {
    vals.push_back(q == k ? Vector::Ones(f.eigs.factors[q].values.size())
                          : f.eigs.factors[q].values);
  }
  DenseTensor others = outer(vals);
  others.as_vector().array() /= f.denom.as_vector().array();
  return sum_except(others, k);
}

Matrix weighted_unfold_product(const TgpFactorization& f, std::size_t k, const DenseTensor& a,
                               const DenseTensor& b) {
  DenseTensor wa = a;
  for (std::size_t q = 0; q < f.eigs.factors.size(); ++q) {
    if (q == k) continue;
    wa = mode_product(wa, Matrix(f.eigs.factors[q].values.asDiagonal()), q);
  }
  return unfold(wa, k) * unfold(b, k).transpose();
}

TgpCache build_tgp_cache(const TgpParams& params, const Matrix& inputs,
                         const DenseTensor& outputs) {
  check_data(params, inputs, outputs);
  TgpFactorization f = tgp_factorize(params, inputs, outputs.trailing_shape());
  TgpCache c;
  c.covs = std::move(f.covs);
  c.eigs = std::move(f.eigs);
  c.alpha = kron_solve(c.eigs, f.noise, outputs);
  return c;
}

TgpGradient tgp_chain_gradient(const TgpParams& params, const Matrix& inputs,
                               const TgpFactorization& f, const std::vector<Matrix>& grad_factor,
                               double grad_noise_variance) {
  TgpGradient grad;
  grad.input_kernel =
      ard_gram_param_grad(params.input_kernel, inputs, inputs, f.gram, grad_factor[0]);
  grad.log_noise = grad_noise_variance * std::exp(params.log_noise);
  const std::size_t n_modes = f.covs.size();
  grad.features.resize(n_modes);
  grad.feature_lengthscales.resize(n_modes);
  for (std::size_t m = 0; m < n_modes; ++m) {
    const auto& mode = params.features.modes[m];
    if (params.identity_outputs || mode.features.rows() == 1) {
      grad.features[m] = Matrix::Zero(mode.features.rows(), mode.features.cols());
      grad.feature_lengthscales[m] = Vector::Zero(mode.kernel.log_lengthscales.size());
      continue;
    }
    const Matrix& gs = grad_factor[m + 1];
    grad.features[m] = ard_gram_input_grad(mode.kernel, mode.features, f.covs[m], gs);
    grad.feature_lengthscales[m] =
        ard_gram_param_grad(mode.kernel, mode.features, mode.features, f.covs[m], gs)
            .log_lengthscales;
  }
  return grad;
}

TgpEvaluation tgp_evaluate(const TgpParams& params, const Matrix& inputs,
                           const DenseTensor& outputs, bool with_grad) {
  check_data(params, inputs, outputs);
  const TgpFactorization f = tgp_factorize(params, inputs, outputs.trailing_shape());
  const DenseTensor rotated = to_eigenbasis(outputs, f.eigs);

  TgpEvaluation ev;
  const auto r = rotated.as_vector().array();
  const auto dn = f.denom.as_vector().array();
  ev.parts.quad = (r.square() / dn).sum();
  ev.parts.logdet = dn.log().sum();
  ev.nll = 0.5 * ev.parts.quad + 0.5 * ev.parts.logdet +
           0.5 * static_cast<double>(outputs.size()) * kLog2Pi;
  require(std::isfinite(ev.nll), ErrorCode::kNumerical,
          "TGP likelihood is not finite (conditioning failure)");
  if (!with_grad) return ev;

  // beta = Sigma^{-1} vec(Y) in eigen coordinates.
  DenseTensor beta = rotated;
  beta.as_vector().array() /= dn;

  // dL/dA_k for every Kronecker factor A_k (k = 0 is K), formed in the factor's
  // eigenbasis: 0.5 diag(c_k) - 0.5 unfold_k(beta o w_k) unfold_k(beta)^T.
  const std::size_t n_factors = f.eigs.factors.size();
  std::vector<Matrix> grad_factor(n_factors);
  for (std::size_t k = 0; k < n_factors; ++k) {
    Matrix g = -0.5 * weighted_unfold_product(f, k, beta, beta);
    g.diagonal() += 0.5 * trace_weights(f, k);
    const Matrix& vk = f.eigs.factors[k].vectors;
    grad_factor[k] = vk * g * vk.transpose();
  }
  const double dnoise = 0.5 * (1.0 / dn).sum() - 0.5 * beta.as_vector().squaredNorm();
  TgpGradient grad = tgp_chain_gradient(params, inputs, f, grad_factor, dnoise);
  grad.outputs = from_eigenbasis(beta, f.eigs);
  ev.grad = std::move(grad);
  return ev;
}

double tgp_nll(const TgpModel& model) {
  return tgp_evaluate(model.params, model.inputs, model.outputs, false).nll;
}

DenseTensor CovTerm::diag() const {
  DenseTensor out = coeff;
  for (std::size_t m = 0; m < basis.size(); ++m) {
    out = mode_product(out, basis[m].array().square().matrix(), m);
  }
  return out;
}

CovTerm CovTerm::mapped(const TuckerWeights& w) const {
  require(w.size() == basis.size(), ErrorCode::kShapeMismatch,
          "weights do not match the covariance term's mode count");
  CovTerm out;
  out.coeff = coeff;
  for (std::size_t m = 0; m < basis.size(); ++m) out.basis.push_back(w.factors[m] * basis[m]);
  return out;
}

PointPosterior tgp_point_posterior(const TgpModel& model, const Vector& x_star) {
  const auto cache = model.ensure_cache();
  const auto& params = model.params;
  require(static_cast<std::size_t>(x_star.size()) == params.input_kernel.dims(),
          ErrorCode::kShapeMismatch, "query dimension does not match the training inputs");
  const Matrix xs = x_star.transpose();
  const Matrix k_star = ard_gram(params.input_kernel, xs, model.inputs);  // 1 x N
  const double k_ss = params.input_kernel.amplitude();
  const double noise = params.noise();
  const Shape out_shape = model.output_shape();

  DenseTensor mean = mode_product(cache->alpha, k_star, 0);
  for (std::size_t m = 0; m < cache->covs.size(); ++m) {
    mean = mode_product(mean, cache->covs[m], m + 1);
  }
  mean = DenseTensor(out_shape, mean.storage());

  const auto& f0 = cache->eigs.factors[0];
  const Vector a = f0.vectors.transpose() * k_star.transpose();
  std::vector<Vector> out_vals;
  for (std::size_t q = 1; q < cache->eigs.factors.size(); ++q) {
    out_vals.push_back(cache->eigs.factors[q].values);
  }
  const DenseTensor lam_out = outer(out_vals);

  PointPosterior pp;
  pp.mean = std::move(mean);
  pp.cov.coeff = DenseTensor(out_shape);
  const Vector a2 = a.array().square();
  for (std::size_t s = 0; s < lam_out.size(); ++s) {
    const double ls = lam_out[s];
    double corr = 0.0;
    for (Eigen::Index i = 0; i < a2.size(); ++i) corr += a2(i) / (f0.values(i) * ls + noise);
    pp.cov.coeff[s] = k_ss * ls - ls * ls * corr;
  }
  for (std::size_t q = 1; q < cache->eigs.factors.size(); ++q) {
    pp.cov.basis.push_back(cache->eigs.factors[q].vectors);
  }
  return pp;
}

PosteriorField tgp_predict(const TgpModel& model, const Vector& x_star) {
  PointPosterior pp = tgp_point_posterior(model, x_star);
  PosteriorField out;
  out.mean = std::move(pp.mean);
  if (model.offset.size() > 0) out.mean = out.mean + model.offset;
  out.variance_diag = pp.cov.diag();
  const double noise = model.params.noise();
  for (auto& v : out.variance_diag.data()) v = std::max(v, 0.0) + noise;
  return out;
}

std::optional<std::size_t> find_input(const Matrix& inputs, const Vector& x, double tol) {
  for (Eigen::Index n = 0; n < inputs.rows(); ++n) {
    const double dist = (inputs.row(n).transpose() - x).norm();
    if (tol > 0.0 ? dist <= tol : dist == 0.0) return static_cast<std::size_t>(n);
  }
  return std::nullopt;
}

JointPosterior tgp_joint_posterior(const TgpModel& model, const Matrix& queries,
                                   const std::vector<char>& noisy) {
  require(static_cast<std::size_t>(queries.rows()) == noisy.size(), ErrorCode::kShapeMismatch,
          "one noise flag per query row is required");
  const auto cache = model.ensure_cache();
  const auto& params = model.params;
  const auto nq = static_cast<Eigen::Index>(queries.rows());
  const auto d = static_cast<Eigen::Index>(shape_size(model.output_shape()));
  const double noise = params.noise();

  JointPosterior jp;
  jp.mean = Matrix::Zero(nq, d);
  jp.cov = Matrix::Zero(nq * d, nq * d);

  // Queries that are exactly observed carry no uncertainty.
  std::vector<Eigen::Index> free_rows;
  const auto y = model.outputs.as_matrix();
  for (Eigen::Index q = 0; q < nq; ++q) {
    if (noisy[static_cast<std::size_t>(q)]) {
      if (auto hit = find_input(model.inputs, queries.row(q).transpose())) {
        jp.mean.row(q) = y.row(static_cast<Eigen::Index>(*hit));
        continue;
      }
    }
    free_rows.push_back(q);
  }
  const auto nf = static_cast<Eigen::Index>(free_rows.size());
  if (nf == 0) return jp;

  Matrix xf(nf, queries.cols());
  for (Eigen::Index j = 0; j < nf; ++j) xf.row(j) = queries.row(free_rows[j]);
  const Matrix k_fx = ard_gram(params.input_kernel, xf, model.inputs);  // nf x N
  const Matrix k_ff = ard_gram(params.input_kernel, xf, xf);

  // Means: alpha x_0 k_fx x_m S_m.
  DenseTensor mean = mode_product(cache->alpha, k_fx, 0);
  for (std::size_t m = 0; m < cache->covs.size(); ++m) {
    mean = mode_product(mean, cache->covs[m], m + 1);
  }
  const auto mm = mean.as_matrix();
  for (Eigen::Index j = 0; j < nf; ++j) jp.mean.row(free_rows[j]) = mm.row(j);

  // Per output eigen-index s: C_s = k_ff lambda_s - A^T diag(lambda_s^2 / D_{:,s}) A.
  const auto& f0 = cache->eigs.factors[0];
  const Matrix a = f0.vectors.transpose() * k_fx.transpose();  // N x nf
  std::vector<Vector> out_vals;
  std::vector<Matrix> out_vecs;
  for (std::size_t q = 1; q < cache->eigs.factors.size(); ++q) {
    out_vals.push_back(cache->eigs.factors[q].values);
    out_vecs.push_back(cache->eigs.factors[q].vectors);
  }
  const DenseTensor lam = outer(out_vals);
  std::vector<Matrix> coeff(static_cast<std::size_t>(d));
  for (Eigen::Index s = 0; s < d; ++s) {
    const double ls = lam[static_cast<std::size_t>(s)];
    const Vector w = (ls * ls) / (f0.values.array() * ls + noise);
    coeff[static_cast<std::size_t>(s)] = k_ff * ls - a.transpose() * w.asDiagonal() * a;
  }
  // Rotate each block back: V diag(c) V^T with V the Kronecker output basis.
  for (Eigen::Index i = 0; i < nf; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      Vector c(d);
      for (Eigen::Index s = 0; s < d; ++s) c(s) = coeff[static_cast<std::size_t>(s)](i, j);
      Matrix left = kron_apply(out_vecs, Matrix(c.asDiagonal()));
      Matrix block = kron_apply(out_vecs, Matrix(left.transpose())).transpose();
      const bool same = noisy[static_cast<std::size_t>(free_rows[i])] &&
                        noisy[static_cast<std::size_t>(free_rows[j])] &&
                        xf.row(i) == xf.row(j);
      if (same) block.diagonal().array() += noise;
      jp.cov.block(free_rows[i] * d, free_rows[j] * d, d, d) = block;
      if (i != j) jp.cov.block(free_rows[j] * d, free_rows[i] * d, d, d) = block.transpose();
    }
  }
  return jp;
}

namespace {

bool mode_trainable(const TgpParams& params, std::size_t m) {
  return !params.identity_outputs && params.features.modes[m].features.rows() > 1;
}

}  // namespace

Eigen::Index packed_tgp_size(const TgpParams& params, const TgpTrainMask& mask) {
  Eigen::Index n = 0;
  if (mask.input_kernel) n += 1 + params.input_kernel.log_lengthscales.size();
  if (mask.noise) n += 1;
  for (std::size_t m = 0; m < params.features.order(); ++m) {
    if (!mode_trainable(params, m)) continue;
    const auto& mode = params.features.modes[m];
    if (mask.features) n += mode.features.size();
    if (mask.feature_lengthscales) n += mode.kernel.log_lengthscales.size();
  }
  return n;
}

Vector pack_tgp(const TgpParams& params, const TgpTrainMask& mask) {
  Vector x(packed_tgp_size(params, mask));
  Eigen::Index i = 0;
  auto put = [&](const auto& block) {
    x.segment(i, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    i += block.size();
  };
  if (mask.input_kernel) {
    x(i++) = params.input_kernel.log_amplitude;
    put(params.input_kernel.log_lengthscales);
  }
  if (mask.noise) x(i++) = params.log_noise;
  for (std::size_t m = 0; m < params.features.order(); ++m) {
    if (!mode_trainable(params, m)) continue;
    const auto& mode = params.features.modes[m];
    if (mask.features) put(mode.features);
    if (mask.feature_lengthscales) put(mode.kernel.log_lengthscales);
  }
  return x;
}

void unpack_tgp(const Vector& x, TgpParams& params, const TgpTrainMask& mask,
                Eigen::Index offset) {
  Eigen::Index i = offset;
  auto take = [&](auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) = x.segment(i, block.size());
    i += block.size();
  };
  if (mask.input_kernel) {
    params.input_kernel.log_amplitude = x(i++);
    take(params.input_kernel.log_lengthscales);
  }
  if (mask.noise) params.log_noise = x(i++);
  for (std::size_t m = 0; m < params.features.order(); ++m) {
    if (!mode_trainable(params, m)) continue;
    auto& mode = params.features.modes[m];
    if (mask.features) take(mode.features);
    if (mask.feature_lengthscales) take(mode.kernel.log_lengthscales);
  }
}

Vector pack_tgp_gradient(const TgpParams& params, const TgpGradient& grad,
                         const TgpTrainMask& mask) {
  Vector x(packed_tgp_size(params, mask));
  Eigen::Index i = 0;
  auto put = [&](const auto& block) {
    x.segment(i, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    i += block.size();
  };
  if (mask.input_kernel) {
    x(i++) = grad.input_kernel.log_amplitude;
    put(grad.input_kernel.log_lengthscales);
  }
  if (mask.noise) x(i++) = grad.log_noise;
  for (std::size_t m = 0; m < params.features.order(); ++m) {
    if (!mode_trainable(params, m)) continue;
    if (mask.features) put(grad.features[m]);
    if (mask.feature_lengthscales) put(grad.feature_lengthscales[m]);
  }
  return x;
}

DenseTensor sample_mean(const DenseTensor& y) {
  const Shape tail = y.trailing_shape();
  DenseTensor mean(tail);
  if (y.dim(0) == 0) return mean;
  Eigen::Map<Vector>(mean.data().data(), static_cast<Eigen::Index>(mean.size())) =
      y.as_matrix().colwise().mean().transpose();
  return mean;
}

DenseTensor subtract_rows(const DenseTensor& y, const DenseTensor& row) {
  require(y.trailing_shape() == row.shape(), ErrorCode::kShapeMismatch,
          "row offset shape does not match the tensor's trailing shape");
  DenseTensor out = y;
  auto m = out.as_matrix();
  const Eigen::Map<const Eigen::RowVectorXd> r(row.data().data(),
                                                static_cast<Eigen::Index>(row.size()));
  m.rowwise() -= r;
  return out;
}

TgpParams init_tgp_params(const Matrix& inputs, const DenseTensor& outputs,
                          const TgpFitConfig& config) {
  require(outputs.order() >= 1, ErrorCode::kShapeMismatch, "outputs need a sample mode");
  TgpParams p;
  const double var = outputs.size() > 0 ? outputs.as_vector().squaredNorm() /
                                              static_cast<double>(outputs.size())
                                        : 0.0;
  const double amp = var > 1e-12 ? var : 1.0;
  p.input_kernel.log_amplitude = std::log(amp);
  p.input_kernel.log_lengthscales.resize(inputs.cols());
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
    const double range =
        inputs.rows() > 0 ? inputs.col(c).maxCoeff() - inputs.col(c).minCoeff() : 0.0;
    p.input_kernel.log_lengthscales(c) = std::log(range > 1e-12 ? range : 1.0);
  }
  p.log_noise = std::log(1e-3 * amp);
  p.identity_outputs = config.identity_outputs;
  if (config.shared_features) {
    p.features = *config.shared_features;
  } else {
    p.features = init_latent_features(outputs.trailing_shape(), config.optim.seed,
                                      config.latent_rank);
  }
  return p;
}

TgpFitResult tgp_fit(const Matrix& inputs, const DenseTensor& outputs,
                     const TgpFitConfig& config) {
  require(outputs.order() >= 2, ErrorCode::kShapeMismatch,
          "outputs must be (N, d_1, ...) with at least one output mode");
  require(outputs.dim(0) == static_cast<std::size_t>(inputs.rows()), ErrorCode::kShapeMismatch,
          "first output mode must equal the number of input rows");

  TgpModel model;
  model.inputs = inputs;
  if (config.center) {
    model.offset = sample_mean(outputs);
    model.outputs = subtract_rows(outputs, model.offset);
  } else {
    model.outputs = outputs;
  }

  TgpParams base = init_tgp_params(inputs, model.outputs, config);
  TgpTrainMask mask;
  mask.features = !config.shared_features.has_value();
  const double lambda = config.prior.scale;

  Objective objective = [&](const Vector& x, Vector* grad) {
    TgpParams p = base;
    unpack_tgp(x, p, mask);
    TgpEvaluation ev;
    try {
      ev = tgp_evaluate(p, model.inputs, model.outputs, grad != nullptr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumerical) throw;
      if (grad) grad->setZero(x.size());
      return std::numeric_limits<double>::infinity();
    }
    double f = ev.nll - laplace_log_prior(p.features, config.prior);
    if (grad) {
      *grad = pack_tgp_gradient(p, *ev.grad, mask);
      if (lambda > 0 && mask.features) {
        TgpGradient sg = *ev.grad;
        for (std::size_t m = 0; m < p.features.order(); ++m) {
          sg.features[m] = lambda * p.features.modes[m].features.array().sign().matrix();
          sg.feature_lengthscales[m].setZero();
        }
        sg.input_kernel.log_amplitude = 0;
        sg.input_kernel.log_lengthscales.setZero();
        sg.log_noise = 0;
        *grad += pack_tgp_gradient(p, sg, mask);
      }
    }
    return f;
  };

  TgpFitResult res;
  res.optim = minimize(objective, pack_tgp(base, mask), config.optim);
  require(std::isfinite(res.optim.objective), ErrorCode::kFitFailure,
          "TGP fit diverged (non-finite objective)");
  unpack_tgp(res.optim.x, base, mask);
  model.set_params(std::move(base));
  model.cache = std::make_shared<const TgpCache>(
      build_tgp_cache(model.params, model.inputs, model.outputs));
  res.model = std::move(model);
  return res;
}

}  // namespace mfgar
