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

#include "mfgar/cigar.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "mfgar/error.hpp"

namespace mfgar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Matrix rows_of(const DenseTensor& t) { return t.as_matrix(); }

DenseTensor tensor_from_rows(const Matrix& rows, const Shape& field_shape) {
  Shape shape{static_cast<std::size_t>(rows.rows())};
  shape.insert(shape.end(), field_shape.begin(), field_shape.end());
  const RowMatrix r = rows;
  return DenseTensor(shape, std::vector<double>(r.data(), r.data() + r.size()));
}

/// Applies the Kronecker product of `factors` to every row.
Matrix map_rows(const Matrix& rows, const std::vector<Matrix>& factors) {
  return kron_apply(factors, rows.transpose()).transpose();
}

std::vector<Matrix> transposed(const TuckerWeights& w) {
  std::vector<Matrix> t;
  for (const auto& f : w.factors) t.push_back(f.transpose());
  return t;
}

/// Negative log density of the columns of d, each N(0, cov), with optional
/// dL/dcov and cov^{-1} d.
struct ColumnGauss {
  double nll = 0.0;
  Matrix alpha;
  Matrix grad_cov;
};

ColumnGauss column_gauss(const Matrix& cov, const Matrix& d, bool with_grad) {
  const Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, ErrorCode::kNumerical,
          "Cholesky factorization failed: CIGAR input-space covariance");
  ColumnGauss g;
  g.alpha = llt.solve(d);
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const auto cols = static_cast<double>(d.cols());
  g.nll = 0.5 * d.cwiseProduct(g.alpha).sum() + 0.5 * cols * logdet +
          0.5 * static_cast<double>(d.size()) * kLog2Pi;
  require(std::isfinite(g.nll), ErrorCode::kNumerical, "CIGAR likelihood is not finite");
  if (with_grad) {
    const Matrix inv = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    g.grad_cov = 0.5 * cols * inv - 0.5 * g.alpha * g.alpha.transpose();
  }
  return g;
}

Matrix noisy_gram(const TgpParams& p, const Matrix& x) {
  Matrix k = ard_gram(p.input_kernel, x, x);
  k.diagonal().array() += p.noise();
  return k;
}

/// Joint covariance of one output column of [low data; projected high data].
Matrix range_cov(const CigarModel& m) {
  const Matrix& xl = m.levels[0].inputs;
  const Matrix& xh = m.levels[1].inputs;
  const auto nl = xl.rows(), nh = xh.rows();
  const double sl = m.low.noise();
  std::vector<Eigen::Index> twin(static_cast<std::size_t>(nh), -1);
  for (std::size_t k = 0; k < m.plan.matched_high.size(); ++k) {
    twin[m.plan.matched_high[k]] = static_cast<Eigen::Index>(m.plan.matched_low[k]);
  }
  Matrix s(nl + nh, nl + nh);
  s.topLeftCorner(nl, nl) = noisy_gram(m.low, xl);
  Matrix hl = ard_gram(m.low.input_kernel, xh, xl);
  Matrix hh = ard_gram(m.low.input_kernel, xh, xh) + noisy_gram(m.residual, xh);
  hh.diagonal().array() += sl;
  for (Eigen::Index n = 0; n < nh; ++n) {
    const Eigen::Index tn = twin[static_cast<std::size_t>(n)];
    if (tn < 0) continue;
    hl(n, tn) += sl;
    for (Eigen::Index q = 0; q < nh; ++q) {
      if (q != n && twin[static_cast<std::size_t>(q)] == tn) hh(n, q) += sl;
    }
  }
  s.bottomLeftCorner(nh, nl) = hl;
  s.topRightCorner(nl, nh) = hl.transpose();
  s.bottomRightCorner(nh, nh) = hh;
  return s;
}

struct HighEvaluation {
  double nll = 0.0;
  Matrix grad_kernel;  // dL/dK_r (noise-free residual Gram)
  double grad_noise = 0.0;
  Matrix grad_z;       // dL/dZ
  Matrix joint_alpha;  // range system solve
  Matrix comp_alpha;   // complement solve of Y - Z W^T
};

HighEvaluation evaluate_high(const CigarModel& m, bool with_grad) {
  const Matrix yl = rows_of(m.levels[0].outputs);
  const Matrix yh = rows_of(m.levels[1].outputs);
  const Matrix z = map_rows(yh, transposed(m.weights));  // projection onto range(W)
  const auto nl = yl.rows(), nh = yh.rows();
  const Eigen::Index dl = z.cols(), dh = yh.cols();

  Matrix d(nl + nh, dl);
  d << yl, z;
  const ColumnGauss joint = column_gauss(range_cov(m), d, with_grad);
  const ColumnGauss low = column_gauss(noisy_gram(m.low, m.levels[0].inputs), yl, false);

  const Matrix kc = noisy_gram(m.residual, m.levels[1].inputs);
  const Eigen::LLT<Matrix> llt(kc);
  require(llt.info() == Eigen::Success, ErrorCode::kNumerical,
          "Cholesky factorization failed: CIGAR residual covariance");
  const Matrix yc = llt.solve(yh);
  const Matrix zc = llt.solve(z);
  const double logdet_c = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const auto extra = static_cast<double>(dh - dl);
  const double nll_c = 0.5 * (yh.cwiseProduct(yc).sum() - z.cwiseProduct(zc).sum()) +
                       0.5 * extra * logdet_c + 0.5 * static_cast<double>(nh) * extra * kLog2Pi;

  HighEvaluation ev;
  ev.nll = joint.nll - low.nll + nll_c;
  require(std::isfinite(ev.nll), ErrorCode::kNumerical, "CIGAR likelihood is not finite");
  ev.joint_alpha = joint.alpha;
  ev.comp_alpha = yc - map_rows(zc, m.weights.factors);
  if (!with_grad) return ev;

  const Matrix kc_inv = llt.solve(Matrix::Identity(nh, nh));
  const Matrix g_c = 0.5 * extra * kc_inv - 0.5 * (yc * yc.transpose() - zc * zc.transpose());
  ev.grad_kernel = joint.grad_cov.bottomRightCorner(nh, nh) + g_c;
  ev.grad_noise = ev.grad_kernel.trace();
  ev.grad_z = joint.alpha.bottomRows(nh) - zc;
  return ev;
}

}  // namespace

struct CigarState {
  double nll_low = 0.0;
  double nll_high = 0.0;
  Matrix joint_alpha;
  Matrix joint_factor;  // Cholesky of the range system
  Matrix comp_alpha;
  Matrix comp_factor;   // Cholesky of the residual system
};

TuckerWeights orthonormalize(const TuckerWeights& weights) {
  TuckerWeights out;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    const Matrix& w = weights.factors[m];
    require(w.rows() >= w.cols(), ErrorCode::kInvalidArgument,
            "weight factor " + std::to_string(m) + " has more columns than rows");
    const Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    require(sv.size() == 0 || sv.minCoeff() > 1e-12 * std::max(1.0, sv.maxCoeff()),
            ErrorCode::kNumerical, "weight factor " + std::to_string(m) + " is rank deficient");
    out.factors.push_back(svd.matrixU() * svd.matrixV().transpose());
  }
  return out;
}

double orthogonality_error(const TuckerWeights& weights) {
  double err = 0.0;
  for (const auto& w : weights.factors) {
    const Matrix g = w.transpose() * w - Matrix::Identity(w.cols(), w.cols());
    if (g.size() > 0) err = std::max(err, g.cwiseAbs().maxCoeff());
  }
  return err;
}

TgpParams identity_params(const ArdKernelParams& kernel, double log_noise) {
  TgpParams p;
  p.input_kernel = kernel;
  p.log_noise = log_noise;
  p.identity_outputs = true;
  return p;
}

void cigar_prepare(CigarModel& model) {
  require(model.levels.size() == 2, ErrorCode::kInvalidArgument,
          "CIGAR models have exactly two fidelity levels");
  MultiFidelityDataset data{model.levels};
  data.validate();
  const Shape ls = model.output_shape(0), hs = model.output_shape(1);
  require(model.weights.size() == ls.size(), ErrorCode::kShapeMismatch,
          "weight factor count must equal the output mode count");
  for (std::size_t m = 0; m < ls.size(); ++m) {
    require(static_cast<std::size_t>(model.weights.factors[m].rows()) == hs[m] &&
                static_cast<std::size_t>(model.weights.factors[m].cols()) == ls[m],
            ErrorCode::kShapeMismatch,
            "weight factor " + std::to_string(m) + " must be " + std::to_string(hs[m]) + " x " +
                std::to_string(ls[m]));
  }
  require(orthogonality_error(model.weights) <= 1e-8, ErrorCode::kInvalidArgument,
          "CIGAR weight factors must have orthonormal columns");
  for (const TgpParams* p : {&model.low, &model.residual}) {
    require(p->input_kernel.dims() == static_cast<std::size_t>(model.levels[0].inputs.cols()),
            ErrorCode::kShapeMismatch, "kernel dimension does not match the inputs");
  }
  model.plan = build_subset_plan(model.levels[0].inputs, model.levels[1].inputs, model.match_tol);

  auto st = std::make_shared<CigarState>();
  const HighEvaluation ev = evaluate_high(model, false);
  st->nll_high = ev.nll;
  st->nll_low = column_gauss(noisy_gram(model.low, model.levels[0].inputs),
                             rows_of(model.levels[0].outputs), false)
                    .nll;
  st->joint_alpha = ev.joint_alpha;
  st->joint_factor = Eigen::LLT<Matrix>(range_cov(model)).matrixL();
  st->comp_alpha = ev.comp_alpha;
  st->comp_factor = Eigen::LLT<Matrix>(noisy_gram(model.residual, model.levels[1].inputs)).matrixL();
  model.state = std::move(st);
}

CigarModel make_cigar_model(const MultiFidelityDataset& data, TgpParams low, TgpParams residual,
                            TuckerWeights weights, bool center, double match_tol) {
  const MultiFidelityDataset padded = pad_dataset_modes(data);
  padded.validate();
  CigarModel model;
  model.low = std::move(low);
  model.residual = std::move(residual);
  model.low.identity_outputs = model.residual.identity_outputs = true;
  model.weights = std::move(weights);
  model.match_tol = match_tol;
  for (const auto& lv : padded.levels) {
    FidelityLevel l = lv;
    if (center) {
      DenseTensor off = sample_mean(lv.outputs);
      l.outputs = subtract_rows(lv.outputs, off);
      model.offsets.push_back(std::move(off));
    }
    model.levels.push_back(std::move(l));
  }
  cigar_prepare(model);
  return model;
}

CigarNll cigar_nll(const CigarModel& model) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  CigarNll out;
  out.low = model.state->nll_low;
  out.high = model.state->nll_high;
  out.total = out.low + out.high;
  return out;
}

PosteriorField cigar_predict(const CigarModel& model, const Vector& x_star) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  require(x_star.size() == model.levels[0].inputs.cols(), ErrorCode::kShapeMismatch,
          "query dimension does not match the training inputs");
  const CigarState& st = *model.state;
  const Matrix xs = x_star.transpose();
  const Matrix& xl = model.levels[0].inputs;
  const Matrix& xh = model.levels[1].inputs;
  const Vector kr = ard_gram(model.residual.input_kernel, xh, xs).col(0);
  Vector c(xl.rows() + xh.rows());
  c << ard_gram(model.low.input_kernel, xl, xs).col(0),
      ard_gram(model.low.input_kernel, xh, xs).col(0) + kr;

  const Vector range_mean = st.joint_alpha.transpose() * c;
  const Vector hc = st.joint_factor.triangularView<Eigen::Lower>().solve(c);
  const double v_range = model.low.input_kernel.amplitude() +
                         model.residual.input_kernel.amplitude() - hc.squaredNorm();
  const Vector hr = st.comp_factor.triangularView<Eigen::Lower>().solve(kr);
  const double v_comp = model.residual.input_kernel.amplitude() - hr.squaredNorm();

  const Shape hs = model.output_shape(1);
  const Vector mean =
      map_rows(Matrix(range_mean.transpose()), model.weights.factors).transpose() +
      st.comp_alpha.transpose() * kr;
  std::vector<Vector> row_norms;
  for (const auto& w : model.weights.factors) row_norms.push_back(w.rowwise().squaredNorm());
  const DenseTensor dww = outer(row_norms);

  PosteriorField out;
  out.mean = DenseTensor(hs, std::vector<double>(mean.data(), mean.data() + mean.size()));
  if (model.offsets.size() > 1 && model.offsets[1].size() > 0) out.mean = out.mean + model.offsets[1];
  out.variance_diag = DenseTensor(hs);
  const double noise = model.residual.noise();
  for (std::size_t s = 0; s < dww.size(); ++s) {
    const double v = v_range * dww[s] + v_comp * (1.0 - dww[s]);
    out.variance_diag[s] = std::max(v, 0.0) + noise;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct CigarObjective::Impl {
  Stage stage = Stage::kLow;
  CigarModel start;
};

CigarObjective::CigarObjective(const CigarModel& model, Stage stage) {
  auto impl = std::make_shared<Impl>();
  impl->stage = stage;
  impl->start = model;
  impl->start.state.reset();
  impl_ = std::move(impl);
}

namespace {

void put_kernel(Vector& x, Eigen::Index& i, const TgpParams& p) {
  x(i++) = p.input_kernel.log_amplitude;
  x.segment(i, p.input_kernel.log_lengthscales.size()) = p.input_kernel.log_lengthscales;
  i += p.input_kernel.log_lengthscales.size();
  x(i++) = p.log_noise;
}

void take_kernel(const Vector& x, Eigen::Index& i, TgpParams& p) {
  p.input_kernel.log_amplitude = x(i++);
  p.input_kernel.log_lengthscales = x.segment(i, p.input_kernel.log_lengthscales.size());
  i += p.input_kernel.log_lengthscales.size();
  p.log_noise = x(i++);
}

Eigen::Index kernel_size(const TgpParams& p) {
  return 2 + p.input_kernel.log_lengthscales.size();
}

Eigen::Index weight_size(const TuckerWeights& w) {
  Eigen::Index n = 0;
  for (const auto& f : w.factors) n += f.size();
  return n;
}

}  // namespace

Vector CigarObjective::pack(const CigarModel& model) const {
  Eigen::Index i = 0;
  if (impl_->stage == Stage::kLow) {
    Vector x(kernel_size(model.low));
    put_kernel(x, i, model.low);
    return x;
  }
  Vector x(weight_size(model.weights) + kernel_size(model.residual));
  for (const auto& f : model.weights.factors) {
    x.segment(i, f.size()) = Eigen::Map<const Vector>(f.data(), f.size());
    i += f.size();
  }
  put_kernel(x, i, model.residual);
  return x;
}

void CigarObjective::unpack(const Vector& x, CigarModel& model) const {
  Eigen::Index i = 0;
  if (impl_->stage == Stage::kLow) {
    take_kernel(x, i, model.low);
    return;
  }
  for (auto& f : model.weights.factors) {
    Eigen::Map<Vector>(f.data(), f.size()) = x.segment(i, f.size());
    i += f.size();
  }
  take_kernel(x, i, model.residual);
}

void CigarObjective::project(Vector& x) const {
  if (impl_->stage == Stage::kLow) return;
  CigarModel m = impl_->start;
  unpack(x, m);
  m.weights = orthonormalize(m.weights);
  x = pack(m);
}

double CigarObjective::operator()(const Vector& x, Vector* grad) const {
  CigarModel m = impl_->start;
  unpack(x, m);
  const bool with_grad = grad != nullptr;
  try {
    if (impl_->stage == Stage::kLow) {
      const Matrix& xl = m.levels[0].inputs;
      const Matrix k = ard_gram(m.low.input_kernel, xl, xl);
      Matrix kn = k;
      kn.diagonal().array() += m.low.noise();
      const ColumnGauss g = column_gauss(kn, rows_of(m.levels[0].outputs), with_grad);
      if (with_grad) {
        grad->resize(x.size());
        const ArdGradient ag = ard_gram_param_grad(m.low.input_kernel, xl, xl, k, g.grad_cov);
        Eigen::Index i = 0;
        (*grad)(i++) = ag.log_amplitude;
        grad->segment(i, ag.log_lengthscales.size()) = ag.log_lengthscales;
        i += ag.log_lengthscales.size();
        (*grad)(i++) = g.grad_cov.trace() * std::exp(m.low.log_noise);
      }
      return g.nll;
    }
    const HighEvaluation ev = evaluate_high(m, with_grad);
    if (with_grad) {
      grad->resize(x.size());
      const Matrix& xh = m.levels[1].inputs;
      const auto wg = tucker_weight_grad(m.levels[1].outputs,
                                         tensor_from_rows(ev.grad_z, m.output_shape(0)),
                                         m.weights);
      Eigen::Index i = 0;
      for (const auto& g : wg) {
        grad->segment(i, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
        i += g.size();
      }
      const Matrix kr = ard_gram(m.residual.input_kernel, xh, xh);
      const ArdGradient ag =
          ard_gram_param_grad(m.residual.input_kernel, xh, xh, kr, ev.grad_kernel);
      (*grad)(i++) = ag.log_amplitude;
      grad->segment(i, ag.log_lengthscales.size()) = ag.log_lengthscales;
      i += ag.log_lengthscales.size();
      (*grad)(i++) = ev.grad_noise * std::exp(m.residual.log_noise);
    }
    return ev.nll;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumerical) throw;
    if (grad) grad->setZero(x.size());
    return std::numeric_limits<double>::infinity();
  }
}

CigarFitResult cigar_fit(const MultiFidelityDataset& data, const CigarFitConfig& config) {
  data.validate();
  require(data.num_levels() == 2, ErrorCode::kInvalidArgument,
          "CIGAR fits exactly two fidelity levels");
  const MultiFidelityDataset padded = pad_dataset_modes(data);
  const Shape ls = padded.levels[0].outputs.trailing_shape();
  const Shape hs = padded.levels[1].outputs.trailing_shape();
  for (std::size_t m = 0; m < ls.size(); ++m) {
    require(hs[m] >= ls[m], ErrorCode::kInvalidArgument,
            "CIGAR needs every high-fidelity mode at least as large as the low one (mode " +
                std::to_string(m) + ")");
  }

  CigarFitResult res;
  CigarModel& model = res.model;
  model.match_tol = config.match_tol;
  for (const auto& lv : padded.levels) {
    FidelityLevel l = lv;
    if (config.center) {
      DenseTensor off = sample_mean(lv.outputs);
      l.outputs = subtract_rows(lv.outputs, off);
      model.offsets.push_back(std::move(off));
    }
    model.levels.push_back(std::move(l));
  }
  model.weights = init_weights(ls, hs);
  model.plan = build_subset_plan(model.levels[0].inputs, model.levels[1].inputs, config.match_tol);

  auto initial = [&](const Matrix& x, const DenseTensor& y) {
    const Matrix rows = rows_of(y);
    const double var = rows.size() > 0 ? rows.squaredNorm() / static_cast<double>(rows.size()) : 0.0;
    const double amp = var > 1e-12 ? var : 1.0;
    ArdKernelParams k;
    k.log_amplitude = std::log(amp);
    k.log_lengthscales.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double range = x.col(c).maxCoeff() - x.col(c).minCoeff();
      k.log_lengthscales(c) = std::log(range > 1e-12 ? range : 1.0);
    }
    return identity_params(k, std::log(1e-3 * amp));
  };

  try {
    model.low = initial(model.levels[0].inputs, model.levels[0].outputs);
    model.residual = model.low;
    const CigarObjective low_obj(model, CigarObjective::Stage::kLow);
    OptimResult low = minimize(std::cref(low_obj), low_obj.pack(model), config.optim);
    require(std::isfinite(low.objective), ErrorCode::kFitFailure,
            "low-level fit diverged (non-finite objective)");
    low_obj.unpack(low.x, model);
    res.stages.push_back(std::move(low));
  } catch (const Error& e) {
    throw Error(e.code(), "fitting level 0: " + std::string(e.what()));
  }

  try {
    // Initial residual scale from the high data minus the mapped low posterior mean.
    const Matrix& xl = model.levels[0].inputs;
    const Matrix& xh = model.levels[1].inputs;
    const Matrix yl = rows_of(model.levels[0].outputs);
    const Matrix low_mean =
        ard_gram(model.low.input_kernel, xh, xl) * noisy_gram(model.low, xl).llt().solve(yl);
    const Matrix r0 = rows_of(model.levels[1].outputs) - map_rows(low_mean, model.weights.factors);
    model.residual = initial(xh, tensor_from_rows(r0, hs));

    const CigarObjective high_obj(model, CigarObjective::Stage::kHigh);
    double worst = 0.0;
    Objective tracked = [&](const Vector& x, Vector* g) {
      CigarModel probe = model;
      high_obj.unpack(x, probe);
      worst = std::max(worst, orthogonality_error(probe.weights));
      return high_obj(x, g);
    };
    Projector proj = [&](Vector& x) { high_obj.project(x); };
    OptimResult high = minimize(tracked, high_obj.pack(model), config.optim, proj);
    require(std::isfinite(high.objective), ErrorCode::kFitFailure,
            "high-level fit diverged (non-finite objective)");
    high_obj.unpack(high.x, model);
    res.max_orthogonality_error = worst;
    res.stages.push_back(std::move(high));
    cigar_prepare(model);
  } catch (const Error& e) {
    throw Error(e.code(), "fitting level 1 (given level 0): " + std::string(e.what()));
  }
  return res;
}

}  // namespace mfgar
