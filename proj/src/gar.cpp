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

#include "mfgar/gar.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "mfgar/error.hpp"

namespace mfgar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

bool same_input(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j, double tol) {
  const double dist = (a.row(i) - b.row(j)).norm();
  return tol > 0.0 ? dist <= tol : dist == 0.0;
}

Matrix rows_of(const DenseTensor& t) { return t.as_matrix(); }

DenseTensor tensor_from_rows(const Matrix& rows, const Shape& field_shape) {
  Shape shape{static_cast<std::size_t>(rows.rows())};
  shape.insert(shape.end(), field_shape.begin(), field_shape.end());
  const RowMatrix r = rows;
  return DenseTensor(shape, std::vector<double>(r.data(), r.data() + r.size()));
}

/// Applies W (Kronecker over output modes) to every row.
Matrix map_rows(const Matrix& rows, const TuckerWeights& w) {
  return kron_apply(w.factors, rows.transpose()).transpose();
}

/// (I_n (x) W) applied to the columns of x (x has n * d_low rows).
Matrix map_blocks(const Matrix& x, const TuckerWeights& w, Eigen::Index n) {
  std::vector<Matrix> fs{Matrix::Identity(n, n)};
  fs.insert(fs.end(), w.factors.begin(), w.factors.end());
  return kron_apply(fs, x);
}

/// (I_n (x) W) C (I_n (x) W)^T.
Matrix map_cov(const Matrix& c, const TuckerWeights& w, Eigen::Index n) {
  const Matrix left = map_blocks(c, w, n);
  return map_blocks(Matrix(left.transpose()), w, n).transpose();
}

Matrix cholesky(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  require(llt.info() == Eigen::Success, ErrorCode::kNumerical,
          std::string("Cholesky factorization failed: ") + what);
  return llt.matrixL();
}

double noise_of_level(const GarModel& model, std::size_t level) {
  return level == 0 ? model.base.noise() : model.transitions[level - 1].residual.noise();
}

const TgpParams& params_of_level(const GarModel& model, std::size_t level) {
  return level == 0 ? model.base : model.transitions[level - 1].residual;
}

void check_weights(const TuckerWeights& w, const Shape& low, const Shape& high) {
  require(w.size() == low.size() && w.size() == high.size(), ErrorCode::kShapeMismatch,
          "weight factor count must equal the output mode count");
  for (std::size_t m = 0; m < w.size(); ++m) {
    require(static_cast<std::size_t>(w.factors[m].rows()) == high[m] &&
                static_cast<std::size_t>(w.factors[m].cols()) == low[m],
            ErrorCode::kShapeMismatch,
            "weight factor " + std::to_string(m) + " must be " + std::to_string(high[m]) + " x " +
                std::to_string(low[m]));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset and plans

std::size_t MultiFidelityDataset::input_dim() const {
  require(!levels.empty(), ErrorCode::kInvalidArgument, "dataset has no levels");
  return static_cast<std::size_t>(levels.front().inputs.cols());
}

void MultiFidelityDataset::validate() const {
  require(levels.size() >= 1, ErrorCode::kInvalidArgument, "dataset has no levels");
  const auto l = levels.front().inputs.cols();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& lv = levels[i];
    const std::string tag = "level " + std::to_string(i) + ": ";
    require(lv.inputs.cols() == l, ErrorCode::kShapeMismatch,
            tag + "input dimension differs from level 0");
    require(lv.outputs.order() >= 2, ErrorCode::kShapeMismatch,
            tag + "outputs must be (N, d_1, ...) with at least one output mode");
    require(lv.outputs.dim(0) == static_cast<std::size_t>(lv.inputs.rows()),
            ErrorCode::kShapeMismatch, tag + "output samples do not match input rows");
    require(lv.inputs.rows() > 0, ErrorCode::kInvalidArgument, tag + "no samples");
    require(lv.inputs.allFinite() && lv.outputs.as_vector().allFinite(),
            ErrorCode::kInvalidArgument, tag + "non-finite data");
    if (i > 0) {
      require(lv.inputs.rows() <= levels[i - 1].inputs.rows(), ErrorCode::kInvalidArgument,
              tag + "higher fidelity levels may not have more samples than lower ones");
      require(lv.outputs.order() == levels[i - 1].outputs.order(), ErrorCode::kShapeMismatch,
              tag + "output order differs from the level below (pad modes first)");
    }
  }
}

MultiFidelityDataset pad_dataset_modes(const MultiFidelityDataset& data) {
  std::size_t order = 0;
  for (const auto& lv : data.levels) order = std::max(order, lv.outputs.order());
  MultiFidelityDataset out = data;
  for (auto& lv : out.levels) lv.outputs = pad_modes(lv.outputs, order);
  return out;
}

SubsetPlan build_subset_plan(const Matrix& low_inputs, const Matrix& high_inputs, double tol) {
  require(low_inputs.cols() == high_inputs.cols(), ErrorCode::kShapeMismatch,
          "input dimensions of adjacent levels differ");
  require(tol >= 0.0, ErrorCode::kInvalidArgument, "matching tolerance must be nonnegative");
  SubsetPlan plan;
  for (Eigen::Index h = 0; h < high_inputs.rows(); ++h) {
    std::optional<Eigen::Index> hit;
    for (Eigen::Index l = 0; l < low_inputs.rows(); ++l) {
      if (!same_input(high_inputs, h, low_inputs, l, tol)) continue;
      require(!hit.has_value(), ErrorCode::kInvalidArgument,
              "high-fidelity sample " + std::to_string(h) +
                  " matches several low-fidelity samples; matching is ambiguous");
      hit = l;
    }
    if (hit) {
      plan.matched_high.push_back(static_cast<std::size_t>(h));
      plan.matched_low.push_back(static_cast<std::size_t>(*hit));
    } else {
      plan.unmatched_high.push_back(static_cast<std::size_t>(h));
    }
  }
  return plan;
}

SubsetPlan build_subset_plan(const MultiFidelityDataset& data, std::size_t level, double tol) {
  require(level >= 1 && level < data.num_levels(), ErrorCode::kInvalidArgument,
          "plan level must name a level with one below it");
  return build_subset_plan(data.levels[level - 1].inputs, data.levels[level].inputs, tol);
}

TuckerWeights init_weights(const Shape& low, const Shape& high) {
  require(low.size() == high.size(), ErrorCode::kShapeMismatch,
          "levels must have the same number of output modes");
  TuckerWeights w;
  for (std::size_t m = 0; m < low.size(); ++m) {
    w.factors.push_back(Matrix::Identity(static_cast<Eigen::Index>(high[m]),
                                         static_cast<Eigen::Index>(low[m])));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Imaginary-set algebra for non-subset transitions.
//
// With A = K_r (x) S_r + noise I over the high inputs and U = P (x) W placing
// the unknown low values at the unmatched rows, the marginal covariance of the
// high data is A + U V U^T (V the posterior covariance of those low values).
// Everything below is Woodbury algebra in the eigenbasis of A.

namespace {

Matrix select_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

TuckerWeights transposed(const TuckerWeights& w) {
  TuckerWeights t;
  for (const auto& f : w.factors) t.factors.push_back(f.transpose());
  return t;
}

/// Low values at every high row: twins' data for matched rows, `hat` for the rest.
Matrix lower_at_high(const Matrix& low_rows, const SubsetPlan& plan, const Matrix& hat) {
  Matrix g(static_cast<Eigen::Index>(plan.num_high()), low_rows.cols());
  for (std::size_t k = 0; k < plan.matched_high.size(); ++k) {
    g.row(static_cast<Eigen::Index>(plan.matched_high[k])) =
        low_rows.row(static_cast<Eigen::Index>(plan.matched_low[k]));
  }
  for (std::size_t k = 0; k < plan.unmatched_high.size(); ++k) {
    g.row(static_cast<Eigen::Index>(plan.unmatched_high[k])) = hat.row(static_cast<Eigen::Index>(k));
  }
  return g;
}

Matrix as_rows(const Vector& v, Eigen::Index cols) {
  return Eigen::Map<const RowMatrix>(v.data(), v.size() / cols, cols);
}

Vector flatten_rows(const Matrix& m) {
  const RowMatrix r = m;
  return Eigen::Map<const Vector>(r.data(), r.size());
}

/// U x: (N_hat d_low) vector -> high tensor with zeros at matched rows.
DenseTensor apply_u(const Vector& x, const SubsetPlan& plan, const TuckerWeights& w,
                    Eigen::Index d_low, const Shape& high_shape) {
  const Matrix mapped = map_rows(as_rows(x, d_low), w);
  Matrix full = Matrix::Zero(static_cast<Eigen::Index>(plan.num_high()), mapped.cols());
  for (std::size_t k = 0; k < plan.unmatched_high.size(); ++k) {
    full.row(static_cast<Eigen::Index>(plan.unmatched_high[k])) =
        mapped.row(static_cast<Eigen::Index>(k));
  }
  return tensor_from_rows(full, high_shape);
}

/// U^T t for a high tensor t.
Vector apply_ut(const DenseTensor& t, const SubsetPlan& plan, const TuckerWeights& wt) {
  return flatten_rows(map_rows(select_rows(rows_of(t), plan.unmatched_high), wt));
}

/// Adds sign * dL/dW_m for G = sum_n u_n v_n^T (rows: high fields, low fields).
void add_weight_grad(std::vector<Matrix>& grads, const Matrix& u, const Matrix& v,
                     const TuckerWeights& w, const Shape& high_shape, const Shape& low_shape,
                     double sign) {
  if (u.rows() == 0) return;
  const auto g = tucker_weight_grad(tensor_from_rows(u, high_shape),
                                    tensor_from_rows(v, low_shape), w);
  for (std::size_t m = 0; m < g.size(); ++m) grads[m] += sign * g[m];
}

/// Contracts a high-field weight vector h into sum_s h[s] q_s q_s^T where q_s is
/// row s of (V_1^T W_1) (x) ... (x) (V_M^T W_M), one mode at a time.
class ImagContraction {
 public:
  ImagContraction(const EigenFactors& eigs, const TuckerWeights& w) {
    Shape pair_shape;
    for (std::size_t m = 0; m < w.size(); ++m) {
      const Matrix q = eigs.factors[m + 1].vectors.transpose() * w.factors[m];
      const Eigen::Index dl = q.cols();
      Matrix q2(dl * dl, q.rows());
      for (Eigen::Index c = 0; c < dl; ++c) {
        for (Eigen::Index c2 = 0; c2 < dl; ++c2) {
          q2.row(c * dl + c2) = q.col(c).cwiseProduct(q.col(c2)).transpose();
        }
      }
      high_shape_.push_back(static_cast<std::size_t>(q.rows()));
      low_shape_.push_back(static_cast<std::size_t>(dl));
      pair_shape.push_back(static_cast<std::size_t>(dl * dl));
      q_.push_back(q);
      q2_.push_back(std::move(q2));
    }
    d_low_ = static_cast<Eigen::Index>(shape_size(low_shape_));
    const std::size_t np = shape_size(pair_shape);
    row_of_.resize(np);
    col_of_.resize(np);
    for (std::size_t p = 0; p < np; ++p) {
      std::size_t lin = p, r = 0, c = 0, stride = 1;
      for (std::size_t m = pair_shape.size(); m-- > 0;) {
        const std::size_t idx = lin % pair_shape[m];
        lin /= pair_shape[m];
        r += (idx / low_shape_[m]) * stride;
        c += (idx % low_shape_[m]) * stride;
        stride *= low_shape_[m];
      }
      row_of_[p] = static_cast<Eigen::Index>(r);
      col_of_[p] = static_cast<Eigen::Index>(c);
    }
  }

  Matrix block(const Vector& h) const {
    DenseTensor t(high_shape_, std::vector<double>(h.data(), h.data() + h.size()));
    for (std::size_t m = 0; m < q2_.size(); ++m) t = mode_product(t, q2_[m], m);
    Matrix out(d_low_, d_low_);
    for (std::size_t p = 0; p < t.size(); ++p) out(row_of_[p], col_of_[p]) = t[p];
    return out;
  }

  const std::vector<Matrix>& q() const { return q_; }

 private:
  Shape high_shape_, low_shape_;
  std::vector<Matrix> q_, q2_;
  std::vector<Eigen::Index> row_of_, col_of_;
  Eigen::Index d_low_ = 0;
};

RowMatrix inverse_denom(const EigenFactors& eigs, double noise) {
  DenseTensor dn = joint_eigenvalues(eigs);
  dn.as_vector().array() += noise;
  RowMatrix inv = dn.as_matrix();
  return inv.cwiseInverse();
}

/// H = U^T A^{-1} U.
Matrix imag_gram(const TgpFactorization& f, const SubsetPlan& plan, const ImagContraction& ic,
                 Eigen::Index d_low) {
  const Matrix& v0 = f.eigs.factors[0].vectors;
  RowMatrix dinv = f.denom.as_matrix();
  dinv = dinv.cwiseInverse();
  const auto nh = static_cast<Eigen::Index>(plan.unmatched_high.size());
  Matrix h(nh * d_low, nh * d_low);
  for (Eigen::Index a = 0; a < nh; ++a) {
    const auto na = static_cast<Eigen::Index>(plan.unmatched_high[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b <= a; ++b) {
      const auto nb = static_cast<Eigen::Index>(plan.unmatched_high[static_cast<std::size_t>(b)]);
      const Vector w = (v0.row(na).cwiseProduct(v0.row(nb)) * dinv).transpose();
      const Matrix blk = ic.block(w);
      h.block(a * d_low, b * d_low, d_low, d_low) = blk;
      if (a != b) h.block(b * d_low, a * d_low, d_low, d_low) = blk.transpose();
    }
  }
  return h;
}

/// (k_r(q, X) (x) S_r) A^{-1} U for every query row q: (|Q| d_high) x (N_hat d_low).
Matrix imag_cross(const TgpModel& residual, const TuckerWeights& w, const SubsetPlan& plan,
                  const Matrix& queries) {
  const auto cache = residual.ensure_cache();
  const auto& eigs = cache->eigs;
  const Matrix& v0 = eigs.factors[0].vectors;
  const RowMatrix dinv = inverse_denom(eigs, residual.params.noise());
  std::vector<Vector> out_vals;
  std::vector<Matrix> out_vecs, q;
  for (std::size_t m = 1; m < eigs.factors.size(); ++m) {
    out_vals.push_back(eigs.factors[m].values);
    out_vecs.push_back(eigs.factors[m].vectors);
    q.push_back(eigs.factors[m].vectors.transpose() * w.factors[m - 1]);
  }
  const Vector lam = outer(out_vals).as_vector();
  const Matrix qd = kron_all(q);
  const Eigen::Index dh = qd.rows(), dl = qd.cols();
  const Matrix kq = ard_gram(residual.params.input_kernel, queries, residual.inputs);
  const Matrix a = v0.transpose() * kq.transpose();  // N x |Q|
  const auto nh = static_cast<Eigen::Index>(plan.unmatched_high.size());
  Matrix out(queries.rows() * dh, nh * dl);
  for (Eigen::Index qi = 0; qi < queries.rows(); ++qi) {
    for (Eigen::Index k = 0; k < nh; ++k) {
      const auto n = static_cast<Eigen::Index>(plan.unmatched_high[static_cast<std::size_t>(k)]);
      const Vector h = (a.col(qi).transpose().cwiseProduct(v0.row(n)) * dinv).transpose();
      const Matrix x = lam.cwiseProduct(h).asDiagonal() * qd;
      out.block(qi * dh, k * dl, dh, dl) = kron_apply(out_vecs, x);
    }
  }
  return out;
}

struct WoodburyResult {
  double nll = 0.0;
  Vector shift;                    // posterior mean shift of the imaginary values
  Matrix factor;                   // L with L L^T their posterior covariance
  DenseTensor expected_residual;   // Y - W E[g_low(X)]
  std::optional<TgpGradient> grad; // residual parameters
  std::vector<Matrix> grad_w;      // per weight factor
};

WoodburyResult woodbury_evaluate(const TgpParams& rp, const Matrix& xh, const DenseTensor& yh,
                                 const TuckerWeights& w, const SubsetPlan& plan,
                                 const Matrix& gfull, const Matrix& lv, bool with_grad) {
  const Shape hs = yh.trailing_shape();
  Shape ls;
  for (const auto& f : w.factors) ls.push_back(static_cast<std::size_t>(f.cols()));
  const Eigen::Index dl = gfull.cols();
  const TuckerWeights wt = transposed(w);

  const TgpFactorization f = tgp_factorize(rp, xh, hs);
  const auto dn = f.denom.as_vector().array();
  const DenseTensor r0 = yh - tensor_from_rows(map_rows(gfull, w), hs);
  DenseTensor rot = to_eigenbasis(r0, f.eigs);
  double quad = (rot.as_vector().array().square() / dn).sum();
  double logdet = dn.log().sum();
  rot.as_vector().array() /= dn;
  const Vector b = apply_ut(from_eigenbasis(rot, f.eigs), plan, wt);

  const ImagContraction ic(f.eigs, w);
  const Matrix h = imag_gram(f, plan, ic, dl);
  Matrix mt = lv.transpose() * h * lv;
  mt.diagonal().array() += 1.0;
  const Matrix l2 = cholesky(mt, "imaginary-set system");
  logdet += 2.0 * l2.diagonal().array().log().sum();

  WoodburyResult out;
  out.factor = l2.triangularView<Eigen::Lower>().solve(Matrix(lv.transpose())).transpose();
  out.shift = out.factor * (out.factor.transpose() * b);
  quad -= b.dot(out.shift);
  out.nll = 0.5 * quad + 0.5 * logdet + 0.5 * static_cast<double>(yh.size()) * kLog2Pi;
  require(std::isfinite(out.nll), ErrorCode::kNumerical,
          "transition likelihood is not finite (conditioning failure)");
  out.expected_residual = r0 - apply_u(out.shift, plan, w, dl, hs);
  if (!with_grad) return out;

  // Sigma^{-1} r0 = A^{-1} (r0 - U shift).
  DenseTensor beta = to_eigenbasis(out.expected_residual, f.eigs);
  beta.as_vector().array() /= dn;
  const DenseTensor alpha = from_eigenbasis(beta, f.eigs);

  // Sigma^{-1} = A^{-1} - sum_j z_j z_j^T with z_j = A^{-1} U l_j.
  const std::size_t nf = f.eigs.factors.size();
  std::vector<Matrix> acc(nf);
  for (std::size_t k = 0; k < nf; ++k) {
    const auto dk = f.eigs.factors[k].values.size();
    acc[k] = Matrix::Zero(dk, dk);
  }
  out.grad_w.clear();
  for (const auto& wf : w.factors) out.grad_w.push_back(Matrix::Zero(wf.rows(), wf.cols()));
  double sum_z = 0.0;
  for (Eigen::Index j = 0; j < out.factor.cols(); ++j) {
    const Vector ell = out.factor.col(j);
    DenseTensor z = to_eigenbasis(apply_u(ell, plan, w, dl, hs), f.eigs);
    z.as_vector().array() /= dn;
    for (std::size_t k = 0; k < nf; ++k) acc[k] += weighted_unfold_product(f, k, z, z);
    sum_z += z.as_vector().squaredNorm();
    const Matrix zeta = select_rows(rows_of(from_eigenbasis(z, f.eigs)), plan.unmatched_high);
    add_weight_grad(out.grad_w, zeta, as_rows(ell, dl), w, hs, ls, 1.0);
  }

  std::vector<Matrix> grad_factor(nf);
  for (std::size_t k = 0; k < nf; ++k) {
    Matrix g = -0.5 * weighted_unfold_product(f, k, beta, beta) - 0.5 * acc[k];
    g.diagonal() += 0.5 * trace_weights(f, k);
    const Matrix& vk = f.eigs.factors[k].vectors;
    grad_factor[k] = vk * g * vk.transpose();
  }
  const double dnoise =
      0.5 * (1.0 / dn).sum() - 0.5 * beta.as_vector().squaredNorm() - 0.5 * sum_z;
  out.grad = tgp_chain_gradient(rp, xh, f, grad_factor, dnoise);

  // Data term -alpha^T W g and the imaginary covariance term -1/2 alpha^T U V U^T alpha.
  const Matrix alpha_rows = rows_of(alpha);
  add_weight_grad(out.grad_w, alpha_rows, gfull, w, hs, ls, -1.0);
  const Vector v = lv * (lv.transpose() * apply_ut(alpha, plan, wt));
  add_weight_grad(out.grad_w, select_rows(alpha_rows, plan.unmatched_high), as_rows(v, dl), w,
                  hs, ls, -1.0);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Posteriors

namespace {

JointPosterior level_posterior(const GarModel& model, const GarState& st, std::size_t level,
                               const Matrix& queries, const std::vector<char>& noisy);

/// Posterior over queries none of which is an observed data point of `level`.
JointPosterior free_posterior(const GarModel& model, const GarState& st, std::size_t level,
                              const Matrix& queries, const std::vector<char>& noisy) {
  if (level == 0) return tgp_joint_posterior(st.base, queries, noisy);
  const std::size_t t = level - 1;
  const GarTransition& tr = model.transitions[t];
  const TransitionState& ts = st.transitions[t];
  const auto nq = queries.rows();
  const JointPosterior res =
      tgp_joint_posterior(ts.residual, queries, std::vector<char>(noisy.size(), 0));

  JointPosterior out;
  if (ts.subset) {
    const JointPosterior low = level_posterior(model, st, t, queries, noisy);
    out.mean = map_rows(low.mean, tr.weights) + res.mean;
    out.cov = map_cov(low.cov, tr.weights, nq) + res.cov;
  } else {
    const auto nh = ts.hat_inputs.rows();
    Matrix q(nq + nh, queries.cols());
    q << queries, ts.hat_inputs;
    std::vector<char> flags = noisy;
    flags.resize(static_cast<std::size_t>(nq + nh), 1);
    const JointPosterior low = level_posterior(model, st, t, q, flags);
    const Eigen::Index dl = low.mean.cols();
    const Eigen::Index nqd = nq * dl, nhd = nh * dl;
    const Matrix c_hq = low.cov.block(nqd, 0, nhd, nqd);
    const auto lv = ts.hat_cov_chol.triangularView<Eigen::Lower>();
    const Matrix gm = lv.transpose().solve(lv.solve(c_hq)).transpose();  // C_qh V^{-1}
    const Matrix cc = low.cov.topLeftCorner(nqd, nqd) - gm * c_hq;
    const Matrix mean_low = low.mean.topRows(nq) + as_rows(gm * ts.post_shift, dl);
    const Matrix b = map_blocks(gm, tr.weights, nq) - imag_cross(ts.residual, tr.weights,
                                                                 tr.plan, queries);
    const Matrix f = b * ts.post_factor;
    out.mean = map_rows(mean_low, tr.weights) + res.mean;
    out.cov = map_cov(cc, tr.weights, nq) + res.cov + f * f.transpose();
  }
  const double noise = tr.residual.noise();
  const Eigen::Index d = out.mean.cols();
  for (Eigen::Index i = 0; i < nq; ++i) {
    for (Eigen::Index j = 0; j < nq; ++j) {
      if (noisy[static_cast<std::size_t>(i)] && noisy[static_cast<std::size_t>(j)] &&
          same_input(queries, i, queries, j, model.match_tol)) {
        out.cov.block(i * d, j * d, d, d).diagonal().array() += noise;
      }
    }
  }
  return out;
}

JointPosterior level_posterior(const GarModel& model, const GarState& st, std::size_t level,
                               const Matrix& queries, const std::vector<char>& noisy) {
  require(static_cast<std::size_t>(queries.rows()) == noisy.size(), ErrorCode::kShapeMismatch,
          "one noise flag per query row is required");
  const FidelityLevel& lv = model.levels[level];
  const auto nq = queries.rows();
  const auto d = static_cast<Eigen::Index>(shape_size(model.output_shape(level)));
  const Matrix y = rows_of(lv.outputs);

  JointPosterior out;
  out.mean = Matrix::Zero(nq, d);
  out.cov = Matrix::Zero(nq * d, nq * d);
  std::vector<Eigen::Index> free_rows;
  for (Eigen::Index q = 0; q < nq; ++q) {
    if (noisy[static_cast<std::size_t>(q)]) {
      if (auto hit = find_input(lv.inputs, queries.row(q).transpose(), model.match_tol)) {
        out.mean.row(q) = y.row(static_cast<Eigen::Index>(*hit));
        continue;
      }
    }
    free_rows.push_back(q);
  }
  const auto nf = static_cast<Eigen::Index>(free_rows.size());
  if (nf == 0) return out;
  Matrix qf(nf, queries.cols());
  std::vector<char> nflags(static_cast<std::size_t>(nf));
  for (Eigen::Index j = 0; j < nf; ++j) {
    qf.row(j) = queries.row(free_rows[static_cast<std::size_t>(j)]);
    nflags[static_cast<std::size_t>(j)] = noisy[static_cast<std::size_t>(free_rows[static_cast<std::size_t>(j)])];
  }
  const JointPosterior fp = free_posterior(model, st, level, qf, nflags);
  for (Eigen::Index i = 0; i < nf; ++i) {
    const Eigen::Index ri = free_rows[static_cast<std::size_t>(i)];
    out.mean.row(ri) = fp.mean.row(i);
    for (Eigen::Index j = 0; j < nf; ++j) {
      out.cov.block(ri * d, free_rows[static_cast<std::size_t>(j)] * d, d, d) =
          fp.cov.block(i * d, j * d, d, d);
    }
  }
  return out;
}

TransitionState build_transition_state(const GarModel& model, const GarState& st,
                                       std::size_t t) {
  const GarTransition& tr = model.transitions[t];
  const FidelityLevel& low = model.levels[t];
  const FidelityLevel& high = model.levels[t + 1];
  TransitionState ts;
  ts.subset = tr.plan.is_subset() && !model.always_marginalize;
  ts.residual.params = tr.residual;
  ts.residual.inputs = high.inputs;
  const Matrix low_rows = rows_of(low.outputs);
  if (ts.subset) {
    const Matrix g = lower_at_high(low_rows, tr.plan, Matrix());
    ts.residual.outputs = high.outputs - tensor_from_rows(map_rows(g, tr.weights),
                                                           high.outputs.trailing_shape());
    ts.residual.cache = std::make_shared<const TgpCache>(
        build_tgp_cache(ts.residual.params, ts.residual.inputs, ts.residual.outputs));
    ts.nll = tgp_nll(ts.residual);
    return ts;
  }
  const auto nh = static_cast<std::size_t>(tr.plan.unmatched_high.size());
  require(nh * static_cast<std::size_t>(low_rows.cols()) <= model.imaginary_cap,
          ErrorCode::kUnsupported,
          "transition " + std::to_string(t) + ": " + std::to_string(nh) +
              " unmatched samples exceed the imaginary-set size cap");
  ts.hat_inputs = select_rows(high.inputs, tr.plan.unmatched_high);
  const JointPosterior hat =
      level_posterior(model, st, t, ts.hat_inputs, std::vector<char>(nh, 1));
  ts.hat_mean = hat.mean;
  ts.hat_cov_chol = cholesky(hat.cov, "posterior of the unmatched low-fidelity values");
  const Matrix g = lower_at_high(low_rows, tr.plan, ts.hat_mean);
  const WoodburyResult wr = woodbury_evaluate(tr.residual, high.inputs, high.outputs,
                                              tr.weights, tr.plan, g, ts.hat_cov_chol, false);
  ts.nll = wr.nll;
  ts.post_factor = wr.factor;
  ts.post_shift = wr.shift;
  ts.residual.outputs = wr.expected_residual;
  ts.residual.cache = std::make_shared<const TgpCache>(
      build_tgp_cache(ts.residual.params, ts.residual.inputs, ts.residual.outputs));
  return ts;
}

/// Posterior of one level's noise-free field at a single point, kept factored:
/// covariance = sum of CovTerms + sum of L L^T over `factors`.
struct FieldPosterior {
  DenseTensor mean;
  std::vector<CovTerm> terms;
  std::vector<Matrix> factors;
};

Matrix psd_sqrt(const Matrix& c) {
  const SymEig e = sym_eig(0.5 * (c + c.transpose()));
  return e.vectors * e.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

FieldPosterior field_posterior(const GarModel& model, const GarState& st, std::size_t level,
                               const Vector& x) {
  FieldPosterior out;
  if (level == 0) {
    PointPosterior pp = tgp_point_posterior(st.base, x);
    out.mean = std::move(pp.mean);
    out.terms.push_back(std::move(pp.cov));
    return out;
  }
  const std::size_t t = level - 1;
  const GarTransition& tr = model.transitions[t];
  const TransitionState& ts = st.transitions[t];
  PointPosterior res = tgp_point_posterior(ts.residual, x);
  if (ts.subset) {
    FieldPosterior low = field_posterior(model, st, t, x);
    out.mean = tucker_apply(low.mean, tr.weights) + res.mean;
    for (const auto& term : low.terms) out.terms.push_back(term.mapped(tr.weights));
    for (const auto& f : low.factors) out.factors.push_back(kron_apply(tr.weights.factors, f));
  } else {
    const auto nh = ts.hat_inputs.rows();
    Matrix q(1 + nh, x.size());
    q.row(0) = x.transpose();
    q.bottomRows(nh) = ts.hat_inputs;
    std::vector<char> flags(static_cast<std::size_t>(1 + nh), 1);
    flags[0] = 0;
    const JointPosterior low = level_posterior(model, st, t, q, flags);
    const Eigen::Index dl = low.mean.cols();
    const Matrix c_hq = low.cov.block(dl, 0, nh * dl, dl);
    const auto lv = ts.hat_cov_chol.triangularView<Eigen::Lower>();
    const Matrix gm = lv.transpose().solve(lv.solve(c_hq)).transpose();
    const Matrix cc = low.cov.topLeftCorner(dl, dl) - gm * c_hq;
    const Vector mean_low = low.mean.row(0).transpose() + gm * ts.post_shift;
    const Shape ls = model.output_shape(t);
    out.mean = tucker_apply(DenseTensor(ls, std::vector<double>(mean_low.data(),
                                                                mean_low.data() + dl)),
                            tr.weights) +
               res.mean;
    out.factors.push_back(kron_apply(tr.weights.factors, psd_sqrt(cc)));
    const Matrix b = kron_apply(tr.weights.factors, gm) -
                     imag_cross(ts.residual, tr.weights, tr.plan, q.topRows(1));
    out.factors.push_back(b * ts.post_factor);
  }
  out.terms.push_back(std::move(res.cov));
  return out;
}

}  // namespace

void gar_prepare(GarModel& model) {
  require(model.levels.size() == model.transitions.size() + 1, ErrorCode::kInvalidArgument,
          "a model with L levels needs L - 1 transitions");
  MultiFidelityDataset data{model.levels};
  data.validate();
  for (std::size_t t = 0; t < model.transitions.size(); ++t) {
    check_weights(model.transitions[t].weights, model.output_shape(t), model.output_shape(t + 1));
    model.transitions[t].plan =
        build_subset_plan(model.levels[t].inputs, model.levels[t + 1].inputs, model.match_tol);
  }
  auto st = std::make_shared<GarState>();
  st->base.params = model.base;
  st->base.inputs = model.levels[0].inputs;
  st->base.outputs = model.levels[0].outputs;
  st->base.cache = std::make_shared<const TgpCache>(
      build_tgp_cache(st->base.params, st->base.inputs, st->base.outputs));
  for (std::size_t t = 0; t < model.transitions.size(); ++t) {
    st->transitions.push_back(build_transition_state(model, *st, t));
  }
  model.state = std::move(st);
}

GarModel make_gar_model(const MultiFidelityDataset& data, TgpParams base,
                        std::vector<GarTransition> transitions, bool center, double match_tol) {
  const MultiFidelityDataset padded = pad_dataset_modes(data);
  padded.validate();
  GarModel model;
  model.base = std::move(base);
  model.transitions = std::move(transitions);
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
  gar_prepare(model);
  return model;
}

GarNll gar_nll(const GarModel& model) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  GarNll out;
  out.per_level.push_back(tgp_nll(model.state->base));
  for (const auto& ts : model.state->transitions) out.per_level.push_back(ts.nll);
  for (double v : out.per_level) out.total += v;
  return out;
}

JointPosterior gar_level_posterior(const GarModel& model, std::size_t level,
                                   const Matrix& queries, const std::vector<char>& noisy) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  require(level < model.num_levels(), ErrorCode::kInvalidArgument, "level out of range");
  require(queries.cols() == model.levels[0].inputs.cols(), ErrorCode::kShapeMismatch,
          "query dimension does not match the training inputs");
  return level_posterior(model, *model.state, level, queries, noisy);
}

PosteriorField gar_predict_level(const GarModel& model, std::size_t level, const Vector& x_star) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  require(level < model.num_levels(), ErrorCode::kInvalidArgument, "level out of range");
  require(x_star.size() == model.levels[0].inputs.cols(), ErrorCode::kShapeMismatch,
          "query dimension does not match the training inputs");
  const FieldPosterior fp = field_posterior(model, *model.state, level, x_star);
  PosteriorField out;
  out.mean = fp.mean;
  if (level < model.offsets.size() && model.offsets[level].size() > 0) out.mean = out.mean + model.offsets[level];
  out.variance_diag = DenseTensor(fp.mean.shape());
  auto var = out.variance_diag.as_vector();
  for (const auto& term : fp.terms) var += term.diag().as_vector();
  for (const auto& f : fp.factors) var += f.rowwise().squaredNorm();
  const double noise = noise_of_level(model, level);
  for (auto& v : out.variance_diag.data()) v = std::max(v, 0.0) + noise;
  return out;
}

PosteriorField gar_predict(const GarModel& model, const Vector& x_star) {
  return gar_predict_level(model, model.num_levels() - 1, x_star);
}

// ---------------------------------------------------------------------------
// Dense validation path

namespace {

struct DenseChain {
  std::vector<Matrix> s;                // S_j as one matrix
  std::vector<std::vector<Matrix>> w;   // w[a][j]: level j -> level a weights
};

DenseChain dense_chain(const GarModel& model) {
  DenseChain c;
  const std::size_t nl = model.num_levels();
  c.w.resize(nl);
  for (std::size_t j = 0; j < nl; ++j) {
    c.s.push_back(kron_all(params_of_level(model, j).output_covs(model.output_shape(j))));
  }
  for (std::size_t a = 0; a < nl; ++a) {
    const auto da = static_cast<Eigen::Index>(shape_size(model.output_shape(a)));
    c.w[a].resize(a + 1);
    c.w[a][a] = Matrix::Identity(da, da);
    for (std::size_t j = 0; j < a; ++j) c.w[a][j] = model.transitions[a - 1].weights.kron() * c.w[a - 1][j];
  }
  return c;
}

/// Cov(g^a(xa), g^b(xb)), or of the noise-free chains when with_noise is false.
Matrix dense_block(const GarModel& model, const DenseChain& c, std::size_t a, const Matrix& xa,
                   std::size_t b, const Matrix& xb, bool with_noise) {
  Matrix out = Matrix::Zero(c.w[a][a].rows(), c.w[b][b].rows());
  const bool same = with_noise && same_input(xa, 0, xb, 0, model.match_tol);
  for (std::size_t j = 0; j <= std::min(a, b); ++j) {
    const TgpParams& p = params_of_level(model, j);
    Matrix inner = ard_gram(p.input_kernel, xa, xb)(0, 0) * c.s[j];
    if (same) inner.diagonal().array() += p.noise();
    out += c.w[a][j] * inner * c.w[b][j].transpose();
  }
  return out;
}

struct StackedData {
  std::vector<std::pair<std::size_t, Eigen::Index>> rows;  // (level, row)
  std::vector<Eigen::Index> offsets;
  Vector y;
};

StackedData stack_data(const GarModel& model, std::size_t cap) {
  StackedData sd;
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < model.num_levels(); ++i) {
    const auto& lv = model.levels[i];
    for (Eigen::Index n = 0; n < lv.inputs.rows(); ++n) {
      sd.rows.emplace_back(i, n);
      sd.offsets.push_back(total);
      total += static_cast<Eigen::Index>(shape_size(lv.outputs.trailing_shape()));
    }
  }
  require(static_cast<std::size_t>(total) <= cap, ErrorCode::kUnsupported,
          "dense joint covariance of size " + std::to_string(total) + " exceeds the cap");
  sd.y.resize(total);
  Eigen::Index pos = 0;
  for (const auto& lv : model.levels) {
    sd.y.segment(pos, static_cast<Eigen::Index>(lv.outputs.size())) = lv.outputs.as_vector();
    pos += static_cast<Eigen::Index>(lv.outputs.size());
  }
  return sd;
}

Matrix dense_data_cov(const GarModel& model, const DenseChain& c, const StackedData& sd) {
  const auto n = sd.y.size();
  Matrix sigma(n, n);
  for (std::size_t p = 0; p < sd.rows.size(); ++p) {
    const auto [a, ra] = sd.rows[p];
    for (std::size_t q = 0; q <= p; ++q) {
      const auto [b, rb] = sd.rows[q];
      const Matrix blk = dense_block(model, c, a, model.levels[a].inputs.row(ra), b,
                                     model.levels[b].inputs.row(rb), true);
      sigma.block(sd.offsets[p], sd.offsets[q], blk.rows(), blk.cols()) = blk;
      sigma.block(sd.offsets[q], sd.offsets[p], blk.cols(), blk.rows()) = blk.transpose();
    }
  }
  return sigma;
}

}  // namespace

double gar_joint_nll_dense(const GarModel& model, std::size_t cap) {
  const StackedData sd = stack_data(model, cap);
  const DenseChain c = dense_chain(model);
  const Matrix l = cholesky(dense_data_cov(model, c, sd), "dense joint covariance");
  const Vector z = l.triangularView<Eigen::Lower>().solve(sd.y);
  return 0.5 * z.squaredNorm() + l.diagonal().array().log().sum() +
         0.5 * static_cast<double>(sd.y.size()) * kLog2Pi;
}

PosteriorField gar_predict_dense(const GarModel& model, const Vector& x_star, std::size_t cap) {
  const StackedData sd = stack_data(model, cap);
  const DenseChain c = dense_chain(model);
  const std::size_t top = model.num_levels() - 1;
  const Matrix xs = x_star.transpose();
  const Matrix prior = dense_block(model, c, top, xs, top, xs, false);
  Matrix cross(prior.rows(), sd.y.size());
  for (std::size_t p = 0; p < sd.rows.size(); ++p) {
    const auto [b, rb] = sd.rows[p];
    const Matrix blk = dense_block(model, c, top, xs, b, model.levels[b].inputs.row(rb), false);
    cross.middleCols(sd.offsets[p], blk.cols()) = blk;
  }
  const Eigen::LLT<Matrix> llt(dense_data_cov(model, c, sd));
  require(llt.info() == Eigen::Success, ErrorCode::kNumerical,
          "Cholesky factorization failed: dense joint covariance");
  const Vector mean = cross * llt.solve(sd.y);
  const Matrix cov = prior - cross * llt.solve(Matrix(cross.transpose()));
  const Shape shape = model.output_shape(top);
  PosteriorField out;
  out.mean = DenseTensor(shape, std::vector<double>(mean.data(), mean.data() + mean.size()));
  if (top < model.offsets.size() && model.offsets[top].size() > 0) out.mean = out.mean + model.offsets[top];
  out.variance_diag = DenseTensor(shape);
  const double noise = noise_of_level(model, top);
  for (std::size_t s = 0; s < out.variance_diag.size(); ++s) {
    out.variance_diag[s] = std::max(cov(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)), 0.0) + noise;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TransitionObjective::Impl {
  std::size_t transition = 0;
  WeightMode weights = WeightMode::kFull;
  TgpTrainMask mask;
  LaplacePrior prior;
  GarTransition start;
  Matrix inputs;        // high inputs
  DenseTensor outputs;  // high outputs
  Shape low_shape, high_shape;
  bool subset = true;
  Matrix low_at_high;   // N x d_low (unmatched rows: posterior mean)
  Matrix hat_chol;      // non-subset only

  Eigen::Index weight_size() const {
    switch (weights) {
      case WeightMode::kFull: {
        Eigen::Index n = 0;
        for (const auto& f : start.weights.factors) n += f.size();
        return n;
      }
      case WeightMode::kScalar: return 1;
      case WeightMode::kFixed: return 0;
    }
    return 0;
  }
};

TransitionObjective::TransitionObjective(const GarModel& model, std::size_t transition,
                                         WeightMode weights, TgpTrainMask mask,
                                         LaplacePrior prior) {
  require(model.state != nullptr, ErrorCode::kInvalidArgument, "model is not prepared");
  require(transition < model.transitions.size(), ErrorCode::kInvalidArgument,
          "transition index out of range");
  auto impl = std::make_shared<Impl>();
  impl->transition = transition;
  impl->weights = weights;
  impl->mask = mask;
  impl->prior = prior;
  impl->start = model.transitions[transition];
  impl->inputs = model.levels[transition + 1].inputs;
  impl->outputs = model.levels[transition + 1].outputs;
  impl->low_shape = model.output_shape(transition);
  impl->high_shape = model.output_shape(transition + 1);
  if (weights == WeightMode::kScalar) {
    require(impl->low_shape == impl->high_shape, ErrorCode::kShapeMismatch,
            "a scalar weight needs equal output shapes on both levels");
  }
  const TransitionState& ts = model.state->transitions[transition];
  impl->subset = ts.subset;
  impl->low_at_high =
      lower_at_high(rows_of(model.levels[transition].outputs), impl->start.plan, ts.hat_mean);
  impl->hat_chol = ts.hat_cov_chol;
  impl_ = std::move(impl);
}

Vector TransitionObjective::pack(const GarTransition& t) const {
  const Impl& im = *impl_;
  const Vector r = pack_tgp(t.residual, im.mask);
  Vector x(im.weight_size() + r.size());
  Eigen::Index i = 0;
  if (im.weights == WeightMode::kFull) {
    for (const auto& f : t.weights.factors) {
      x.segment(i, f.size()) = Eigen::Map<const Vector>(f.data(), f.size());
      i += f.size();
    }
  } else if (im.weights == WeightMode::kScalar) {
    x(i++) = t.weights.factors[0](0, 0);
  }
  x.tail(r.size()) = r;
  return x;
}

void TransitionObjective::unpack(const Vector& x, GarTransition& t) const {
  const Impl& im = *impl_;
  Eigen::Index i = 0;
  if (im.weights == WeightMode::kFull) {
    for (auto& f : t.weights.factors) {
      Eigen::Map<Vector>(f.data(), f.size()) = x.segment(i, f.size());
      i += f.size();
    }
  } else if (im.weights == WeightMode::kScalar) {
    const auto d0 = t.weights.factors[0].rows();
    t.weights.factors[0] = x(i++) * Matrix::Identity(d0, d0);
  }
  unpack_tgp(x, t.residual, im.mask, i);
}

double TransitionObjective::operator()(const Vector& x, Vector* grad) const {
  const Impl& im = *impl_;
  GarTransition t = im.start;
  unpack(x, t);
  const bool with_grad = grad != nullptr;
  double nll = 0.0;
  std::optional<TgpGradient> rgrad;
  std::vector<Matrix> wgrad;
  for (const auto& f : t.weights.factors) wgrad.push_back(Matrix::Zero(f.rows(), f.cols()));
  try {
    if (im.subset) {
      const DenseTensor r =
          im.outputs - tensor_from_rows(map_rows(im.low_at_high, t.weights), im.high_shape);
      TgpEvaluation ev = tgp_evaluate(t.residual, im.inputs, r, with_grad);
      nll = ev.nll;
      if (with_grad) {
        add_weight_grad(wgrad, rows_of(ev.grad->outputs), im.low_at_high, t.weights,
                        im.high_shape, im.low_shape, -1.0);
        rgrad = std::move(ev.grad);
      }
    } else {
      WoodburyResult wr = woodbury_evaluate(t.residual, im.inputs, im.outputs, t.weights,
                                            t.plan, im.low_at_high, im.hat_chol, with_grad);
      nll = wr.nll;
      if (with_grad) {
        wgrad = std::move(wr.grad_w);
        rgrad = std::move(wr.grad);
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumerical) throw;
    if (grad) grad->setZero(x.size());
    return std::numeric_limits<double>::infinity();
  }
  const double f = nll - laplace_log_prior(t.residual.features, im.prior);
  if (!with_grad) return f;

  grad->resize(x.size());
  Eigen::Index i = 0;
  if (im.weights == WeightMode::kFull) {
    for (const auto& g : wgrad) {
      grad->segment(i, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
      i += g.size();
    }
  } else if (im.weights == WeightMode::kScalar) {
    (*grad)(i++) = wgrad[0].trace();
  }
  TgpGradient& rg = *rgrad;
  if (im.prior.scale > 0 && im.mask.features) {
    for (std::size_t m = 0; m < t.residual.features.order(); ++m) {
      rg.features[m] += im.prior.scale *
                        t.residual.features.modes[m].features.array().sign().matrix();
    }
  }
  grad->tail(x.size() - i) = pack_tgp_gradient(t.residual, rg, im.mask);
  return f;
}

namespace {

std::string level_tag(std::size_t t) {
  return "fitting level " + std::to_string(t + 1) + " (given level " + std::to_string(t) + "): ";
}

const LatentFeatures& features_of_level(const GarModel& model, std::size_t level) {
  return params_of_level(model, level).features;
}

}  // namespace

GarFitResult gar_fit_recursive(const MultiFidelityDataset& data, const GarFitConfig& config) {
  data.validate();
  const MultiFidelityDataset padded = pad_dataset_modes(data);
  GarFitResult res;
  GarModel& model = res.model;
  model.kind = config.weights == WeightMode::kScalar ? "ar" : "gar";
  model.match_tol = config.match_tol;
  model.imaginary_cap = config.imaginary_cap;
  std::vector<FidelityLevel> levels;
  for (const auto& lv : padded.levels) {
    FidelityLevel l = lv;
    if (config.center) {
      DenseTensor off = sample_mean(lv.outputs);
      l.outputs = subtract_rows(lv.outputs, off);
      model.offsets.push_back(std::move(off));
    }
    levels.push_back(std::move(l));
  }

  TgpFitConfig base_cfg;
  base_cfg.optim = config.optim;
  base_cfg.prior = config.prior;
  base_cfg.center = false;
  base_cfg.latent_rank = config.latent_rank;
  try {
    TgpFitResult base = tgp_fit(levels[0].inputs, levels[0].outputs, base_cfg);
    model.base = base.model.params;
    res.stages.push_back(std::move(base.optim));
  } catch (const Error& e) {
    throw Error(e.code(), "fitting level 0: " + std::string(e.what()));
  }
  model.levels.push_back(levels[0]);
  gar_prepare(model);

  for (std::size_t t = 0; t + 1 < levels.size(); ++t) {
    try {
      const Shape ls = levels[t].outputs.trailing_shape();
      const Shape hs = levels[t + 1].outputs.trailing_shape();
      GarTransition tr;
      tr.weights = init_weights(ls, hs);
      tr.plan = build_subset_plan(levels[t].inputs, levels[t + 1].inputs, config.match_tol);

      // Initial residual from the initial weights and the current lower model.
      Matrix hat;
      if (!tr.plan.is_subset()) {
        const Matrix xh = select_rows(levels[t + 1].inputs, tr.plan.unmatched_high);
        hat = gar_level_posterior(model, t, xh,
                                  std::vector<char>(tr.plan.unmatched_high.size(), 1))
                  .mean;
      }
      const Matrix g = lower_at_high(rows_of(levels[t].outputs), tr.plan, hat);
      const DenseTensor r0 =
          levels[t + 1].outputs - tensor_from_rows(map_rows(g, tr.weights), hs);
      TgpFitConfig rcfg = base_cfg;
      rcfg.optim.seed = config.optim.seed + t + 1;
      const LatentFeatures& lower_feats = features_of_level(model, t);
      const bool share = config.share_features && ls == hs && !params_of_level(model, t).identity_outputs;
      if (share) rcfg.shared_features = lower_feats;
      tr.residual = init_tgp_params(levels[t + 1].inputs, r0, rcfg);

      model.levels.push_back(levels[t + 1]);
      model.transitions.push_back(tr);
      gar_prepare(model);

      TgpTrainMask mask;
      mask.features = !share;
      const TransitionObjective obj(model, t, config.weights, mask, config.prior);
      OptimResult opt = minimize(std::cref(obj), obj.pack(model.transitions[t]), config.optim);
      require(std::isfinite(opt.objective), ErrorCode::kFitFailure,
              "transition fit diverged (non-finite objective)");
      obj.unpack(opt.x, model.transitions[t]);
      gar_prepare(model);
      res.stages.push_back(std::move(opt));
    } catch (const Error& e) {
      throw Error(e.code(), level_tag(t) + e.what());
    }
  }
  return res;
}

GarFitResult gar_fit_subset(const MultiFidelityDataset& data, const GarFitConfig& config) {
  data.validate();
  for (std::size_t i = 1; i < data.num_levels(); ++i) {
    require(build_subset_plan(data, i, config.match_tol).is_subset(),
            ErrorCode::kInvalidArgument,
            "level " + std::to_string(i) + " has inputs absent from level " +
                std::to_string(i - 1) + "; subset fitting needs nested designs");
  }
  return gar_fit_recursive(data, config);
}

GarFitResult ar_baseline_fit(const MultiFidelityDataset& data, GarFitConfig config) {
  const MultiFidelityDataset padded = pad_dataset_modes(data);
  for (std::size_t i = 1; i < padded.num_levels(); ++i) {
    require(padded.levels[i].outputs.trailing_shape() == padded.levels[0].outputs.trailing_shape(),
            ErrorCode::kInvalidArgument,
            "the AR model needs aligned outputs (the same field shape at every level); level " +
                std::to_string(i) + " differs from level 0 - resample the low-fidelity fields onto "
                "the high-fidelity grid (aligned dataset) or use the gar or cigar model");
  }
  config.weights = WeightMode::kScalar;
  config.share_features = false;
  return gar_fit_recursive(data, config);
}

}  // namespace mfgar
