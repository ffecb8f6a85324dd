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
#include "mfgar/hogp.hpp"
#include "oracles.hpp"

using namespace mfgar;

namespace {

TgpParams sample_params(std::mt19937_64& rng, const Shape& out_shape, std::size_t in_dim) {
  TgpParams p;
  p.input_kernel = ArdKernelParams::isotropic(in_dim, 1.4, 0.7);
  p.log_noise = std::log(0.05);
  p.features = init_latent_features(out_shape, rng(), 2);
  for (auto& m : p.features.modes) m.features *= 8.0;  // well-separated coordinates
  return p;
}

Matrix dense_cov(const TgpParams& p, const Matrix& x, const Shape& out_shape) {
  std::vector<Matrix> fs{oracle::se_gram(p.input_kernel.amplitude(),
                                         p.input_kernel.lengthscales(), x, x)};
  for (std::size_t m = 0; m < out_shape.size(); ++m) {
    const auto& mode = p.features.modes[m];
    fs.push_back(out_shape[m] == 1 ? Matrix::Ones(1, 1)
                                   : oracle::se_gram(1.0, mode.kernel.lengthscales(),
                                                     mode.features, mode.features));
  }
  const Matrix k = oracle::kron_loops(fs);
  return k + p.noise() * Matrix::Identity(k.rows(), k.cols());
}

}  // namespace

TEST_CASE("TGP likelihood equals the dense Gaussian density") {
  std::mt19937_64 rng(31);
  const Shape out{3, 4};
  const Matrix x = oracle::random_matrix(rng, 5, 2);
  const DenseTensor y = oracle::random_tensor(rng, {5, 3, 4});
  const TgpParams p = sample_params(rng, out, 2);
  const double dense = oracle::gauss_nll(dense_cov(p, x, out), oracle::flat(y));
  CHECK(tgp_evaluate(p, x, y, false).nll == doctest::Approx(dense).epsilon(1e-9));

  TgpParams ident = p;
  ident.identity_outputs = true;
  std::vector<Matrix> fs{oracle::se_gram(1.4, p.input_kernel.lengthscales(), x, x),
                         Matrix::Identity(3, 3), Matrix::Identity(4, 4)};
  const Matrix c = oracle::kron_loops(fs) + p.noise() * Matrix::Identity(60, 60);
  CHECK(tgp_evaluate(ident, x, y, false).nll ==
        doctest::Approx(oracle::gauss_nll(c, oracle::flat(y))).epsilon(1e-9));
}

TEST_CASE("TGP gradient matches finite differences for every parameter") {
  std::mt19937_64 rng(32);
  const Shape out{3, 1, 2};
  const Matrix x = oracle::random_matrix(rng, 6, 2);
  const DenseTensor y = oracle::random_tensor(rng, {6, 3, 1, 2});
  const TgpParams p = sample_params(rng, out, 2);
  const TgpTrainMask mask;
  Objective f = [&](const Vector& v, Vector* g) {
    TgpParams q = p;
    unpack_tgp(v, q, mask);
    const TgpEvaluation ev = tgp_evaluate(q, x, y, g != nullptr);
    if (g) *g = pack_tgp_gradient(q, *ev.grad, mask);
    return ev.nll;
  };
  const Vector v0 = pack_tgp(p, mask);
  CHECK(v0.size() == packed_tgp_size(p, mask));
  CHECK(v0.size() == 3 + 1 + (6 + 2) + (4 + 2));
  CHECK(grad_audit(f, v0) < 1e-5);

  // gradient with respect to the observations
  const TgpEvaluation ev = tgp_evaluate(p, x, y, true);
  auto fy = [&](const Vector& yv) {
    DenseTensor yy = y;
    yy.as_vector() = yv;
    return tgp_evaluate(p, x, yy, false).nll;
  };
  CHECK(oracle::max_rel_err(ev.grad->outputs.as_vector(),
                            oracle::fd_grad(fy, Vector(y.as_vector()))) < 1e-5);
}

TEST_CASE("TGP prediction equals the dense Gaussian conditional") {
  std::mt19937_64 rng(33);
  const Shape out{2, 3};
  const Matrix x = oracle::random_matrix(rng, 4, 1);
  const DenseTensor y = oracle::random_tensor(rng, {4, 2, 3});
  TgpModel model;
  model.params = sample_params(rng, out, 1);
  model.inputs = x;
  model.outputs = y;
  const Vector xs = (Vector(1) << 0.3).finished();

  const PosteriorField pf = tgp_predict(model, xs);

  // dense conditional: signal at x* given noisy y
  const auto& p = model.params;
  std::vector<Matrix> sfs;
  for (std::size_t m = 0; m < 2; ++m)
    sfs.push_back(oracle::se_gram(1.0, p.features.modes[m].kernel.lengthscales(),
                                  p.features.modes[m].features, p.features.modes[m].features));
  const Matrix s = oracle::kron_loops(sfs);
  const Matrix xsm = xs.transpose();
  const double amp = p.input_kernel.amplitude();
  const Vector ls = p.input_kernel.lengthscales();
  const Matrix kxx = oracle::se_gram(amp, ls, x, x);
  const Matrix ksx = oracle::se_gram(amp, ls, xsm, x);
  const Matrix cyy = oracle::kron_loops({kxx, s}) + p.noise() * Matrix::Identity(24, 24);
  const Matrix czy = oracle::kron_loops({ksx, s});
  const Matrix czz = amp * s;
  Eigen::LLT<Matrix> llt(cyy);
  const Vector mean = czy * llt.solve(oracle::flat(y));
  const Matrix cov = czz - czy * llt.solve(czy.transpose());
  CHECK((oracle::flat(pf.mean) - mean).norm() < 1e-9 * (1 + mean.norm()));
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK(pf.variance_diag[static_cast<std::size_t>(i)] ==
          doctest::Approx(cov(i, i) + p.noise()).epsilon(1e-8));

  // factored covariance matches the full matrix
  const PointPosterior pp = tgp_point_posterior(model, xs);
  const Matrix b = oracle::kron_loops(pp.cov.basis);
  const Matrix full = b * oracle::flat(pp.cov.coeff).asDiagonal() * b.transpose();
  CHECK((full - cov).norm() < 1e-9);

  // mapped covariance term = W C W^T
  TuckerWeights w;
  w.factors = {oracle::random_matrix(rng, 3, 2), oracle::random_matrix(rng, 2, 3)};
  const Matrix wk = oracle::kron_loops(w.factors);
  const Matrix mapped = wk * cov * wk.transpose();
  const DenseTensor d = pp.cov.mapped(w).diag();
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK(d[static_cast<std::size_t>(i)] == doctest::Approx(mapped(i, i)).epsilon(1e-8));
}

TEST_CASE("TGP fit improves the likelihood and recovers a smooth field") {
  std::mt19937_64 rng(34);
  const std::size_t n = 20;
  Matrix x(n, 1);
  DenseTensor y(Shape{n, 4, 3});
  for (std::size_t i = 0; i < n; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i) / (n - 1);
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        y.at({i, a, b}) = std::sin(3 * x(static_cast<Eigen::Index>(i), 0) + 0.5 * a) * (1 + 0.3 * b);
  }
  TgpFitConfig cfg;
  cfg.optim.max_iters = 150;
  cfg.optim.step = 0.05;
  cfg.optim.seed = 3;
  const TgpFitResult r = tgp_fit(x, y, cfg);
  CHECK(r.optim.objective < r.optim.trace.front().objective);
  for (std::size_t i = 1; i < r.optim.trace.size(); ++i)
    CHECK(r.optim.trace[i].objective <= r.optim.trace[i - 1].objective);
  const PosteriorField pf = tgp_predict(r.model, (Vector(1) << 0.52).finished());
  double err = 0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      err = std::max(err, std::abs(pf.mean.at({a, b}) - std::sin(3 * 0.52 + 0.5 * a) * (1 + 0.3 * b)));
  CHECK(err < 0.05);
}

TEST_CASE("TGP rejects inconsistent shapes") {
  TgpFitConfig cfg;
  CHECK_THROWS_AS(tgp_fit(Matrix::Zero(3, 1), DenseTensor(Shape{4, 2}), cfg), Error);
  CHECK_THROWS_AS(tgp_fit(Matrix::Zero(3, 1), DenseTensor(Shape{3}), cfg), Error);
}

TEST_CASE("joint posterior over several queries equals the dense conditional") {
  std::mt19937_64 rng(35);
  const Shape out{2, 2};
  const Matrix x = oracle::random_matrix(rng, 4, 1);
  const DenseTensor y = oracle::random_tensor(rng, {4, 2, 2});
  TgpModel model;
  model.params = sample_params(rng, out, 1);
  model.inputs = x;
  model.outputs = y;
  const auto& p = model.params;
  // queries: signal at new point, noisy at new point, noisy at training input 2,
  // the same new noisy point again (shares its noise draw)
  Matrix q(4, 1);
  q << 0.37, -0.2, x(2, 0), -0.2;
  const std::vector<char> noisy{0, 1, 1, 1};
  const JointPosterior jp = tgp_joint_posterior(model, q, noisy);

  std::vector<Matrix> sfs;
  for (std::size_t m = 0; m < 2; ++m)
    sfs.push_back(oracle::se_gram(1.0, p.features.modes[m].kernel.lengthscales(),
                                  p.features.modes[m].features, p.features.modes[m].features));
  const Matrix s = oracle::kron_loops(sfs);
  const double amp = p.input_kernel.amplitude();
  const Vector ls = p.input_kernel.lengthscales();
  const double nz = p.noise();
  // stack latent f at [x; q], then add noise per the flags
  Matrix all(8, 1);
  all << x, q;
  const Matrix kall = oracle::se_gram(amp, ls, all, all);
  Matrix prior = oracle::kron_loops({kall, s});
  // noise: training rows, and noisy queries (same input => same noise draw)
  std::vector<int> noise_id{0, 1, 2, 3, -1, 4, 2, 4};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (noise_id[i] >= 0 && noise_id[i] == noise_id[j])
        prior.block(i * 4, j * 4, 4, 4) += nz * Matrix::Identity(4, 4);
  const Matrix cyy = prior.topLeftCorner(16, 16);
  const Matrix czy = prior.bottomLeftCorner(16, 16);
  const Matrix czz = prior.bottomRightCorner(16, 16);
  const Matrix gain = czy * cyy.inverse();
  const Vector mean = gain * oracle::flat(y);
  const Matrix cov = czz - gain * czy.transpose();
  const RowMatrix mean_rows = jp.mean;
  const Vector got = Eigen::Map<const Vector>(mean_rows.data(), mean_rows.size());
  CHECK((got - mean).norm() < 1e-8 * (1 + mean.norm()));
  CHECK((jp.cov - cov).norm() < 1e-8 * (1 + cov.norm()));
  CHECK(find_input(x, x.row(1).transpose()).value() == 1);
  CHECK_FALSE(find_input(x, Vector::Constant(1, 99.0)).has_value());
}
