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

#include <chrono>
#include <cmath>

#include "doctest.h"
#include "gar_oracle.hpp"
#include "mfgar/error.hpp"
#include "mfgar/gar.hpp"
#include "oracles.hpp"

using namespace mfgar;

namespace {

GarModel model_of(const oracle::GarInstance& inst, double tol = 0.0) {
  return make_gar_model(inst.data, inst.base, inst.transitions, false, tol);
}

Vector flat(const DenseTensor& t) { return t.as_vector(); }

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

oracle::GarInstance two_level(std::mt19937_64& rng, bool subset) {
  std::uniform_int_distribution<int> nl(4, 8), nh(2, 4), dd(1, 3);
  const Shape lo{static_cast<std::size_t>(dd(rng)), static_cast<std::size_t>(dd(rng))};
  const Shape hi{static_cast<std::size_t>(dd(rng)), static_cast<std::size_t>(dd(rng))};
  return oracle::random_gar_instance(rng, {lo, hi}, {nl(rng), nh(rng)}, 2, subset);
}

}  // namespace

TEST_CASE("subset plan agrees with a brute-force matcher") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix low = oracle::random_matrix(rng, 7, 2);
    Matrix high(5, 2);
    std::vector<int> twin(5, -1);
    for (Eigen::Index h = 0; h < 5; ++h) {
      if (rng() % 2) {
        twin[static_cast<std::size_t>(h)] = static_cast<int>(rng() % 7);
        high.row(h) = low.row(twin[static_cast<std::size_t>(h)]);
      } else {
        high.row(h) = oracle::random_matrix(rng, 1, 2);
      }
    }
    const SubsetPlan plan = build_subset_plan(low, high);
    CHECK(plan.num_high() == 5);
    std::size_t k = 0, u = 0;
    for (std::size_t h = 0; h < 5; ++h) {
      if (twin[h] >= 0) {
        REQUIRE(k < plan.matched_high.size());
        CHECK(plan.matched_high[k] == h);
        CHECK(plan.matched_low[k] == static_cast<std::size_t>(twin[h]));
        ++k;
      } else {
        REQUIRE(u < plan.unmatched_high.size());
        CHECK(plan.unmatched_high[u++] == h);
      }
    }
  }
}

TEST_CASE("subset plan honours the tolerance and rejects ambiguous matches") {
  Matrix low(3, 1), high(2, 1);
  low << 0.0, 1.0, 1.05;
  high << 0.001, 2.0;
  CHECK(build_subset_plan(low, high).unmatched_high.size() == 2);
  const SubsetPlan p = build_subset_plan(low, high, 0.01);
  CHECK(p.matched_low == std::vector<std::size_t>{0});
  high << 1.02, 2.0;
  CHECK_THROWS_AS(build_subset_plan(low, high, 0.1), Error);
}

TEST_CASE("subset likelihood equals the dense joint density") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = two_level(rng, true);
    const GarModel m = model_of(inst);
    REQUIRE(m.transitions[0].plan.is_subset());
    const double oracle_nll = oracle::LatentStack(m, Matrix(0, 2)).nll();
    CHECK(rel(gar_nll(m).total, oracle_nll) < 1e-9);
    CHECK(rel(gar_joint_nll_dense(m), oracle_nll) < 1e-9);
  }
}

TEST_CASE("non-subset likelihood equals the dense joint density") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = two_level(rng, false);
    const GarModel m = model_of(inst);
    REQUIRE(!m.transitions[0].plan.is_subset());
    const double oracle_nll = oracle::LatentStack(m, Matrix(0, 2)).nll();
    CHECK(rel(gar_nll(m).total, oracle_nll) < 1e-8);
    CHECK(rel(gar_joint_nll_dense(m), oracle_nll) < 1e-9);
  }
}

TEST_CASE("three-level chains with mixed structure match the dense density") {
  std::mt19937_64 rng(4);
  const std::vector<Shape> shapes{{2, 2}, {3, 2}, {3, 1}};
  for (bool subset : {true, false}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto inst = oracle::random_gar_instance(rng, shapes, {7, 5, 3}, 1, subset);
      const GarModel m = model_of(inst);
      const double oracle_nll = oracle::LatentStack(m, Matrix(0, 1)).nll();
      CHECK(rel(gar_nll(m).total, oracle_nll) < 1e-8);
    }
  }
}

TEST_CASE("predictions match the dense conditional Gaussian") {
  std::mt19937_64 rng(5);
  for (bool subset : {true, false}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto inst = two_level(rng, subset);
      const GarModel m = model_of(inst);
      const Vector xs = oracle::random_matrix(rng, 2, 1);
      const oracle::LatentStack stack(m, xs.transpose());
      const auto top = stack.condition({stack.row_map(1, xs, false)}, 1);
      const PosteriorField p = gar_predict(m, xs);
      const double noise = m.transitions[0].residual.noise();
      CHECK(oracle::max_rel_err(flat(p.mean), top.mean) < 1e-8);
      CHECK(oracle::max_rel_err(flat(p.variance_diag),
                                (top.cov.diagonal().array() + noise).matrix()) < 1e-7);

      const PosteriorField dense = gar_predict_dense(m, xs);
      CHECK(oracle::max_rel_err(flat(dense.mean), top.mean) < 1e-8);
      CHECK(oracle::max_rel_err(flat(dense.variance_diag), flat(p.variance_diag)) < 1e-7);

      const auto low = stack.condition({stack.row_map(0, xs, false)}, 0);
      const PosteriorField pl = gar_predict_level(m, 0, xs);
      CHECK(oracle::max_rel_err(flat(pl.mean), low.mean) < 1e-8);
      CHECK(oracle::max_rel_err(flat(pl.variance_diag),
                                (low.cov.diagonal().array() + m.base.noise()).matrix()) < 1e-7);
    }
  }
}

TEST_CASE("three-level predictions match the dense conditional Gaussian") {
  std::mt19937_64 rng(6);
  const std::vector<Shape> shapes{{2, 2}, {2, 3}, {3, 3}};
  for (bool subset : {true, false}) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto inst = oracle::random_gar_instance(rng, shapes, {6, 4, 3}, 2, subset);
      const GarModel m = model_of(inst);
      const Vector xs = oracle::random_matrix(rng, 2, 1);
      const oracle::LatentStack stack(m, xs.transpose());
      for (std::size_t level = 0; level < 3; ++level) {
        const auto c = stack.condition({stack.row_map(level, xs, false)}, level);
        const double noise = level == 0 ? m.base.noise() : m.transitions[level - 1].residual.noise();
        const PosteriorField p = gar_predict_level(m, level, xs);
        CHECK(oracle::max_rel_err(flat(p.mean), c.mean) < 1e-8);
        CHECK(oracle::max_rel_err(flat(p.variance_diag),
                                  (c.cov.diagonal().array() + noise).matrix()) < 1e-7);
      }
    }
  }
}

TEST_CASE("joint level posteriors cover observed, noisy and noise-free queries") {
  std::mt19937_64 rng(7);
  const auto inst = oracle::random_gar_instance(rng, {{2, 2}, {3, 2}, {2, 2}}, {6, 4, 3}, 1, false);
  const GarModel m = model_of(inst);
  const Vector fresh = oracle::random_matrix(rng, 1, 1);
  const Vector at_low = m.levels[0].inputs.row(5).transpose();     // level 0 only
  const Vector at_top = m.levels[2].inputs.row(1).transpose();     // observed at level 2
  Matrix q(5, 1);
  q << fresh(0), fresh(0), at_low(0), at_top(0), at_low(0);
  const std::vector<char> noisy{0, 1, 1, 1, 0};
  const oracle::LatentStack stack(m, fresh.transpose());
  for (std::size_t level = 0; level < 3; ++level) {
    std::vector<Matrix> targets;
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      const bool nz = noisy[static_cast<std::size_t>(r)];
      // An observed noisy query is the data value itself.
      const bool observed = nz && find_input(m.levels[level].inputs, q.row(r).transpose());
      targets.push_back(observed ? Matrix(0, 0) : stack.row_map(level, q.row(r).transpose(), nz));
    }
    std::vector<Matrix> live;
    for (const auto& t : targets) {
      if (t.size() > 0) live.push_back(t);
    }
    const auto c = stack.condition(live, level);
    const JointPosterior jp = gar_level_posterior(m, level, q, noisy);
    const Eigen::Index d = jp.mean.cols();
    // Expand the oracle back to all queries (observed ones: data, zero covariance).
    Vector mean(q.rows() * d);
    Matrix cov = Matrix::Zero(q.rows() * d, q.rows() * d);
    std::vector<Eigen::Index> pos;
    Eigen::Index k = 0;
    const auto y = m.levels[level].outputs.as_matrix();
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      if (targets[static_cast<std::size_t>(r)].size() == 0) {
        const auto hit = *find_input(m.levels[level].inputs, q.row(r).transpose());
        mean.segment(r * d, d) = y.row(static_cast<Eigen::Index>(hit)).transpose();
        pos.push_back(-1);
      } else {
        mean.segment(r * d, d) = c.mean.segment(k * d, d);
        pos.push_back(k++);
      }
    }
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      for (Eigen::Index s = 0; s < q.rows(); ++s) {
        if (pos[static_cast<std::size_t>(r)] < 0 || pos[static_cast<std::size_t>(s)] < 0) continue;
        cov.block(r * d, s * d, d, d) = c.cov.block(pos[static_cast<std::size_t>(r)] * d, pos[static_cast<std::size_t>(s)] * d, d, d);
      }
    }
    const RowMatrix jm = jp.mean;
    CHECK(oracle::max_rel_err(Eigen::Map<const Vector>(jm.data(), jm.size()), mean) < 1e-8);
    CHECK((jp.cov - cov).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, cov.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("transition gradients match finite differences") {
  std::mt19937_64 rng(8);
  for (bool subset : {true, false}) {
    for (WeightMode mode : {WeightMode::kFull, WeightMode::kScalar, WeightMode::kFixed}) {
      const Shape lo{3, 2};
      const Shape hi = mode == WeightMode::kScalar ? lo : Shape{2, 3};
      auto inst = oracle::random_gar_instance(rng, {lo, hi}, {6, 4}, 2, subset);
      if (mode == WeightMode::kScalar) {
        inst.transitions[0].weights.factors[0] = 0.8 * Matrix::Identity(3, 3);
        inst.transitions[0].weights.factors[1] = Matrix::Identity(2, 2);
      }
      const GarModel m = model_of(inst);
      const TransitionObjective obj(m, 0, mode, TgpTrainMask{}, LaplacePrior{0.3});
      const Vector x0 = obj.pack(m.transitions[0]);
      CAPTURE(subset);
      CAPTURE(static_cast<int>(mode));
      CHECK(grad_audit(std::cref(obj), x0) < 1e-4);
      // The objective is the transition's likelihood term plus the penalty.
      const double penalty = -laplace_log_prior(m.transitions[0].residual.features, LaplacePrior{0.3});
      CHECK(rel(obj(x0, nullptr), gar_nll(m).per_level[1] + penalty) < 1e-10);
    }
  }
}

TEST_CASE("marginalizing an empty imaginary set reproduces the subset results") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto inst = oracle::random_gar_instance(rng, {{2, 3}, {3, 3}, {3, 2}}, {7, 5, 3}, 2, true);
    const GarModel a = model_of(inst);
    GarModel b = a;
    b.always_marginalize = true;
    gar_prepare(b);
    CHECK(!b.state->transitions[0].subset);
    const auto na = gar_nll(a), nb = gar_nll(b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(rel(nb.per_level[i], na.per_level[i]) < 1e-12);
    const Vector xs = oracle::random_matrix(rng, 2, 1);
    const PosteriorField pa = gar_predict(a, xs), pb = gar_predict(b, xs);
    CHECK(oracle::max_rel_err(flat(pb.mean), flat(pa.mean)) < 1e-12);
    CHECK(oracle::max_rel_err(flat(pb.variance_diag), flat(pa.variance_diag)) < 1e-10);

    const TransitionObjective oa(a, 1, WeightMode::kFull, TgpTrainMask{});
    const TransitionObjective ob(b, 1, WeightMode::kFull, TgpTrainMask{});
    const Vector x = oa.pack(a.transitions[1]);
    Vector ga(x.size()), gb(x.size());
    CHECK(rel(ob(x, &gb), oa(x, &ga)) < 1e-12);
    CHECK(oracle::max_rel_err(gb, ga) < 1e-9);
  }
}

TEST_CASE("a scalar weight reproduces the classic autoregressive model") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    auto inst = oracle::random_gar_instance(rng, {{3, 2}, {3, 2}}, {6, 3}, 1, trial % 2 == 0);
    const double rho = 0.6 + 0.1 * trial;
    inst.transitions[0].weights.factors = {rho * Matrix::Identity(3, 3), Matrix::Identity(2, 2)};
    const GarModel m = model_of(inst);

    // Scalar AR: Cov(y^a(x), y^b(x')) = rho^{[a]+[b]} k_0 S_0 + [a=b=1] k_1 S_1 + noise terms.
    const auto& l0 = m.levels[0];
    const auto& l1 = m.levels[1];
    const Eigen::Index d = 6;
    const Eigen::Index n0 = l0.inputs.rows(), n1 = l1.inputs.rows();
    auto s_of = [&](const TgpParams& p) {
      return oracle::kron_loops({oracle::se_gram(1.0, p.features.modes[0].kernel.lengthscales(),
                                                 p.features.modes[0].features, p.features.modes[0].features),
                                 oracle::se_gram(1.0, p.features.modes[1].kernel.lengthscales(),
                                                 p.features.modes[1].features, p.features.modes[1].features)});
    };
    const Matrix s0 = s_of(m.base), s1 = s_of(m.transitions[0].residual);
    const TgpParams& r = m.transitions[0].residual;
    Matrix x(n0 + n1, 1);
    x << l0.inputs, l1.inputs;
    Matrix cov((n0 + n1) * d, (n0 + n1) * d);
    for (Eigen::Index i = 0; i < n0 + n1; ++i) {
      for (Eigen::Index j = 0; j < n0 + n1; ++j) {
        const bool hi = i >= n0, hj = j >= n0;
        const double scale = (hi ? rho : 1.0) * (hj ? rho : 1.0);
        const Matrix xi = x.row(i), xj = x.row(j);
        Matrix blk = scale * oracle::se_gram(m.base.input_kernel.amplitude(),
                                             m.base.input_kernel.lengthscales(), xi, xj)(0, 0) * s0;
        const bool same = x(i, 0) == x(j, 0);
        if (same) blk.diagonal().array() += scale * m.base.noise();
        if (hi && hj) {
          blk += oracle::se_gram(r.input_kernel.amplitude(), r.input_kernel.lengthscales(), xi, xj)(0, 0) * s1;
          if (same) blk.diagonal().array() += r.noise();
        }
        cov.block(i * d, j * d, d, d) = blk;
      }
    }
    Vector y((n0 + n1) * d);
    y << flat(l0.outputs), flat(l1.outputs);
    CHECK(rel(gar_nll(m).total, oracle::gauss_nll(cov, y)) < 1e-9);

    const TransitionObjective full(m, 0, WeightMode::kFull, TgpTrainMask{});
    const TransitionObjective scalar(m, 0, WeightMode::kScalar, TgpTrainMask{});
    CHECK(rel(scalar(scalar.pack(m.transitions[0]), nullptr),
              full(full.pack(m.transitions[0]), nullptr)) < 1e-12);
  }
}

namespace {

/// Smooth two-fidelity field: the high level is a re-weighted low field plus a
/// small smooth correction.
MultiFidelityDataset planted_dataset(const Matrix& x_low, const Matrix& x_high) {
  auto field = [](const Matrix& x, bool high) {
    DenseTensor t({static_cast<std::size_t>(x.rows()), 4, 3});
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          const double a = x(n, 0), b = x(n, 1);
          double v = std::sin(3.0 * a + 0.5 * static_cast<double>(i)) * std::cos(2.0 * b - 0.3 * static_cast<double>(j));
          if (high) v = 1.3 * v + 0.2 * std::sin(a + b + 0.1 * static_cast<double>(i + j));
          t.at({static_cast<std::size_t>(n), i, j}) = v;
        }
      }
    }
    return t;
  };
  MultiFidelityDataset d;
  d.levels.push_back({x_low, field(x_low, false)});
  d.levels.push_back({x_high, field(x_high, true)});
  return d;
}

}  // namespace

TEST_CASE("recursive fit improves the likelihood and predicts a planted field") {
  std::mt19937_64 rng(11);
  Matrix x_low(24, 2);
  for (Eigen::Index n = 0; n < 24; ++n) x_low.row(n) = oracle::random_matrix(rng, 1, 2).array().abs().min(1.5).matrix();
  for (bool subset : {true, false}) {
    Matrix x_high = x_low.topRows(6);
    if (!subset) x_high.row(5) << 0.77, 0.31;
    const MultiFidelityDataset data = planted_dataset(x_low, x_high);
    GarFitConfig cfg;
    cfg.optim.max_iters = 60;
    cfg.optim.step = 0.05;
    const GarFitResult fit = gar_fit_recursive(data, cfg);
    REQUIRE(fit.stages.size() == 2);
    for (const auto& st : fit.stages) {
      for (std::size_t i = 1; i < st.trace.size(); ++i) CHECK(st.trace[i].objective <= st.trace[i - 1].objective);
      CHECK(st.trace.back().objective < st.trace.front().objective);
    }
    Matrix x_test(5, 2);
    x_test << 0.2, 0.3, 0.5, 0.9, 1.1, 0.4, 0.7, 0.7, 0.3, 1.2;
    const MultiFidelityDataset truth = planted_dataset(x_test, x_test);
    double err = 0.0, scale = 0.0;
    for (Eigen::Index n = 0; n < 5; ++n) {
      const PosteriorField p = gar_predict(fit.model, x_test.row(n).transpose());
      const auto want = truth.levels[1].outputs.as_matrix().row(n).transpose();
      err += (flat(p.mean) - want).squaredNorm();
      scale += want.squaredNorm();
    }
    CAPTURE(subset);
    CHECK(std::sqrt(err / scale) < 0.3);
  }
}

TEST_CASE("a two-level recursive fit equals fitting the two stages directly") {
  std::mt19937_64 rng(12);
  Matrix x_low(12, 2);
  for (Eigen::Index n = 0; n < 12; ++n) x_low.row(n) = oracle::random_matrix(rng, 1, 2).array().abs().matrix();
  const MultiFidelityDataset data = planted_dataset(x_low, x_low.topRows(4));
  GarFitConfig cfg;
  cfg.optim.max_iters = 25;
  cfg.share_features = false;
  const GarFitResult rec = gar_fit_recursive(data, cfg);

  // Direct: level-0 TGP, then the transition objective from the same start.
  TgpFitConfig tc;
  tc.optim = cfg.optim;
  tc.latent_rank = cfg.latent_rank;
  DenseTensor off0 = sample_mean(data.levels[0].outputs);
  DenseTensor off1 = sample_mean(data.levels[1].outputs);
  const TgpFitResult base = tgp_fit(data.levels[0].inputs, data.levels[0].outputs, tc);
  const DenseTensor y1 = subtract_rows(data.levels[1].outputs, off1);
  const DenseTensor y0 = base.model.outputs;
  GarTransition start;
  start.weights = init_weights({4, 3}, {4, 3});
  DenseTensor r0 = y1 - select_first_mode(y0, std::vector<std::size_t>{0, 1, 2, 3});
  TgpFitConfig rc = tc;
  rc.center = false;
  rc.optim.seed = cfg.optim.seed + 1;
  start.residual = init_tgp_params(data.levels[1].inputs, r0, rc);
  MultiFidelityDataset centered;
  centered.levels = {{data.levels[0].inputs, y0}, {data.levels[1].inputs, y1}};
  GarModel direct = make_gar_model(centered, base.model.params, {start});
  const TransitionObjective obj(direct, 0, WeightMode::kFull, TgpTrainMask{});
  const OptimResult opt = minimize(std::cref(obj), obj.pack(direct.transitions[0]), cfg.optim);
  obj.unpack(opt.x, direct.transitions[0]);
  gar_prepare(direct);

  CHECK(rel(gar_nll(direct).total, gar_nll(rec.model).total) < 1e-12);
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK((direct.transitions[0].weights.factors[m] - rec.model.transitions[0].weights.factors[m])
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("fitting errors name the failing level") {
  std::mt19937_64 rng(13);
  auto inst = oracle::random_gar_instance(rng, {{2, 2}, {2, 2}}, {5, 3}, 1, false);
  GarFitConfig cfg;
  cfg.optim.max_iters = 2;
  cfg.imaginary_cap = 1;  // one unmatched 2x2 field already exceeds this
  try {
    gar_fit_recursive(inst.data, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnsupported);
    CHECK(std::string(e.what()).find("level 1") != std::string::npos);
  }
  CHECK_THROWS_AS(gar_fit_subset(inst.data, cfg), Error);
}

TEST_CASE("dataset validation reports shape problems") {
  MultiFidelityDataset d;
  d.levels.push_back({Matrix::Zero(3, 2), DenseTensor({3, 2})});
  d.levels.push_back({Matrix::Zero(4, 2), DenseTensor({4, 2})});
  CHECK_THROWS_AS(d.validate(), Error);  // more high samples than low
  d.levels[1] = {Matrix::Zero(2, 1), DenseTensor({2, 2})};
  CHECK_THROWS_AS(d.validate(), Error);  // input dimension
  d.levels[1] = {Matrix::Zero(2, 2), DenseTensor({3, 2})};
  CHECK_THROWS_AS(d.validate(), Error);  // sample count
  d.levels[1] = {Matrix::Zero(2, 2), DenseTensor({2, 5})};
  CHECK_NOTHROW(d.validate());
  GarTransition bad;
  bad.weights.factors = {Matrix::Identity(2, 2)};
  std::mt19937_64 rng(14);
  bad.residual = oracle::random_tgp_params(rng, {5}, 2);
  TgpParams base = bad.residual;
  base.features = init_latent_features({2}, 1);
  CHECK_THROWS_AS(make_gar_model(d, base, {bad}), Error);  // W must be 5 x 2
}
