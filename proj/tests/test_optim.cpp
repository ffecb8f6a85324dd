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

#include <sstream>

#include "doctest.h"
#include "mfgar/optim.hpp"
#include "oracles.hpp"

using namespace mfgar;

namespace {

double rosen(const Vector& x, Vector* g) {
  const double a = 1 - x(0), b = x(1) - x(0) * x(0);
  if (g) {
    g->resize(2);
    (*g)(0) = -2 * a - 400 * x(0) * b;
    (*g)(1) = 200 * b;
  }
  return a * a + 100 * b * b;
}

}  // namespace

TEST_CASE("accepted objective trace never increases") {
  OptimConfig cfg;
  cfg.max_iters = 2000;
  cfg.step = 0.05;
  cfg.tol = 1e-12;
  const OptimResult r = minimize(rosen, Vector::Zero(2), cfg);
  REQUIRE(r.trace.size() > 10);
  for (std::size_t i = 1; i < r.trace.size(); ++i)
    CHECK(r.trace[i].objective <= r.trace[i - 1].objective);
  CHECK(r.objective < rosen(Vector::Zero(2), nullptr));
}

TEST_CASE("convex quadratic converges to the minimizer") {
  const Vector c = (Vector(3) << 1.0, -2.0, 0.5).finished();
  Objective f = [&](const Vector& x, Vector* g) {
    if (g) *g = 2 * (x - c);
    return (x - c).squaredNorm();
  };
  OptimConfig cfg;
  cfg.max_iters = 5000;
  cfg.step = 0.1;
  cfg.tol = 1e-14;
  const OptimResult r = minimize(f, Vector::Zero(3), cfg);
  CHECK((r.x - c).norm() < 1e-3);
}

TEST_CASE("projector keeps iterates feasible") {
  Objective f = [](const Vector& x, Vector* g) {
    if (g) *g = 2 * (x - Vector::Constant(2, 3.0));
    return (x - Vector::Constant(2, 3.0)).squaredNorm();
  };
  Projector unit = [](Vector& x) {
    if (x.norm() > 1) x.normalize();
  };
  OptimConfig cfg;
  cfg.max_iters = 500;
  cfg.step = 0.1;
  const OptimResult r = minimize(f, Vector::Zero(2), cfg, unit);
  CHECK(r.x.norm() <= 1 + 1e-12);
  CHECK(r.x(0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
}

TEST_CASE("gradient audit detects a wrong gradient") {
  CHECK(grad_audit(rosen, (Vector(2) << 0.3, -0.4).finished()) < 1e-6);
  Objective wrong = [](const Vector& x, Vector* g) {
    const double f = rosen(x, g);
    if (g) (*g)(0) *= 1.01;
    return f;
  };
  CHECK(grad_audit(wrong, (Vector(2) << 0.3, -0.4).finished()) > 1e-3);
}

TEST_CASE("trace is written as CSV") {
  std::ostringstream os;
  write_trace_csv(os, {{0, 2.0, 1.0}, {1, 1.5, 0.5}});
  CHECK(os.str().rfind("iter,objective,grad_norm\n0,2,1\n", 0) == 0);
}
