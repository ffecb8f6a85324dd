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

#include "mfgar/optim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mfgar/error.hpp"

namespace mfgar {

OptimResult minimize(const Objective& objective, Vector init, const OptimConfig& config,
                     const Projector& project) {
  require(config.max_iters >= 0 && config.step > 0 && config.tol >= 0,
          ErrorCode::kInvalidArgument, "invalid optimizer configuration");
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  constexpr int kStallRun = 5;

  OptimResult res;
  if (project) project(init);
  Vector x = std::move(init);
  Vector g(x.size());
  double f = objective(x, &g);
  require(std::isfinite(f) && g.allFinite(), ErrorCode::kNumerical,
          "objective is not finite at the initial point");
  res.trace.push_back({0, f, g.norm()});

  Vector m = Vector::Zero(x.size());
  Vector v = Vector::Zero(x.size());
  int t = 0;
  double lr = config.step;
  int small_changes = 0;

  Vector g_new(x.size());
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    res.iterations = iter;
    ++t;
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    Vector x_new = x - lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + kEps)).matrix();
    if (project) project(x_new);

    double f_new = objective(x_new, &g_new);
    if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f) {
      const double rel = std::abs(f - f_new) / std::max(1.0, std::abs(f));
      x = x_new;
      f = f_new;
      g = g_new;
      res.trace.push_back({iter, f, g.norm()});
      lr = std::min(lr * 1.1, config.step);
      small_changes = rel < config.tol ? small_changes + 1 : 0;
      if (small_changes >= kStallRun) {
        res.converged = true;
        break;
      }
    } else {
      // Stale momentum keeps pointing past the minimum; restart it from the
      // current gradient with a shorter step.
      m.setZero();
      v.setZero();
      t = 0;
      lr *= 0.5;
      if (lr < config.step * 1e-10) {
        res.converged = true;
        break;
      }
    }
  }
  res.x = std::move(x);
  res.objective = f;
  return res;
}

double grad_audit(const Objective& objective, const Vector& point, double eps) {
  Vector g(point.size());
  objective(point, &g);
  Vector fd(point.size());
  Vector x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double h = eps * std::max(1.0, std::abs(point(i)));
    x(i) = point(i) + h;
    const double fp = objective(x, nullptr);
    x(i) = point(i) - h;
    const double fm = objective(x, nullptr);
    x(i) = point(i);
    fd(i) = (fp - fm) / (2.0 * h);
  }
  const double scale = std::max(g.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff());
  const double floor = 1e-6 * scale + 1e-12;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double denom = std::max({std::abs(g(i)), std::abs(fd(i)), floor});
    worst = std::max(worst, std::abs(g(i) - fd(i)) / denom);
  }
  return worst;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceEntry>& trace) {
  os << "iter,objective,grad_norm\n";
  os.precision(17);
  for (const auto& e : trace) os << e.iter << ',' << e.objective << ',' << e.grad_norm << '\n';
}

}  // namespace mfgar
