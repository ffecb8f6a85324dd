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

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "mfgar/tensor.hpp"

namespace mfgar {

struct OptimConfig {
  int max_iters = 200;
  double step = 1e-2;
  /// Relative objective change below which a run of accepted steps counts as converged.
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

/// Returns the objective at x; fills *grad when grad is non-null.
using Objective = std::function<double(const Vector& x, Vector* grad)>;

/// Maps a proposed point back onto the feasible set (in place).
using Projector = std::function<void(Vector& x)>;

struct TraceEntry {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
};

struct OptimResult {
  Vector x;
  double objective = 0.0;
  std::vector<TraceEntry> trace;  // accepted steps only, non-increasing objective
  int iterations = 0;
  bool converged = false;
};

/// Adam-style first-order descent with per-coordinate scaling. A step is accepted
/// only when the objective is finite and does not increase; otherwise the step size
/// is halved and the moment estimates restarted.
OptimResult minimize(const Objective& objective, Vector init, const OptimConfig& config,
                     const Projector& project = {});

/// Max componentwise relative error between the supplied gradient and central
/// differences with step eps.
double grad_audit(const Objective& objective, const Vector& point, double eps = 1e-6);

void write_trace_csv(std::ostream& os, const std::vector<TraceEntry>& trace);

}  // namespace mfgar
