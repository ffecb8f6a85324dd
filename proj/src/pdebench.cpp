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

#include "mfgar/pdebench.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include "mfgar/error.hpp"
#include "mfgar/parallel.hpp"

namespace mfgar {

// ---- names ------------------------------------------------------------------

std::string to_string(PdeKind kind) {
  switch (kind) {
    case PdeKind::kBurgers: return "burgers";
    case PdeKind::kPoisson: return "poisson";
    case PdeKind::kHeat: return "heat";
  }
  return "?";
}

PdeKind parse_pde_kind(const std::string& name) {
  if (name == "burgers") return PdeKind::kBurgers;
  if (name == "poisson") return PdeKind::kPoisson;
  if (name == "heat") return PdeKind::kHeat;
  fail(ErrorCode::kInvalidArgument, "unknown PDE '" + name + "' (expected burgers, poisson or heat)");
}

MeshVariant parse_mesh_variant(const std::string& name) {
  if (name == "main") return MeshVariant::kMain;
  if (name == "appendix") return MeshVariant::kAppendix;
  fail(ErrorCode::kInvalidArgument, "unknown mesh variant '" + name + "' (expected main or appendix)");
}

std::string to_string(Sampler sampler) { return sampler == Sampler::kSobol ? "sobol" : "uniform"; }

std::string to_string(Structure structure) {
  return structure == Structure::kSubset ? "subset" : "nonsubset";
}

Sampler parse_sampler(const std::string& name) {
  if (name == "sobol") return Sampler::kSobol;
  if (name == "uniform") return Sampler::kUniform;
  fail(ErrorCode::kInvalidArgument, "unknown sampler '" + name + "' (expected sobol or uniform)");
}

Structure parse_structure(const std::string& name) {
  if (name == "subset") return Structure::kSubset;
  if (name == "nonsubset") return Structure::kNonsubset;
  fail(ErrorCode::kInvalidArgument, "unknown structure '" + name + "' (expected subset or nonsubset)");
}

// ---- grids and specs ----------------------------------------------------------

double Grid2::step(std::size_t axis) const {
  return (box[axis].hi - box[axis].lo) / static_cast<double>(nodes[axis] - 1);
}

double Grid2::coord(std::size_t axis, std::size_t i) const {
  if (i + 1 == nodes[axis]) return box[axis].hi;
  return box[axis].lo + static_cast<double>(i) * step(axis);
}

Grid2 PdeSpec::grid(const MeshSize& n) const {
  Grid2 g;
  g.nodes = n;
  switch (kind) {
    case PdeKind::kBurgers: g.box = {Interval{0.0, 1.0}, Interval{0.0, 3.0}}; break;
    case PdeKind::kPoisson: g.box = {Interval{0.0, 1.0}, Interval{0.0, 1.0}}; break;
    case PdeKind::kHeat: g.box = {Interval{0.0, 1.0}, Interval{0.0, 5.0}}; break;
  }
  return g;
}

Vector PdeSpec::map_unit(const Vector& u) const {
  require(static_cast<std::size_t>(u.size()) == input_dim(), ErrorCode::kShapeMismatch,
          "unit point has " + std::to_string(u.size()) + " coordinates, the " + to_string(kind) +
              " problem takes " + std::to_string(input_dim()));
  Vector x(u.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    const Interval& r = input_ranges[static_cast<std::size_t>(k)];
    x(k) = r.lo + u(k) * (r.hi - r.lo);
  }
  return x;
}

namespace {

std::size_t expected_inputs(PdeKind kind) {
  switch (kind) {
    case PdeKind::kBurgers: return 1;
    case PdeKind::kPoisson: return 5;
    case PdeKind::kHeat: return 3;
  }
  return 0;
}

}  // namespace

void PdeSpec::validate() const {
  require(input_ranges.size() == expected_inputs(kind), ErrorCode::kInvalidArgument,
          "the " + to_string(kind) + " problem takes " + std::to_string(expected_inputs(kind)) +
              " inputs, spec lists " + std::to_string(input_ranges.size()));
  for (const auto& r : input_ranges) {
    require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi,
            ErrorCode::kInvalidArgument, "input range must be a finite closed interval");
  }
  for (std::size_t a = 0; a < 2; ++a) {
    require(mesh_low[a] >= 3 && record_grid[a] >= 2, ErrorCode::kInvalidArgument,
            "meshes need at least 3 nodes and record grids 2 nodes per axis");
    require(mesh_high[a] > mesh_low[a], ErrorCode::kInvalidArgument,
            "the high-fidelity mesh must be strictly finer than the low one on every axis");
  }
}

PdeSpec default_spec(PdeKind kind, MeshVariant variant) {
  PdeSpec s;
  s.kind = kind;
  const bool appendix = variant == MeshVariant::kAppendix;
  switch (kind) {
    case PdeKind::kBurgers:
      s.input_ranges = {{0.001, 0.1}};
      s.record_grid = {128, 128};
      if (appendix) s.mesh_low = {16, 16};
      break;
    case PdeKind::kPoisson:
      s.input_ranges.assign(5, Interval{0.1, 0.9});
      s.record_grid = {32, 32};
      if (appendix) s.mesh_high = {16, 16};
      break;
    case PdeKind::kHeat:
      s.input_ranges = {{0.0, 1.0}, {-1.0, 0.0}, {0.01, 0.1}};
      s.record_grid = {100, 100};
      if (appendix) s.mesh_low = {16, 16};
      break;
  }
  return s;
}

MeshSize refine(const MeshSize& nodes, std::size_t factor) {
  require(factor >= 1, ErrorCode::kInvalidArgument, "refinement factor must be positive");
  return {(nodes[0] - 1) * factor + 1, (nodes[1] - 1) * factor + 1};
}

// ---- solvers ----------------------------------------------------------------

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

void check_mesh(const MeshSize& nodes) {
  require(nodes[0] >= 3 && nodes[1] >= 2, ErrorCode::kInvalidArgument,
          "a mesh needs at least 3 nodes in space and 2 along the second axis");
}

void check_range(double v, const Interval& r, const char* what) {
  require(std::isfinite(v) && v >= r.lo && v <= r.hi, ErrorCode::kInvalidArgument,
          std::string(what) + " = " + std::to_string(v) + " is outside [" + std::to_string(r.lo) +
              ", " + std::to_string(r.hi) + "]");
}

/// Tridiagonal matrix over the interior unknowns 1..n-2 (or all n nodes).
SparseMatrix tridiagonal(const Vector& lower, const Vector& diag, const Vector& upper) {
  const Eigen::Index n = diag.size();
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(3 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0) t.emplace_back(i, i - 1, lower(i));
    t.emplace_back(i, i, diag(i));
    if (i + 1 < n) t.emplace_back(i, i + 1, upper(i));
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

/// Solver for a sequence of tridiagonal systems with one sparsity pattern.
/// A singular system yields NaNs.
class TridiagonalSolver {
 public:
  Vector solve(const Vector& lower, const Vector& diag, const Vector& upper, const Vector& rhs) {
    const SparseMatrix a = tridiagonal(lower, diag, upper);
    if (!analyzed_) {
      lu_.analyzePattern(a);
      analyzed_ = true;
    }
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success) return Vector::Constant(rhs.size(), std::nan(""));
    return lu_.solve(rhs);
  }

 private:
  Eigen::SparseLU<SparseMatrix> lu_;
  bool analyzed_ = false;
};

}  // namespace

DenseTensor burgers_on_mesh(double viscosity, const MeshSize& nodes, const BurgersOptions& options) {
  check_mesh(nodes);
  require(viscosity > 0.0 && std::isfinite(viscosity), ErrorCode::kInvalidArgument,
          "viscosity must be positive");
  const PdeSpec spec = default_spec(PdeKind::kBurgers);
  const Grid2 g = spec.grid(nodes);
  const std::size_t nx = nodes[0], nt = nodes[1];
  const double h = g.step(0), dt = g.step(1), v = viscosity;
  const auto m = static_cast<Eigen::Index>(nx - 2);  // interior unknowns

  DenseTensor out(g.shape());
  for (std::size_t i = 0; i < nx; ++i) out.at({i, 0}) = std::sin(std::numbers::pi * g.coord(0, i) / 2.0);

  // Interior values at the previous time level. Boundary nodes are zero for
  // t > 0, so they drop out of every row.
  Vector prev(m);
  for (Eigen::Index i = 0; i < m; ++i) prev(i) = out.at({static_cast<std::size_t>(i + 1), 0});

  TridiagonalSolver picard_solver, newton_solver;
  Vector lower(m), upper(m), diag(m);

  // One backward-Euler step of length tau from `from`. Row i of the residual
  // (lumped mass; the convection term is the exactly integrated Galerkin form
  // of u u_x, which conserves the discrete energy):
  //   h (u_i - from_i) / tau + c_i(u) + v (2 u_i - u_{i-1} - u_{i+1}) / h,
  //   c_i(u) = [(u_{i+1} + u_i) u_{i+1} - (u_{i-1} + u_i) u_{i-1}] / 6.
  // Picard sweeps first, then Newton with a backtracking line search.
  auto implicit_step = [&](const Vector& from, double tau) -> std::optional<Vector> {
    auto residual = [&](const Vector& u) {
      Vector r(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double l = i > 0 ? u(i - 1) : 0.0;
        const double up = i + 1 < m ? u(i + 1) : 0.0;
        r(i) = h * (u(i) - from(i)) / tau + ((up + u(i)) * up - (l + u(i)) * l) / 6.0 +
               v * (2.0 * u(i) - l - up) / h;
      }
      return r;
    };
    const Vector diag0 = Vector::Constant(m, h / tau + 2.0 * v / h);
    Vector u = from;
    for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
      for (Eigen::Index i = 0; i < m; ++i) {
        lower(i) = -v / h - ((i > 0 ? u(i - 1) : 0.0) + u(i)) / 6.0;
        upper(i) = -v / h + ((i + 1 < m ? u(i + 1) : 0.0) + u(i)) / 6.0;
      }
      const Vector next = picard_solver.solve(lower, diag0, upper, (h / tau) * from);
      if (!next.allFinite()) break;
      const bool done = (next - u).lpNorm<Eigen::Infinity>() <= options.tol;
      u = next;
      if (done) return u;
    }
    u = from;
    Vector r = residual(u);
    for (std::size_t it = 0; it < options.max_sweeps; ++it) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double l = i > 0 ? u(i - 1) : 0.0;
        const double up = i + 1 < m ? u(i + 1) : 0.0;
        lower(i) = -v / h - (2.0 * l + u(i)) / 6.0;
        upper(i) = -v / h + (2.0 * up + u(i)) / 6.0;
        diag(i) = diag0(i) + (up - l) / 6.0;
      }
      const Vector delta = newton_solver.solve(lower, diag, upper, -r);
      if (!delta.allFinite()) return std::nullopt;
      double lambda = 1.0;
      Vector trial = u + delta;
      Vector rt = residual(trial);
      while (rt.norm() > (1.0 - 1e-4 * lambda) * r.norm() && lambda > 1e-4) {
        lambda /= 2.0;
        trial = u + lambda * delta;
        rt = residual(trial);
      }
      u = trial;
      r = rt;
      if (lambda == 1.0 && delta.lpNorm<Eigen::Infinity>() <= options.tol) return u;
    }
    return std::nullopt;
  };

  // A step whose nonlinear solve fails is taken as two half steps.
  std::function<std::optional<Vector>(const Vector&, double, int)> advance =
      [&](const Vector& from, double tau, int depth) -> std::optional<Vector> {
    if (auto u = implicit_step(from, tau)) return u;
    if (depth >= options.max_splits) return std::nullopt;
    const auto half = advance(from, tau / 2.0, depth + 1);
    if (!half) return std::nullopt;
    return advance(*half, tau / 2.0, depth + 1);
  };

  for (std::size_t step = 1; step < nt; ++step) {
    const auto u = advance(prev, dt, 0);
    require(u.has_value(), ErrorCode::kNumerical,
            "burgers: nonlinear solve did not converge at time step " + std::to_string(step) +
                " (viscosity " + std::to_string(v) + ")");
    for (Eigen::Index i = 0; i < m; ++i) out.at({static_cast<std::size_t>(i + 1), step}) = (*u)(i);
    prev = *u;
  }
  return out;
}

DenseTensor poisson_on_mesh(const std::array<double, 5>& values, const MeshSize& nodes) {
  require(nodes[0] >= 3 && nodes[1] >= 3, ErrorCode::kInvalidArgument,
          "poisson mesh needs at least 3 nodes per axis");
  const PdeSpec spec = default_spec(PdeKind::kPoisson);
  const Grid2 g = spec.grid(nodes);
  const std::size_t n0 = nodes[0], n1 = nodes[1];
  const double c0 = 1.0 / (g.step(0) * g.step(0));
  const double c1 = 1.0 / (g.step(1) * g.step(1));

  DenseTensor u(g.shape());
  // -1: unknown; otherwise the node value is fixed.
  std::vector<char> fixed(n0 * n1, 0);
  auto at = [&](std::size_t i, std::size_t j) { return i * n1 + j; };
  for (std::size_t i = 0; i < n0; ++i) {
    for (std::size_t j = 0; j < n1; ++j) {
      const bool left = i == 0, right = i + 1 == n0, bottom = j == 0, top = j + 1 == n1;
      if (!(left || right || bottom || top)) continue;
      const double side_x = left ? values[0] : values[1];
      const double side_y = bottom ? values[2] : values[3];
      double v;
      if ((left || right) && (bottom || top)) {
        v = 0.5 * (side_x + side_y);
      } else {
        v = (left || right) ? side_x : side_y;
      }
      u.at({i, j}) = v;
      fixed[at(i, j)] = 1;
    }
  }
  // Center: every node at the smallest distance to (0.5, 0.5).
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < n0; ++i)
    for (std::size_t j = 1; j + 1 < n1; ++j)
      best = std::min(best, std::hypot(g.coord(0, i) - 0.5, g.coord(1, j) - 0.5));
  for (std::size_t i = 1; i + 1 < n0; ++i) {
    for (std::size_t j = 1; j + 1 < n1; ++j) {
      if (std::hypot(g.coord(0, i) - 0.5, g.coord(1, j) - 0.5) <= best + 1e-12) {
        u.at({i, j}) = values[4];
        fixed[at(i, j)] = 1;
      }
    }
  }

  std::vector<Eigen::Index> index(n0 * n1, -1);
  Eigen::Index m = 0;
  for (std::size_t k = 0; k < n0 * n1; ++k)
    if (!fixed[k]) index[k] = m++;
  if (m == 0) return u;

  std::vector<Triplet> t;
  Vector rhs = Vector::Zero(m);
  for (std::size_t i = 1; i + 1 < n0; ++i) {
    for (std::size_t j = 1; j + 1 < n1; ++j) {
      const Eigen::Index r = index[at(i, j)];
      if (r < 0) continue;
      t.emplace_back(r, r, 2.0 * c0 + 2.0 * c1);
      const std::array<std::array<std::size_t, 2>, 4> nb{{{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}}};
      for (std::size_t k = 0; k < 4; ++k) {
        const double c = k < 2 ? c0 : c1;
        const std::size_t q = at(nb[k][0], nb[k][1]);
        if (index[q] >= 0) {
          t.emplace_back(r, index[q], -c);
        } else {
          rhs(r) += c * u.at({nb[k][0], nb[k][1]});
        }
      }
    }
  }
  SparseMatrix a(m, m);
  a.setFromTriplets(t.begin(), t.end());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(a);
  require(ldlt.info() == Eigen::Success, ErrorCode::kNumerical, "poisson: singular stencil system");
  const Vector sol = ldlt.solve(rhs);
  for (std::size_t k = 0; k < n0 * n1; ++k)
    if (index[k] >= 0) u.data()[k] = sol(index[k]);
  return u;
}

DenseTensor heat_on_mesh(double flux_left, double flux_right, double conductivity,
                         const MeshSize& nodes) {
  check_mesh(nodes);
  require(conductivity > 0.0 && std::isfinite(conductivity) && std::isfinite(flux_left) &&
              std::isfinite(flux_right),
          ErrorCode::kInvalidArgument, "heat: conductivity must be positive and fluxes finite");
  const PdeSpec spec = default_spec(PdeKind::kHeat);
  const Grid2 g = spec.grid(nodes);
  const std::size_t nx = nodes[0], nt = nodes[1];
  const auto n = static_cast<Eigen::Index>(nx);
  const double h = g.step(0), dt = g.step(1), k = conductivity;

  DenseTensor out(g.shape());
  auto heaviside = [](double s) { return s > 0.0 ? 1.0 : (s < 0.0 ? 0.0 : 0.5); };
  for (std::size_t i = 0; i < nx; ++i) {
    const double x = g.coord(0, i);
    out.at({i, 0}) = heaviside(x - 0.25) - heaviside(x - 0.75);
  }

  // Node i owns the cell between its neighbouring midpoints (half cells at the
  // ends): w_i du_i/dt = F_{i-1/2} - F_{i+1/2}, F = -k u_x, with the imposed
  // boundary fluxes as the outer faces.
  Vector w = Vector::Constant(n, h);
  w(0) = w(n - 1) = h / 2.0;
  Vector lower = Vector::Constant(n, -k / h), upper = Vector::Constant(n, -k / h);
  Vector diag = w / dt + Vector::Constant(n, 2.0 * k / h);
  diag(0) = w(0) / dt + k / h;
  diag(n - 1) = w(n - 1) / dt + k / h;

  const SparseMatrix a = tridiagonal(lower, diag, upper);
  Eigen::SparseLU<SparseMatrix> lu(a);
  require(lu.info() == Eigen::Success, ErrorCode::kNumerical, "heat: singular system");

  Vector u(n);
  for (Eigen::Index i = 0; i < n; ++i) u(i) = out.at({static_cast<std::size_t>(i), 0});
  for (std::size_t step = 1; step < nt; ++step) {
    Vector rhs = w.cwiseProduct(u) / dt;
    rhs(0) += flux_left;
    rhs(n - 1) -= flux_right;
    u = lu.solve(rhs);
    for (Eigen::Index i = 0; i < n; ++i) out.at({static_cast<std::size_t>(i), step}) = u(i);
  }
  return out;
}

FieldSample solve_on_mesh(const PdeSpec& spec, const Vector& input, const MeshSize& nodes) {
  require(static_cast<std::size_t>(input.size()) == spec.input_dim(), ErrorCode::kShapeMismatch,
          "the " + to_string(spec.kind) + " problem takes " + std::to_string(spec.input_dim()) +
              " inputs, got " + std::to_string(input.size()));
  static const char* const kNames[3][5] = {
      {"viscosity"},
      {"left value", "right value", "bottom value", "top value", "center value"},
      {"left flux", "right flux", "conductivity"}};
  const auto row = static_cast<std::size_t>(spec.kind);
  for (std::size_t k = 0; k < spec.input_dim(); ++k) {
    check_range(input(static_cast<Eigen::Index>(k)), spec.input_ranges[k], kNames[row][k]);
  }
  FieldSample s;
  s.input = input;
  s.grid = spec.grid(nodes);
  switch (spec.kind) {
    case PdeKind::kBurgers: s.field = burgers_on_mesh(input(0), nodes); break;
    case PdeKind::kPoisson:
      s.field = poisson_on_mesh({input(0), input(1), input(2), input(3), input(4)}, nodes);
      break;
    case PdeKind::kHeat: s.field = heat_on_mesh(input(0), input(1), input(2), nodes); break;
  }
  return s;
}

FieldSample solve(const PdeSpec& spec, const Vector& input, Fidelity fidelity) {
  spec.validate();
  return upsample_bilinear(solve_on_mesh(spec, input, spec.mesh(fidelity)), spec.record());
}

FieldSample solve_burgers(double viscosity, const PdeSpec& spec, Fidelity fidelity) {
  require(spec.kind == PdeKind::kBurgers, ErrorCode::kInvalidArgument, "spec is not a burgers spec");
  return solve(spec, Vector::Constant(1, viscosity), fidelity);
}

FieldSample solve_poisson(const std::array<double, 5>& values, const PdeSpec& spec,
                          Fidelity fidelity) {
  require(spec.kind == PdeKind::kPoisson, ErrorCode::kInvalidArgument, "spec is not a poisson spec");
  return solve(spec, Eigen::Map<const Vector>(values.data(), 5), fidelity);
}

FieldSample solve_heat(double flux_left, double flux_right, double conductivity,
                       const PdeSpec& spec, Fidelity fidelity) {
  require(spec.kind == PdeKind::kHeat, ErrorCode::kInvalidArgument, "spec is not a heat spec");
  Vector x(3);
  x << flux_left, flux_right, conductivity;
  return solve(spec, x, fidelity);
}

// ---- resampling -------------------------------------------------------------

namespace {

struct AxisWeights {
  std::vector<std::size_t> cell;
  std::vector<double> frac;
};

AxisWeights axis_weights(const Grid2& src, const Grid2& dst, std::size_t axis) {
  const Interval& s = src.box[axis];
  const double slack = 1e-12 * std::max(1.0, s.hi - s.lo);
  AxisWeights w;
  for (std::size_t i = 0; i < dst.nodes[axis]; ++i) {
    const double x = dst.coord(axis, i);
    require(x >= s.lo - slack && x <= s.hi + slack, ErrorCode::kInvalidArgument,
            "resampling target node " + std::to_string(x) + " lies outside the source grid [" +
                std::to_string(s.lo) + ", " + std::to_string(s.hi) + "]");
    const double t = (x - s.lo) / src.step(axis);
    auto c = static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(src.nodes[axis] - 2)));
    w.cell.push_back(c);
    w.frac.push_back(std::clamp(t - static_cast<double>(c), 0.0, 1.0));
  }
  return w;
}

}  // namespace

FieldSample upsample_bilinear(const FieldSample& field, const Grid2& target) {
  const Grid2& src = field.grid;
  require(field.field.shape() == src.shape(), ErrorCode::kShapeMismatch,
          "field shape does not match its grid");
  require(src.nodes[0] >= 2 && src.nodes[1] >= 2 && target.nodes[0] >= 1 && target.nodes[1] >= 1,
          ErrorCode::kInvalidArgument, "resampling needs at least 2 source nodes per axis");
  FieldSample out;
  out.input = field.input;
  out.grid = target;
  if (target.nodes == src.nodes && target.box[0].lo == src.box[0].lo &&
      target.box[0].hi == src.box[0].hi && target.box[1].lo == src.box[1].lo &&
      target.box[1].hi == src.box[1].hi) {
    out.field = field.field;
    return out;
  }
  const AxisWeights a = axis_weights(src, target, 0);
  const AxisWeights b = axis_weights(src, target, 1);
  out.field = DenseTensor(target.shape());
  const DenseTensor& f = field.field;
  for (std::size_t i = 0; i < target.nodes[0]; ++i) {
    const std::size_t ci = a.cell[i];
    const double s = a.frac[i];
    for (std::size_t j = 0; j < target.nodes[1]; ++j) {
      const std::size_t cj = b.cell[j];
      const double t = b.frac[j];
      out.field.at({i, j}) = (1 - s) * (1 - t) * f.at({ci, cj}) + s * (1 - t) * f.at({ci + 1, cj}) +
                             (1 - s) * t * f.at({ci, cj + 1}) + s * t * f.at({ci + 1, cj + 1});
    }
  }
  return out;
}

// ---- sampling -----------------------------------------------------------------

namespace {

constexpr int kSobolBits = 32;

struct DirectionEntry {
  unsigned degree;
  unsigned poly;
  std::array<std::uint32_t, 8> m;
};

// Joe & Kuo (2008), new-joe-kuo-6.21201, dimensions 2..21.
constexpr DirectionEntry kDirections[kSobolMaxDims - 1] = {
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
};

std::array<std::uint32_t, kSobolBits> direction_numbers(std::size_t dim) {
  std::array<std::uint32_t, kSobolBits> v{};
  if (dim == 0) {
    for (int b = 0; b < kSobolBits; ++b) v[b] = 1u << (kSobolBits - 1 - b);
    return v;
  }
  const DirectionEntry& e = kDirections[dim - 1];
  const int s = static_cast<int>(e.degree);
  for (int b = 0; b < kSobolBits; ++b) {
    if (b < s) {
      v[b] = e.m[b] << (kSobolBits - 1 - b);
      continue;
    }
    std::uint32_t x = v[b - s] ^ (v[b - s] >> s);
    for (int k = 1; k < s; ++k) {
      if ((e.poly >> (s - 1 - k)) & 1u) x ^= v[b - k];
    }
    v[b] = x;
  }
  return v;
}

std::vector<std::uint32_t> sobol_bits(std::size_t n, std::size_t dims, std::uint64_t skip) {
  require(dims >= 1 && dims <= kSobolMaxDims, ErrorCode::kUnsupported,
          "Sobol points support 1.." + std::to_string(kSobolMaxDims) + " dimensions, got " +
              std::to_string(dims));
  require(skip + n < (std::uint64_t{1} << kSobolBits), ErrorCode::kUnsupported,
          "too many Sobol points requested");
  std::vector<std::uint32_t> out(n * dims);
  for (std::size_t k = 0; k < dims; ++k) {
    const auto v = direction_numbers(k);
    // Point index i (1-based; the zero point i = 0 is skipped) is the XOR of the
    // direction numbers selected by the Gray code of i.
    const std::uint64_t first = skip + 1;
    const std::uint64_t gray = first ^ (first >> 1);
    std::uint32_t x = 0;
    for (int b = 0; b < kSobolBits; ++b)
      if ((gray >> b) & 1u) x ^= v[b];
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) {
        // Gray code of j and j - 1 differ in the lowest set bit of j.
        const std::uint64_t j = first + i;
        x ^= v[std::countr_zero(j)];
      }
      out[i * dims + k] = x;
    }
  }
  return out;
}

Matrix to_unit(const std::vector<std::uint32_t>& bits, std::size_t n, std::size_t dims) {
  Matrix p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dims; ++k)
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          std::ldexp(static_cast<double>(bits[i * dims + k]), -kSobolBits);
  return p;
}

}  // namespace

Matrix sobol_points(std::size_t n, std::size_t dims, std::uint64_t skip) {
  return to_unit(sobol_bits(n, dims, skip), n, dims);
}

Matrix shifted_sobol_points(std::size_t n, std::size_t dims, std::uint64_t seed) {
  auto bits = sobol_bits(n, dims, 0);
  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> shift(dims);
  for (auto& s : shift) s = static_cast<std::uint32_t>(rng() >> 32);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dims; ++k) bits[i * dims + k] ^= shift[k];
  return to_unit(bits, n, dims);
}

// ---- datasets -------------------------------------------------------------------

namespace {

/// Independent streams derived from one user seed (splitmix64 finalizer).
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix uniform_points(std::size_t n, std::size_t dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = u(rng);
  return p;
}

Matrix design(const PdeSpec& spec, std::size_t n, Sampler sampler, std::uint64_t seed) {
  const Matrix unit = sampler == Sampler::kSobol ? shifted_sobol_points(n, spec.input_dim(), seed)
                                                 : uniform_points(n, spec.input_dim(), seed);
  Matrix x(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) x.row(i) = spec.map_unit(unit.row(i).transpose()).transpose();
  return x;
}

struct SolveTask {
  const Matrix* inputs;
  Eigen::Index row;
  MeshSize mesh;
  bool to_record;
  DenseTensor* out;  // stacked outputs
  std::size_t slot;
};

DenseTensor stacked(std::size_t n, const Shape& field) {
  Shape s{n};
  s.insert(s.end(), field.begin(), field.end());
  return DenseTensor(s);
}

double rms_diff(const DenseTensor& a, const DenseTensor& b) {
  return std::sqrt((a.as_vector() - b.as_vector()).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

PdeDataset make_dataset(const DatasetConfig& config, std::size_t workers) {
  const PdeSpec& spec = config.spec;
  spec.validate();
  require(config.n_low >= 1 && config.n_high >= 1, ErrorCode::kInvalidArgument,
          "both fidelities need at least one training sample");
  require(config.n_high <= config.n_low, ErrorCode::kInvalidArgument,
          "n_high (" + std::to_string(config.n_high) + ") must not exceed n_low (" +
              std::to_string(config.n_low) + ")");

  PdeDataset d;
  d.config = config;
  d.train.levels.resize(2);
  FidelityLevel& low = d.train.levels[0];
  FidelityLevel& high = d.train.levels[1];
  low.inputs = design(spec, config.n_low, config.sampler, stream_seed(config.seed, 0));
  if (config.structure == Structure::kSubset) {
    high.inputs = low.inputs.topRows(static_cast<Eigen::Index>(config.n_high));
  } else {
    high.inputs = design(spec, config.n_high, config.sampler, stream_seed(config.seed, 1));
  }
  d.test_inputs = design(spec, config.n_test, Sampler::kUniform, stream_seed(config.seed, 2));

  const Grid2 record = spec.record();
  const Shape low_shape = config.aligned ? record.shape() : spec.grid(spec.mesh_low).shape();
  low.outputs = stacked(config.n_low, low_shape);
  high.outputs = stacked(config.n_high, record.shape());
  d.test_outputs = stacked(config.n_test, record.shape());

  std::vector<SolveTask> tasks;
  for (std::size_t i = 0; i < config.n_low; ++i)
    tasks.push_back({&low.inputs, static_cast<Eigen::Index>(i), spec.mesh_low, config.aligned, &low.outputs, i});
  for (std::size_t i = 0; i < config.n_high; ++i)
    tasks.push_back({&high.inputs, static_cast<Eigen::Index>(i), spec.mesh_high, true, &high.outputs, i});
  for (std::size_t i = 0; i < config.n_test; ++i)
    tasks.push_back({&d.test_inputs, static_cast<Eigen::Index>(i), spec.mesh_high, true, &d.test_outputs, i});

  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const SolveTask& task = tasks[t];
    FieldSample s = solve_on_mesh(spec, task.inputs->row(task.row).transpose(), task.mesh);
    if (task.to_record) s = upsample_bilinear(s, record);
    require(s.field.as_vector().allFinite(), ErrorCode::kNumerical, "solver produced a non-finite field");
    auto dst = task.out->as_matrix().row(static_cast<Eigen::Index>(task.slot));
    dst = s.field.as_vector().transpose();
  });
  return d;
}

MultiFidelityDataset high_prefix(const MultiFidelityDataset& data, std::size_t n_high) {
  require(data.num_levels() >= 2, ErrorCode::kInvalidArgument, "dataset needs at least two levels");
  const FidelityLevel& top = data.levels.back();
  require(n_high >= 1 && n_high <= static_cast<std::size_t>(top.inputs.rows()),
          ErrorCode::kInvalidArgument,
          "high-fidelity prefix of " + std::to_string(n_high) + " samples requested, " +
              std::to_string(top.inputs.rows()) + " available");
  MultiFidelityDataset out = data;
  std::vector<std::size_t> rows(n_high);
  for (std::size_t i = 0; i < n_high; ++i) rows[i] = i;
  out.levels.back().inputs = top.inputs.topRows(static_cast<Eigen::Index>(n_high));
  out.levels.back().outputs = select_first_mode(top.outputs, rows);
  return out;
}

FidelityErrors fidelity_errors(const PdeSpec& spec, const Matrix& inputs, std::size_t factor,
                               std::size_t workers) {
  spec.validate();
  require(inputs.rows() >= 1, ErrorCode::kInvalidArgument, "no inputs to compare");
  const Grid2 record = spec.record();
  const MeshSize reference = refine(spec.mesh_high, factor);
  std::vector<double> low(static_cast<std::size_t>(inputs.rows())), high(low.size());
  parallel_for(low.size(), workers, [&](std::size_t n) {
    const Vector x = inputs.row(static_cast<Eigen::Index>(n)).transpose();
    const DenseTensor ref = upsample_bilinear(solve_on_mesh(spec, x, reference), record).field;
    low[n] = rms_diff(solve(spec, x, Fidelity::kLow).field, ref);
    high[n] = rms_diff(solve(spec, x, Fidelity::kHigh).field, ref);
  });
  FidelityErrors e;
  for (std::size_t n = 0; n < low.size(); ++n) {
    e.low += low[n] / static_cast<double>(low.size());
    e.high += high[n] / static_cast<double>(low.size());
  }
  return e;
}

}  // namespace mfgar
