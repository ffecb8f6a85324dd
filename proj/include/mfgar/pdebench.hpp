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

// Deterministic multi-fidelity data for three canonical PDEs.
//
//   burgers  u_t + u u_x = v u_xx on [0,1] x [0,3], u(x,0) = sin(pi x / 2),
//            u(0,t) = u(1,t) = 0 for t > 0. Input: v in [0.001, 0.1].
//            Hat-function finite elements (lumped mass, exactly integrated
//            Galerkin convection) and backward Euler; every step is solved by Picard
//            iteration with a damped Newton fallback, and a step that still
//            fails is taken as two half steps.
//   poisson  u_xx + u_yy = 0 on [0,1]^2 with constant Dirichlet values on the
//            left, right, bottom and top borders and a pinned center.
//            Inputs: the five values, each in [0.1, 0.9]. Five-point stencil;
//            the center value is imposed on the mesh node(s) nearest
//            (0.5, 0.5) (a 2x2 block when the node count is even). Corner
//            nodes take the mean of their two borders.
//   heat     u_t = k u_xx on [0,1] x [0,5], u(x,0) = H(x-0.25) - H(x-0.75),
//            boundary fluxes -k u_x(0) = q_left and -k u_x(1) = q_right.
//            Inputs: q_left in [0,1], q_right in [-1,0], k in [0.01, 0.1].
//            Conservative half-cell finite differences, backward Euler.
//
// Fields are 2-D tensors whose first mode is the first axis of the domain
// (x) and whose second mode is y (poisson) or t (burgers, heat). A mesh of
// (n0, n1) nodes spans the whole domain, boundaries included.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfgar/gar.hpp"
#include "mfgar/tensor.hpp"

namespace mfgar {

enum class PdeKind { kBurgers, kPoisson, kHeat };
enum class Fidelity { kLow, kHigh };
enum class MeshVariant { kMain, kAppendix };

std::string to_string(PdeKind kind);
PdeKind parse_pde_kind(const std::string& name);
MeshVariant parse_mesh_variant(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

using MeshSize = std::array<std::size_t, 2>;

/// Regular node grid over a box, boundaries included.
struct Grid2 {
  MeshSize nodes{2, 2};
  std::array<Interval, 2> box;

  double coord(std::size_t axis, std::size_t i) const;
  double step(std::size_t axis) const;
  Shape shape() const { return {nodes[0], nodes[1]}; }
};

struct PdeSpec {
  PdeKind kind = PdeKind::kPoisson;
  std::vector<Interval> input_ranges;
  MeshSize mesh_low{8, 8};
  MeshSize mesh_high{32, 32};
  MeshSize record_grid{32, 32};

  std::size_t input_dim() const { return input_ranges.size(); }
  Grid2 grid(const MeshSize& nodes) const;  // over this PDE's domain
  Grid2 record() const { return grid(record_grid); }
  const MeshSize& mesh(Fidelity f) const { return f == Fidelity::kLow ? mesh_low : mesh_high; }
  /// Maps a point of the unit cube to the input ranges.
  Vector map_unit(const Vector& u) const;
  /// Input count and ranges, at least 2 nodes per axis, and a high mesh
  /// strictly finer than the low one on every axis.
  void validate() const;
};

/// Default spec. Main meshes are 8x8 (low) and 32x32 (high) for every PDE.
/// The appendix variant uses 16/32 (burgers, heat) and 8/16 (poisson).
/// Record grids: burgers 128x128, poisson 32x32, heat 100x100.
PdeSpec default_spec(PdeKind kind, MeshVariant variant = MeshVariant::kMain);

/// (n - 1) * factor + 1 nodes per axis: every old node stays a node.
MeshSize refine(const MeshSize& nodes, std::size_t factor);

struct FieldSample {
  Vector input;
  DenseTensor field;  // grid.shape()
  Grid2 grid;
};

struct BurgersOptions {
  double tol = 1e-8;             // max-norm update tolerance per sweep
  std::size_t max_sweeps = 50;   // Picard sweeps, then as many Newton steps
  int max_splits = 12;           // halvings of a step whose solve fails
};

/// Solutions on the nodes of a given mesh.
DenseTensor burgers_on_mesh(double viscosity, const MeshSize& nodes,
                            const BurgersOptions& options = {});
DenseTensor poisson_on_mesh(const std::array<double, 5>& values, const MeshSize& nodes);
DenseTensor heat_on_mesh(double flux_left, double flux_right, double conductivity,
                         const MeshSize& nodes);

/// Solves on `nodes` for any PDE kind. The input is range-checked.
FieldSample solve_on_mesh(const PdeSpec& spec, const Vector& input, const MeshSize& nodes);

/// Solves on the fidelity mesh and resamples onto the record grid.
FieldSample solve_burgers(double viscosity, const PdeSpec& spec, Fidelity fidelity);
FieldSample solve_poisson(const std::array<double, 5>& values, const PdeSpec& spec,
                          Fidelity fidelity);
FieldSample solve_heat(double flux_left, double flux_right, double conductivity,
                       const PdeSpec& spec, Fidelity fidelity);
FieldSample solve(const PdeSpec& spec, const Vector& input, Fidelity fidelity);

/// Bilinear interpolation onto the target nodes. Throws kInvalidArgument when
/// a target node lies outside the source box.
FieldSample upsample_bilinear(const FieldSample& field, const Grid2& target);

/// Number of dimensions covered by the direction-number table.
inline constexpr std::size_t kSobolMaxDims = 21;

/// Points skip, skip+1, ... of the Sobol sequence (Joe-Kuo direction numbers,
/// Gray-code order). The all-zero point is left out, so the sequence starts at
/// (0.5, ..., 0.5). Throws kUnsupported for dims > kSobolMaxDims.
Matrix sobol_points(std::size_t n, std::size_t dims, std::uint64_t skip = 0);

/// Sobol points with a random digital shift (XOR of every coordinate with
/// seed-drawn bits). Shifting keeps the net structure and gives distinct
/// designs for distinct seeds.
Matrix shifted_sobol_points(std::size_t n, std::size_t dims, std::uint64_t seed);

enum class Sampler { kUniform, kSobol };
enum class Structure { kSubset, kNonsubset };

std::string to_string(Sampler sampler);
std::string to_string(Structure structure);
Sampler parse_sampler(const std::string& name);
Structure parse_structure(const std::string& name);

struct DatasetConfig {
  PdeSpec spec;
  std::size_t n_low = 32;
  std::size_t n_high = 32;
  std::size_t n_test = 128;
  Sampler sampler = Sampler::kSobol;
  Structure structure = Structure::kSubset;
  bool aligned = false;
  std::uint64_t seed = 0;
};

/// Training levels plus a high-fidelity test set (uniform inputs from an
/// independent stream, outputs on the record grid).
struct PdeDataset {
  DatasetConfig config;
  MultiFidelityDataset train;  // [low, high]
  Matrix test_inputs;
  DenseTensor test_outputs;    // (n_test, record grid)
};

/// subset: the high inputs are the first n_high low inputs. nonsubset: the high
/// inputs come from an independent stream. High outputs live on the record
/// grid; low outputs on the low mesh, or on the record grid when aligned.
/// Every sample is solved independently on `workers` threads; the result does
/// not depend on the worker count.
PdeDataset make_dataset(const DatasetConfig& config, std::size_t workers = 1);

/// Keeps the first n_high high-fidelity samples.
MultiFidelityDataset high_prefix(const MultiFidelityDataset& data, std::size_t n_high);

/// Mean record-grid RMS error of the low and high fidelity solutions against a
/// reference solved on the high mesh refined `factor` times.
struct FidelityErrors {
  double low = 0.0;
  double high = 0.0;
};
FidelityErrors fidelity_errors(const PdeSpec& spec, const Matrix& inputs, std::size_t factor = 4,
                               std::size_t workers = 1);

// ---- on-disk format (see docs/FORMATS.md) --------------------------------

/// Binary tensor: "MFGT", uint32 version, uint32 order, uint64 dims, then the
/// float64 entries in row-major order; all little-endian.
void write_tensor(const std::string& path, const DenseTensor& tensor);
DenseTensor read_tensor(const std::string& path);

/// Inputs as CSV: header x0,...,x{l-1}, then one row per sample with values
/// printed to round-trip precision.
void write_inputs_csv(const std::string& path, const Matrix& inputs);
Matrix read_inputs_csv(const std::string& path);

/// Writes manifest.json plus per-level input CSVs and output tensors into dir
/// (created if needed). Output is byte-identical for identical datasets.
void write_dataset(const PdeDataset& dataset, const std::string& dir);
PdeDataset read_dataset(const std::string& dir);

}  // namespace mfgar
