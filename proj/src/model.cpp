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

#include "mfgar/model.hpp"

#include "json.hpp"
#include "mfgar/error.hpp"

namespace mfgar {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kGar: return "gar";
    case ModelKind::kCigar: return "cigar";
    case ModelKind::kAr: return "ar";
    case ModelKind::kHogp: return "hogp";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "gar") return ModelKind::kGar;
  if (name == "cigar") return ModelKind::kCigar;
  if (name == "ar") return ModelKind::kAr;
  if (name == "hogp" || name == "hogp-high-only") return ModelKind::kHogp;
  fail(ErrorCode::kInvalidArgument, "unknown model '" + name + "' (expected gar, cigar, ar or hogp)");
}

FittedModel fit_model(ModelKind kind, const MultiFidelityDataset& data, const ModelFitConfig& config) {
  data.validate();
  FittedModel out;
  out.kind = kind;
  switch (kind) {
    case ModelKind::kGar:
    case ModelKind::kAr: {
      GarFitConfig c;
      c.optim = config.optim;
      c.prior = config.prior;
      c.center = config.center;
      c.latent_rank = config.latent_rank;
      c.match_tol = config.match_tol;
      GarFitResult r = kind == ModelKind::kAr ? ar_baseline_fit(data, c) : gar_fit_recursive(data, c);
      out.model = std::move(r.model);
      out.stages = std::move(r.stages);
      break;
    }
    case ModelKind::kCigar: {
      require(data.num_levels() == 2, ErrorCode::kUnsupported, "the cigar model takes exactly two levels");
      CigarFitConfig c;
      c.optim = config.optim;
      c.center = config.center;
      c.match_tol = config.match_tol;
      CigarFitResult r = cigar_fit(data, c);
      out.model = std::move(r.model);
      out.stages = std::move(r.stages);
      break;
    }
    case ModelKind::kHogp: {
      TgpFitConfig c;
      c.optim = config.optim;
      c.prior = config.prior;
      c.center = config.center;
      c.latent_rank = config.latent_rank;
      const FidelityLevel& top = data.levels.back();
      TgpFitResult r = tgp_fit(top.inputs, top.outputs, c);
      out.model = std::move(r.model);
      out.stages.push_back(std::move(r.optim));
      break;
    }
  }
  return out;
}

PosteriorField predict(const FittedModel& model, const Vector& x_star) {
  return std::visit(
      [&](const auto& m) -> PosteriorField {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GarModel>) {
          return gar_predict(m, x_star);
        } else if constexpr (std::is_same_v<M, CigarModel>) {
          return cigar_predict(m, x_star);
        } else {
          return tgp_predict(m, x_star);
        }
      },
      model.model);
}

std::vector<PosteriorField> predict_all(const FittedModel& model, const Matrix& inputs) {
  std::vector<PosteriorField> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) out.push_back(predict(model, inputs.row(i).transpose()));
  return out;
}

double training_nll(const FittedModel& model) {
  return std::visit(
      [](const auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GarModel>) {
          return gar_nll(m).total;
        } else if constexpr (std::is_same_v<M, CigarModel>) {
          return cigar_nll(m).total;
        } else {
          return tgp_nll(m);
        }
      },
      model.model);
}

Shape output_shape(const FittedModel& model) {
  return std::visit(
      [](const auto& m) -> Shape {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, TgpModel>) {
          return m.output_shape();
        } else {
          return m.levels.back().outputs.trailing_shape();
        }
      },
      model.model);
}

// ---- JSON -----------------------------------------------------------------------

namespace {

using nlohmann::json;

constexpr int kModelVersion = 1;

json to_j(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  require(r >= 0 && c >= 0 && data.size() == static_cast<std::size_t>(r * c), ErrorCode::kIo,
          "matrix data does not match its size");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)];
  return m;
}

json to_j(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json to_j(const DenseTensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

DenseTensor tensor_from(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  auto data = j.at("data").get<std::vector<double>>();
  require(shape_size(shape) == data.size(), ErrorCode::kIo, "tensor data does not match its shape");
  return DenseTensor(std::move(shape), std::move(data));
}

json to_j(const ArdKernelParams& k) {
  return {{"log_amplitude", k.log_amplitude}, {"log_lengthscales", to_j(k.log_lengthscales)}};
}

ArdKernelParams kernel_from(const json& j) {
  ArdKernelParams k;
  k.log_amplitude = j.at("log_amplitude").get<double>();
  k.log_lengthscales = vector_from(j.at("log_lengthscales"));
  return k;
}

json to_j(const TgpParams& p) {
  json modes = json::array();
  for (const auto& m : p.features.modes) modes.push_back({{"features", to_j(m.features)}, {"kernel", to_j(m.kernel)}});
  return {{"input_kernel", to_j(p.input_kernel)},
          {"log_noise", p.log_noise},
          {"identity_outputs", p.identity_outputs},
          {"latent_modes", modes}};
}

TgpParams params_from(const json& j) {
  TgpParams p;
  p.input_kernel = kernel_from(j.at("input_kernel"));
  p.log_noise = j.at("log_noise").get<double>();
  p.identity_outputs = j.at("identity_outputs").get<bool>();
  for (const auto& m : j.at("latent_modes")) {
    p.features.modes.push_back({matrix_from(m.at("features")), kernel_from(m.at("kernel"))});
  }
  return p;
}

json to_j(const TuckerWeights& w) {
  json f = json::array();
  for (const auto& m : w.factors) f.push_back(to_j(m));
  return f;
}

TuckerWeights weights_from(const json& j) {
  TuckerWeights w;
  for (const auto& m : j) w.factors.push_back(matrix_from(m));
  return w;
}

json levels_j(const std::vector<FidelityLevel>& levels, const std::vector<DenseTensor>& offsets) {
  json out = json::array();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    json l = {{"inputs", to_j(levels[i].inputs)}, {"outputs", to_j(levels[i].outputs)}};
    l["offset"] = i < offsets.size() && offsets[i].size() > 0 ? to_j(offsets[i]) : json(nullptr);
    out.push_back(l);
  }
  return out;
}

void levels_from(const json& j, std::vector<FidelityLevel>& levels, std::vector<DenseTensor>& offsets) {
  for (const auto& l : j) {
    levels.push_back({matrix_from(l.at("inputs")), tensor_from(l.at("outputs"))});
    offsets.push_back(l.at("offset").is_null() ? DenseTensor() : tensor_from(l.at("offset")));
  }
}

json stages_j(const std::vector<OptimResult>& stages) {
  json out = json::array();
  for (const auto& s : stages) {
    out.push_back({{"objective", s.objective}, {"iterations", s.iterations}, {"converged", s.converged}});
  }
  return out;
}

}  // namespace

std::string model_to_json(const FittedModel& model) {
  json j;
  j["format"] = "mfgar-model";
  j["version"] = kModelVersion;
  j["kind"] = to_string(model.kind);
  j["fit"] = stages_j(model.stages);
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GarModel>) {
          j["base"] = to_j(m.base);
          json t = json::array();
          for (const auto& tr : m.transitions) t.push_back({{"weights", to_j(tr.weights)}, {"residual", to_j(tr.residual)}});
          j["transitions"] = t;
          j["levels"] = levels_j(m.levels, m.offsets);
          j["match_tol"] = m.match_tol;
          j["imaginary_cap"] = m.imaginary_cap;
        } else if constexpr (std::is_same_v<M, CigarModel>) {
          j["low"] = to_j(m.low);
          j["residual"] = to_j(m.residual);
          j["weights"] = to_j(m.weights);
          j["levels"] = levels_j(m.levels, m.offsets);
          j["match_tol"] = m.match_tol;
        } else {
          j["params"] = to_j(m.params);
          j["levels"] = levels_j({{m.inputs, m.outputs}}, {m.offset});
        }
      },
      model.model);
  return j.dump(1) + "\n";
}

FittedModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("model document is not valid JSON: ") + e.what());
  }
  FittedModel out;
  try {
    require(j.at("format") == "mfgar-model", ErrorCode::kIo, "not an mfgar model document");
    const int version = j.at("version").get<int>();
    require(version == kModelVersion, ErrorCode::kIo,
            "unsupported model document version " + std::to_string(version));
    out.kind = parse_model_kind(j.at("kind").get<std::string>());
    std::vector<FidelityLevel> levels;
    std::vector<DenseTensor> offsets;
    levels_from(j.at("levels"), levels, offsets);
    switch (out.kind) {
      case ModelKind::kGar:
      case ModelKind::kAr: {
        GarModel m;
        m.kind = to_string(out.kind);
        m.base = params_from(j.at("base"));
        for (const auto& t : j.at("transitions")) {
          GarTransition tr;
          tr.weights = weights_from(t.at("weights"));
          tr.residual = params_from(t.at("residual"));
          m.transitions.push_back(std::move(tr));
        }
        m.levels = std::move(levels);
        m.offsets = std::move(offsets);
        m.match_tol = j.at("match_tol").get<double>();
        m.imaginary_cap = j.at("imaginary_cap").get<std::size_t>();
        gar_prepare(m);
        out.model = std::move(m);
        break;
      }
      case ModelKind::kCigar: {
        CigarModel m;
        m.low = params_from(j.at("low"));
        m.residual = params_from(j.at("residual"));
        m.weights = weights_from(j.at("weights"));
        m.levels = std::move(levels);
        m.offsets = std::move(offsets);
        m.match_tol = j.at("match_tol").get<double>();
        cigar_prepare(m);
        out.model = std::move(m);
        break;
      }
      case ModelKind::kHogp: {
        require(levels.size() == 1, ErrorCode::kIo, "a hogp document holds exactly one level");
        TgpModel m;
        m.inputs = levels[0].inputs;
        m.outputs = levels[0].outputs;
        m.offset = offsets[0];
        m.set_params(params_from(j.at("params")));
        m.ensure_cache();
        out.model = std::move(m);
        break;
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed model document: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    fail(ErrorCode::kIo, std::string("inconsistent model document: ") + e.what());
  }
  return out;
}

}  // namespace mfgar
