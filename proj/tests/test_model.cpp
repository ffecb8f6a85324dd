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

#include <random>

#include "doctest.h"
#include "gar_oracle.hpp"
#include "json.hpp"
#include "mfgar/error.hpp"
#include "mfgar/model.hpp"
#include "mfgar/pdebench.hpp"

using namespace mfgar;

namespace {

MultiFidelityDataset small_dataset(std::uint64_t seed, bool aligned, Structure structure) {
  DatasetConfig cfg;
  cfg.spec = default_spec(PdeKind::kPoisson);
  cfg.spec.record_grid = {9, 9};
  cfg.spec.mesh_high = {9, 9};
  cfg.spec.mesh_low = {5, 5};
  cfg.n_low = 8;
  cfg.n_high = 4;
  cfg.n_test = 0;
  cfg.aligned = aligned;
  cfg.structure = structure;
  cfg.seed = seed;
  return make_dataset(cfg).train;
}

ModelFitConfig quick_config() {
  ModelFitConfig c;
  c.optim.max_iters = 15;
  return c;
}

void check_same_predictions(const FittedModel& a, const FittedModel& b, const Matrix& xs) {
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const PosteriorField pa = predict(a, xs.row(i).transpose());
    const PosteriorField pb = predict(b, xs.row(i).transpose());
    CHECK(pa.mean == pb.mean);
    CHECK(pa.variance_diag == pb.variance_diag);
  }
}

}  // namespace

TEST_CASE("model kinds parse and print") {
  for (ModelKind k : {ModelKind::kGar, ModelKind::kCigar, ModelKind::kAr, ModelKind::kHogp}) {
    CHECK(parse_model_kind(to_string(k)) == k);
  }
  CHECK(parse_model_kind("hogp-high-only") == ModelKind::kHogp);
  CHECK_THROWS_AS(parse_model_kind("nar"), Error);
}

TEST_CASE("every model kind fits, predicts and round-trips through JSON") {
  const MultiFidelityDataset aligned = small_dataset(1, true, Structure::kSubset);
  const MultiFidelityDataset unaligned = small_dataset(2, false, Structure::kNonsubset);
  const Matrix xs = aligned.levels[1].inputs.topRows(2);

  for (ModelKind kind : {ModelKind::kGar, ModelKind::kCigar, ModelKind::kAr, ModelKind::kHogp}) {
    CAPTURE(to_string(kind));
    const MultiFidelityDataset& data = kind == ModelKind::kAr ? aligned : unaligned;
    const FittedModel m = fit_model(kind, data, quick_config());
    CHECK(m.kind == kind);
    CHECK(!m.stages.empty());
    const PosteriorField p = predict(m, xs.row(0).transpose());
    CHECK(p.mean.shape() == Shape{9, 9});
    CHECK(p.variance_diag.as_vector().minCoeff() > 0.0);
    CHECK(training_nll(m) == doctest::Approx(training_nll(m)));

    const std::string text = model_to_json(m);
    const FittedModel back = model_from_json(text);
    CHECK(back.kind == kind);
    check_same_predictions(m, back, xs);
    CHECK(training_nll(back) == training_nll(m));
    FittedModel bare = m;
    bare.stages.clear();
    CHECK(model_to_json(back) == model_to_json(bare));

    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("format") == "mfgar-model");
    CHECK(j.at("kind") == to_string(kind));
  }
}

TEST_CASE("the AR baseline refuses unaligned outputs with an actionable message") {
  const MultiFidelityDataset unaligned = small_dataset(3, false, Structure::kSubset);
  try {
    fit_model(ModelKind::kAr, unaligned, quick_config());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    CHECK(std::string(e.what()).find("aligned") != std::string::npos);
  }
}

TEST_CASE("serialized GAR matches the directly built model") {
  std::mt19937_64 rng(7);
  const auto inst = oracle::random_gar_instance(rng, {{2, 3}, {3, 3}}, {6, 4}, 2, false);
  FittedModel m;
  m.kind = ModelKind::kGar;
  m.model = make_gar_model(inst.data, inst.base, inst.transitions);
  const FittedModel back = model_from_json(model_to_json(m));
  const auto& g = std::get<GarModel>(back.model);
  CHECK(gar_nll(g).total == gar_nll(std::get<GarModel>(m.model)).total);
  check_same_predictions(m, back, inst.data.levels[1].inputs);
}

TEST_CASE("malformed model documents are rejected") {
  CHECK_THROWS_AS(model_from_json("not json"), Error);
  CHECK_THROWS_AS(model_from_json(R"({"format":"mfgar-model","version":99,"kind":"gar"})"), Error);
  CHECK_THROWS_AS(model_from_json(R"({"format":"other","version":1,"kind":"gar"})"), Error);
  CHECK_THROWS_AS(model_from_json(R"({"format":"mfgar-model","version":1,"kind":"gar"})"), Error);
}
