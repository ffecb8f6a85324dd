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

#include "mfgar/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>

#include "json.hpp"
#include "mfgar/error.hpp"
#include "mfgar/metrics.hpp"
#include "mfgar/parallel.hpp"

namespace mfgar {

void BenchmarkConfig::validate() const {
  spec.validate();
  require(!models.empty(), ErrorCode::kInvalidArgument, "no models to benchmark");
  require(!n_high_sweep.empty(), ErrorCode::kInvalidArgument, "the n_high sweep is empty");
  require(repeats >= 1, ErrorCode::kInvalidArgument, "repeats must be at least 1");
  require(n_test >= 1, ErrorCode::kInvalidArgument, "the test set must not be empty");
  for (std::size_t n : n_high_sweep) {
    require(n >= 1 && n <= n_low, ErrorCode::kInvalidArgument,
            "sweep value " + std::to_string(n) + " must lie in 1..n_low (" + std::to_string(n_low) + ")");
  }
}

std::size_t BenchmarkResult::failures() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; }));
}

const BenchmarkSummary& BenchmarkResult::at(ModelKind model, std::size_t n_high) const {
  for (const auto& s : summary) {
    if (s.model == model && s.n_high == n_high) return s;
  }
  fail(ErrorCode::kInvalidArgument, "no summary for " + to_string(model) + " at n_high " + std::to_string(n_high));
}

namespace {

namespace fs = std::filesystem;

std::string dataset_dir(std::size_t repeat) { return "datasets/repeat_" + std::to_string(repeat); }

std::string model_file(ModelKind m, std::size_t n_high, std::size_t repeat) {
  return "models/" + to_string(m) + "_nh" + std::to_string(n_high) + "_r" + std::to_string(repeat) + ".json";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

/// RFC 4180 quoting when the field needs it.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' || c == '\r' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<BenchmarkSummary> summarize(const BenchmarkConfig& c, const std::vector<BenchmarkRow>& rows) {
  std::vector<BenchmarkSummary> out;
  for (ModelKind m : c.models) {
    for (std::size_t n : c.n_high_sweep) {
      BenchmarkSummary s;
      s.model = m;
      s.n_high = n;
      std::vector<double> rmse, nll;
      for (const auto& r : rows) {
        if (r.model == m && r.n_high == n && r.ok) {
          rmse.push_back(r.rmse);
          nll.push_back(r.nll);
        }
      }
      s.n_ok = rmse.size();
      auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = sd = 0.0;
        if (v.empty()) return;
        for (double x : v) mean += x / static_cast<double>(v.size());
        if (v.size() < 2) return;
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
      };
      stats(rmse, s.mean_rmse, s.std_rmse);
      stats(nll, s.mean_nll, s.std_nll);
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace

BenchmarkResult run_benchmark(const BenchmarkConfig& config, const RowSink& sink) {
  config.validate();
  const std::size_t max_high = *std::max_element(config.n_high_sweep.begin(), config.n_high_sweep.end());
  const bool files = !config.out_dir.empty();
  const fs::path root(config.out_dir);
  if (files) {
    std::error_code ec;
    fs::create_directories(root / "models", ec);
    require(!ec, ErrorCode::kIo, "cannot create '" + (root / "models").string() + "': " + ec.message());
  }

  std::vector<PdeDataset> datasets;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    DatasetConfig d;
    d.spec = config.spec;
    d.n_low = config.n_low;
    d.n_high = max_high;
    d.n_test = config.n_test;
    d.sampler = config.sampler;
    d.structure = config.structure;
    d.aligned = config.aligned;
    d.seed = config.seed + r;
    datasets.push_back(make_dataset(d, config.workers));
    if (files) write_dataset(datasets.back(), (root / dataset_dir(r)).string());
  }
  std::vector<std::vector<DenseTensor>> truths;
  for (const auto& d : datasets) truths.push_back(split_samples(d.test_outputs));

  const std::size_t n_sweep = config.n_high_sweep.size();
  std::vector<BenchmarkRow> rows(config.models.size() * n_sweep * config.repeats);
  std::mutex sink_mutex;
  parallel_for(rows.size(), config.workers, [&](std::size_t t) {
    const std::size_t r = t % config.repeats;
    const std::size_t k = (t / config.repeats) % n_sweep;
    const std::size_t m = t / (config.repeats * n_sweep);
    BenchmarkRow row;
    row.model = config.models[m];
    row.n_high = config.n_high_sweep[k];
    row.repeat = r;
    row.seed = config.seed + r;
    row.dataset = dataset_dir(r);
    const auto start = std::chrono::steady_clock::now();
    try {
      ModelFitConfig fit = config.fit;
      fit.optim.seed = config.fit.optim.seed + r;
      const FittedModel model = fit_model(row.model, high_prefix(datasets[r].train, row.n_high), fit);
      const EvalReport rep = evaluate(predict_all(model, datasets[r].test_inputs), truths[r],
                                      to_string(row.model), to_string(config.spec.kind));
      require(std::isfinite(rep.rmse) && std::isfinite(rep.nll), ErrorCode::kFitFailure,
              "non-finite test metrics");
      row.ok = true;
      row.rmse = rep.rmse;
      row.nll = rep.nll;
      if (files && config.save_models) {
        row.model_file = model_file(row.model, row.n_high, r);
        write_text(root / row.model_file, model_to_json(model));
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows[t] = row;
    if (sink) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      sink(rows[t]);
    }
  });

  BenchmarkResult result;
  result.rows = std::move(rows);
  result.summary = summarize(config, result.rows);
  if (files) {
    write_text(root / "benchmark.csv", benchmark_csv(config, result));
    write_text(root / "timings.csv", timings_csv(result));
    write_text(root / "summary.dat", gnuplot_table(result));
    write_text(root / "config.json", config_json(config));
  }
  return result;
}

std::string benchmark_csv(const BenchmarkConfig& c, const BenchmarkResult& result) {
  const std::string fixed = to_string(c.spec.kind) + "," + to_string(c.structure) + "," +
                            (c.aligned ? "true" : "false") + "," + std::to_string(c.n_low) + ",";
  std::string out =
      "row_type,model,pde,structure,aligned,n_low,n_high,repeat,seed,status,rmse,nll,dataset,model_file,error\n";
  for (const auto& r : result.rows) {
    out += "run," + to_string(r.model) + "," + fixed + std::to_string(r.n_high) + "," +
           std::to_string(r.repeat) + "," + std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," +
           (r.ok ? format_double(r.rmse) : "") + "," + (r.ok ? format_double(r.nll) : "") + "," +
           csv_field(r.dataset) + "," + csv_field(r.model_file) + "," + csv_field(r.error) + "\n";
  }
  for (const auto& s : result.summary) {
    const std::string status = "n_ok=" + std::to_string(s.n_ok);
    const bool any = s.n_ok > 0;
    out += "mean," + to_string(s.model) + "," + fixed + std::to_string(s.n_high) + ",,," + status + "," +
           (any ? format_double(s.mean_rmse) : "") + "," + (any ? format_double(s.mean_nll) : "") + ",,,\n";
    out += "std," + to_string(s.model) + "," + fixed + std::to_string(s.n_high) + ",,," + status + "," +
           (any ? format_double(s.std_rmse) : "") + "," + (any ? format_double(s.std_nll) : "") + ",,,\n";
  }
  return out;
}

std::string timings_csv(const BenchmarkResult& result) {
  std::string out = "model,n_high,repeat,wall_time_s\n";
  for (const auto& r : result.rows) {
    out += to_string(r.model) + "," + std::to_string(r.n_high) + "," + std::to_string(r.repeat) + "," +
           format_double(r.wall_time) + "\n";
  }
  return out;
}

std::string gnuplot_table(const BenchmarkResult& result) {
  std::string out;
  ModelKind current{};
  bool first = true;
  for (const auto& s : result.summary) {
    if (first || s.model != current) {
      if (!first) out += "\n\n";
      out += "# " + to_string(s.model) + "\n# n_high mean_rmse std_rmse mean_nll std_nll n_ok\n";
      current = s.model;
      first = false;
    }
    if (s.n_ok == 0) {
      out += std::to_string(s.n_high) + " NaN NaN NaN NaN 0\n";
      continue;
    }
    out += std::to_string(s.n_high) + " " + format_double(s.mean_rmse) + " " + format_double(s.std_rmse) +
           " " + format_double(s.mean_nll) + " " + format_double(s.std_nll) + " " + std::to_string(s.n_ok) + "\n";
  }
  return out;
}

std::string config_json(const BenchmarkConfig& c) {
  nlohmann::json j;
  j["pde"] = to_string(c.spec.kind);
  j["mesh_low"] = c.spec.mesh_low;
  j["mesh_high"] = c.spec.mesh_high;
  j["record_grid"] = c.spec.record_grid;
  j["models"] = nlohmann::json::array();
  for (ModelKind m : c.models) j["models"].push_back(to_string(m));
  j["n_low"] = c.n_low;
  j["n_high_sweep"] = c.n_high_sweep;
  j["n_test"] = c.n_test;
  j["structure"] = to_string(c.structure);
  j["aligned"] = c.aligned;
  j["sampler"] = to_string(c.sampler);
  j["repeats"] = c.repeats;
  j["seed"] = c.seed;
  j["optim"] = {{"max_iters", c.fit.optim.max_iters},
                {"step", c.fit.optim.step},
                {"tol", c.fit.optim.tol},
                {"seed", c.fit.optim.seed}};
  j["latent_rank"] = c.fit.latent_rank;
  j["laplace_scale"] = c.fit.prior.scale;
  j["center"] = c.fit.center;
  return j.dump(2) + "\n";
}

}  // namespace mfgar
