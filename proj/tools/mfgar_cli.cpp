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

// Command-line harness: generate PDE datasets, fit and evaluate surrogate
// models, and sweep the number of high-fidelity samples. Uses the C interface
// only.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfgar/mfgar.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitFit = 2;

/// Thrown to unwind with a specific exit code after reporting.
struct Exit {
  int code;
};

int exit_code_for(mfgar_status s) {
  return s == MFGAR_ERR_FIT_FAILURE || s == MFGAR_ERR_NUMERICAL ? kExitFit : kExitUser;
}

void check(mfgar_status s, const std::string& context) {
  if (s == MFGAR_OK) return;
  std::cerr << "mfgar: " << context << ": " << mfgar_last_error() << " (" << mfgar_status_name(s) << ")\n";
  throw Exit{exit_code_for(s)};
}

[[noreturn]] void user_error(const std::string& what) {
  std::cerr << "mfgar: " << what << "\n";
  throw Exit{kExitUser};
}

std::size_t workers_from_env() {
  const char* text = std::getenv("MFGAR_WORKERS");
  if (!text || !*text) return 1;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(text, &end, 10);
  if (*end != '\0' || n == 0 || n > 1024) user_error(std::string("MFGAR_WORKERS must be 1..1024, got '") + text + "'");
  return static_cast<std::size_t>(n);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) user_error("cannot write '" + path.string() + "'");
}

void make_dirs(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) user_error("cannot create '" + dir + "': " + ec.message());
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  ~Handle() { Free(p); }
};

struct DataFlags {
  std::string pde = "poisson";
  std::string mesh_variant = "main";
  std::size_t n_low = 32;
  std::size_t n_test = 128;
  std::string sampler = "sobol";
  std::string structure = "subset";
  bool aligned = false;
  std::uint64_t seed = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--pde", f.pde, "burgers, poisson or heat")
      ->check(CLI::IsMember({"burgers", "poisson", "heat"}))
      ->capture_default_str();
  cmd->add_option("--mesh-variant", f.mesh_variant, "solver meshes: main or appendix")
      ->check(CLI::IsMember({"main", "appendix"}))
      ->capture_default_str();
  cmd->add_option("--n-low", f.n_low, "low-fidelity training samples")->capture_default_str();
  cmd->add_option("--n-test", f.n_test, "high-fidelity test samples")->capture_default_str();
  cmd->add_option("--sampler", f.sampler, "training design: sobol or uniform")
      ->check(CLI::IsMember({"sobol", "uniform"}))
      ->capture_default_str();
  cmd->add_option("--structure", f.structure, "subset or nonsubset high-fidelity inputs")
      ->check(CLI::IsMember({"subset", "nonsubset"}))
      ->capture_default_str();
  cmd->add_flag("--aligned", f.aligned, "resample low-fidelity outputs to the high-fidelity grid");
  cmd->add_option("--seed", f.seed, "dataset seed")->capture_default_str();
}

void add_fit_flags(CLI::App* cmd, mfgar_fit_options& f, bool& no_center) {
  cmd->add_option("--max-iters", f.max_iters, "optimizer iterations per stage")->capture_default_str();
  cmd->add_option("--step", f.step, "optimizer step size")->capture_default_str();
  cmd->add_option("--tol", f.tol, "relative convergence tolerance")->capture_default_str();
  cmd->add_option("--fit-seed", f.seed, "seed for latent-feature initialization")->capture_default_str();
  cmd->add_option("--latent-rank", f.latent_rank, "latent features per output mode")->capture_default_str();
  cmd->add_option("--laplace-scale", f.laplace_scale, "Laplace prior scale on latent features (0 = off)")
      ->capture_default_str();
  cmd->add_flag("--no-center", no_center, "do not subtract per-level output means");
}

int run_generate(const DataFlags& f, std::size_t n_high, const std::string& out) {
  mfgar_dataset_options o;
  mfgar_dataset_options_init(&o);
  o.pde = f.pde.c_str();
  o.mesh_variant = f.mesh_variant.c_str();
  o.n_low = f.n_low;
  o.n_high = n_high;
  o.n_test = f.n_test;
  o.sampler = f.sampler.c_str();
  o.structure = f.structure.c_str();
  o.aligned = f.aligned ? 1 : 0;
  o.seed = f.seed;
  o.workers = workers_from_env();
  Handle<mfgar_dataset, mfgar_dataset_free> d;
  check(mfgar_dataset_generate(&o, &d.p), "generating dataset");
  check(mfgar_dataset_write(d.p, out.c_str()), "writing dataset");
  std::cout << "wrote " << f.pde << " dataset (" << f.n_low << " low, " << n_high << " high, " << f.n_test
            << " test) to " << out << "\n";
  return kExitOk;
}

int run_train(const std::string& data_dir, const std::string& kind, std::size_t n_high,
              const mfgar_fit_options& fit, const std::string& out) {
  Handle<mfgar_dataset, mfgar_dataset_free> d;
  check(mfgar_dataset_read(data_dir.c_str(), &d.p), "reading dataset");
  make_dirs(out);
  Handle<mfgar_model, mfgar_model_free> m;
  const std::uint64_t factorizations = mfgar_output_factorization_count();
  const auto start = std::chrono::steady_clock::now();
  check(mfgar_model_fit(kind.c_str(), d.p, n_high, &fit, &m.p), "fitting " + kind);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::uint64_t used = mfgar_output_factorization_count() - factorizations;

  const std::filesystem::path dir(out);
  check(mfgar_model_save(m.p, (dir / "model.json").string().c_str()), "saving model");
  write_file(dir / "trace.csv", mfgar_model_fit_trace_csv(m.p));
  double rmse = 0.0, nll = 0.0, train_nll = 0.0;
  check(mfgar_model_training_nll(m.p, &train_nll), "training likelihood");
  std::size_t n_test = 0;
  check(mfgar_dataset_test_size(d.p, &n_test), "reading test set");
  std::string eval = "model,dataset,n_test,rmse,nll\n";
  if (n_test > 0) {
    check(mfgar_model_evaluate(m.p, d.p, &rmse, &nll), "evaluating");
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%zu,%.17g,%.17g\n", kind.c_str(), data_dir.c_str(), n_test, rmse, nll);
    eval += line;
  }
  write_file(dir / "eval.csv", eval);
  std::printf("%s: training nll %.6g, fit %.2fs, output factorizations %llu", kind.c_str(), train_nll, seconds,
              static_cast<unsigned long long>(used));
  if (n_test > 0) std::printf(", test rmse %.6g, test nll %.6g", rmse, nll);
  std::printf("\nwrote %s\n", (dir / "model.json").string().c_str());
  return kExitOk;
}

int run_evaluate(const std::string& model_path, const std::string& data_dir) {
  Handle<mfgar_dataset, mfgar_dataset_free> d;
  check(mfgar_dataset_read(data_dir.c_str(), &d.p), "reading dataset");
  Handle<mfgar_model, mfgar_model_free> m;
  check(mfgar_model_load(model_path.c_str(), &m.p), "loading model");
  std::size_t n_test = 0;
  check(mfgar_dataset_test_size(d.p, &n_test), "reading test set");
  if (n_test == 0) user_error("dataset '" + data_dir + "' has no test samples");
  double rmse = 0.0, nll = 0.0;
  check(mfgar_model_evaluate(m.p, d.p, &rmse, &nll), "evaluating");
  std::printf("model,dataset,n_test,rmse,nll\n%s,%s,%zu,%.17g,%.17g\n", mfgar_model_kind(m.p), data_dir.c_str(),
              n_test, rmse, nll);
  return kExitOk;
}

void print_row(const mfgar_benchmark_row* row, void*) {
  if (row->ok) {
    std::fprintf(stderr, "  %-6s n_high=%-3zu repeat=%zu rmse=%.6g nll=%.6g (%.2fs)\n", row->model, row->n_high,
                 row->repeat, row->rmse, row->nll, row->wall_time);
  } else {
    std::fprintf(stderr, "  %-6s n_high=%-3zu repeat=%zu FAILED: %s\n", row->model, row->n_high, row->repeat,
                 row->error);
  }
}

int run_benchmark(const DataFlags& f, const std::vector<std::string>& models, const std::vector<std::size_t>& sweep,
                  std::size_t repeats, const mfgar_fit_options& fit, const std::string& out, bool save_models,
                  bool quiet) {
  std::string joined;
  for (const auto& m : models) joined += (joined.empty() ? "" : ",") + m;
  mfgar_benchmark_options o;
  mfgar_benchmark_options_init(&o);
  o.pde = f.pde.c_str();
  o.mesh_variant = f.mesh_variant.c_str();
  o.models = joined.c_str();
  o.n_low = f.n_low;
  o.n_high_sweep = sweep.data();
  o.n_sweep = sweep.size();
  o.n_test = f.n_test;
  o.sampler = f.sampler.c_str();
  o.structure = f.structure.c_str();
  o.aligned = f.aligned ? 1 : 0;
  o.repeats = repeats;
  o.seed = f.seed;
  o.workers = workers_from_env();
  o.out_dir = out.c_str();
  o.save_models = save_models ? 1 : 0;
  o.fit = fit;
  Handle<mfgar_benchmark, mfgar_benchmark_free> b;
  check(mfgar_benchmark_run(&o, quiet ? nullptr : print_row, nullptr, &b.p), "benchmark");
  if (out.empty()) std::cout << mfgar_benchmark_csv(b.p);
  else std::cerr << "wrote " << out << "/benchmark.csv\n";
  const std::size_t failed = mfgar_benchmark_failures(b.p);
  if (failed > 0) {
    std::cerr << "mfgar: " << failed << " of " << mfgar_benchmark_row_count(b.p) << " fits failed\n";
    return kExitFit;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity surrogate modeling of PDE fields"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mfgar_version()));

  mfgar_fit_options fit;
  mfgar_fit_options_init(&fit);
  bool no_center = false;

  DataFlags gen_flags;
  std::size_t gen_high = 32;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Solve the PDE at both fidelities and write a dataset");
  add_data_flags(gen, gen_flags);
  gen->add_option("--n-high", gen_high, "high-fidelity training samples")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string train_data, train_model = "gar", train_out;
  std::size_t train_high = 0;
  auto* train = app.add_subcommand("train", "Fit a model to a dataset and score it on the test set");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--model", train_model, "gar, cigar, ar or hogp")
      ->check(CLI::IsMember({"gar", "cigar", "ar", "hogp", "hogp-high-only"}))
      ->capture_default_str();
  train->add_option("--n-high", train_high, "use the first n high-fidelity samples (0 = all)")->capture_default_str();
  train->add_option("--out", train_out, "output directory for model.json, trace.csv, eval.csv")->required();
  add_fit_flags(train, fit, no_center);

  std::string eval_model, eval_data;
  auto* evaluate = app.add_subcommand("evaluate", "Score a saved model on a dataset's test set");
  evaluate->add_option("--model-file", eval_model, "model document")->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();

  DataFlags bench_flags;
  std::vector<std::string> bench_models{"gar"};
  std::vector<std::size_t> sweep{4, 8, 16, 32};
  std::size_t repeats = 5;
  std::string bench_out;
  bool no_save = false, quiet = false;
  auto* bench = app.add_subcommand("benchmark", "Sweep the number of high-fidelity samples");
  add_data_flags(bench, bench_flags);
  bench->add_option("--model", bench_models, "models to compare (repeat or comma-separate)")
      ->delimiter(',')
      ->check(CLI::IsMember({"gar", "cigar", "ar", "hogp", "hogp-high-only"}))
      ->capture_default_str();
  bench->add_option("--n-high-sweep", sweep, "high-fidelity sample counts, comma-separated")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--repeats", repeats, "repeats, each with its own dataset seed")->capture_default_str();
  bench->add_option("--out", bench_out, "output directory (CSV to stdout when omitted)");
  bench->add_flag("--no-save-models", no_save, "do not write fitted models");
  bench->add_flag("--quiet", quiet, "no per-row progress on stderr");
  add_fit_flags(bench, fit, no_center);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUser;
  }
  fit.center = no_center ? 0 : 1;

  try {
    if (*gen) return run_generate(gen_flags, gen_high, gen_out);
    if (*train) return run_train(train_data, train_model, train_high, fit, train_out);
    if (*evaluate) return run_evaluate(eval_model, eval_data);
    return run_benchmark(bench_flags, bench_models, sweep, repeats, fit, bench_out, !no_save, quiet);
  } catch (const Exit& e) {
    return e.code;
  }
}
