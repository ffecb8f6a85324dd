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

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mfgar/error.hpp"
#include "mfgar/pdebench.hpp"

namespace mfgar {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'F', 'G', 'T'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr int kManifestVersion = 1;

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos, const std::string& path) {
  require(pos + sizeof(T) <= in.size(), ErrorCode::kIo, path + ": truncated tensor file");
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  }
  pos += sizeof(T);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing '" + path + "'");
}

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string encode_tensor(const DenseTensor& t) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kTensorVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.order()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

DenseTensor decode_tensor(const std::string& in, const std::string& path) {
  require(in.size() >= 12 && in.compare(0, 4, kMagic, 4) == 0, ErrorCode::kIo,
          path + ": not an MFGT tensor file");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(in, pos, path);
  require(version == kTensorVersion, ErrorCode::kIo,
          path + ": unsupported tensor format version " + std::to_string(version));
  const auto order = get_le<std::uint32_t>(in, pos, path);
  Shape shape(order);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_le<std::uint64_t>(in, pos, path));
    count *= d;
  }
  require(in.size() - pos == 8 * count, ErrorCode::kIo,
          path + ": payload size does not match the shape header");
  std::vector<double> data(count);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, pos, path));
  return DenseTensor(std::move(shape), std::move(data));
}

std::string encode_inputs(const Matrix& x) {
  std::string out;
  for (Eigen::Index k = 0; k < x.cols(); ++k) out += (k ? ",x" : "x") + std::to_string(k);
  out += '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", x(i, k));
      if (k) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Matrix decode_inputs(const std::string& text, const std::string& path) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kIo, path + ": empty inputs file");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    Eigen::Index c = 0;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::kIo, path + ": bad number '" + cell + "' on row " + std::to_string(rows + 1));
      }
      ++c;
    }
    require(c == cols, ErrorCode::kIo, path + ": row " + std::to_string(rows + 1) + " has " +
                                           std::to_string(c) + " values, header has " + std::to_string(cols));
    ++rows;
  }
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) x(i, k) = values[static_cast<std::size_t>(i * cols + k)];
  return x;
}

json mesh_json(const MeshSize& m) { return json::array({m[0], m[1]}); }

MeshSize mesh_from(const json& j) { return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()}; }

struct Part {
  std::string name;
  const Matrix* inputs;
  const DenseTensor* outputs;
};

}  // namespace

void write_tensor(const std::string& path, const DenseTensor& tensor) {
  write_file(path, encode_tensor(tensor));
}

DenseTensor read_tensor(const std::string& path) { return decode_tensor(read_file(path), path); }

void write_inputs_csv(const std::string& path, const Matrix& inputs) {
  write_file(path, encode_inputs(inputs));
}

Matrix read_inputs_csv(const std::string& path) { return decode_inputs(read_file(path), path); }

void write_dataset(const PdeDataset& d, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create directory '" + dir + "': " + ec.message());
  const std::filesystem::path root(dir);
  const DatasetConfig& c = d.config;

  json m;
  m["format"] = "mfgar-dataset";
  m["version"] = kManifestVersion;
  json spec;
  spec["pde"] = to_string(c.spec.kind);
  spec["input_ranges"] = json::array();
  for (const auto& r : c.spec.input_ranges) spec["input_ranges"].push_back({r.lo, r.hi});
  spec["mesh_low"] = mesh_json(c.spec.mesh_low);
  spec["mesh_high"] = mesh_json(c.spec.mesh_high);
  spec["record_grid"] = mesh_json(c.spec.record_grid);
  m["spec"] = spec;
  m["n_low"] = c.n_low;
  m["n_high"] = c.n_high;
  m["n_test"] = c.n_test;
  m["sampler"] = to_string(c.sampler);
  m["structure"] = to_string(c.structure);
  m["aligned"] = c.aligned;
  m["seed"] = c.seed;

  const SubsetPlan plan = build_subset_plan(d.train, 1, 0.0);
  m["plan"] = {{"matched", plan.matched_high.size()}, {"unmatched", plan.unmatched_high.size()}};

  const std::vector<Part> parts{{"level0", &d.train.levels[0].inputs, &d.train.levels[0].outputs},
                                {"level1", &d.train.levels[1].inputs, &d.train.levels[1].outputs},
                                {"test", &d.test_inputs, &d.test_outputs}};
  m["files"] = json::object();
  for (const Part& p : parts) {
    const std::string in_bytes = encode_inputs(*p.inputs);
    const std::string out_bytes = encode_tensor(*p.outputs);
    const std::string in_name = p.name + "_inputs.csv";
    const std::string out_name = p.name + "_outputs.mfgt";
    write_file((root / in_name).string(), in_bytes);
    write_file((root / out_name).string(), out_bytes);
    m["files"][p.name] = {{"inputs", in_name},
                          {"inputs_fnv1a64", fnv1a(in_bytes)},
                          {"outputs", out_name},
                          {"outputs_fnv1a64", fnv1a(out_bytes)},
                          {"shape", p.outputs->shape()}};
  }
  write_file((root / "manifest.json").string(), m.dump(2) + "\n");
}

PdeDataset read_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  const std::string manifest_path = (root / "manifest.json").string();
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, manifest_path + ": " + e.what());
  }
  PdeDataset d;
  try {
    require(m.at("format") == "mfgar-dataset", ErrorCode::kIo, manifest_path + ": not a dataset manifest");
    require(m.at("version").get<int>() == kManifestVersion, ErrorCode::kIo,
            manifest_path + ": unsupported manifest version");
    DatasetConfig& c = d.config;
    const json& spec = m.at("spec");
    c.spec.kind = parse_pde_kind(spec.at("pde").get<std::string>());
    c.spec.input_ranges.clear();
    for (const auto& r : spec.at("input_ranges")) c.spec.input_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    c.spec.mesh_low = mesh_from(spec.at("mesh_low"));
    c.spec.mesh_high = mesh_from(spec.at("mesh_high"));
    c.spec.record_grid = mesh_from(spec.at("record_grid"));
    c.n_low = m.at("n_low").get<std::size_t>();
    c.n_high = m.at("n_high").get<std::size_t>();
    c.n_test = m.at("n_test").get<std::size_t>();
    c.sampler = parse_sampler(m.at("sampler").get<std::string>());
    c.structure = parse_structure(m.at("structure").get<std::string>());
    c.aligned = m.at("aligned").get<bool>();
    c.seed = m.at("seed").get<std::uint64_t>();

    auto load = [&](const std::string& name, Matrix& inputs, DenseTensor& outputs) {
      const json& f = m.at("files").at(name);
      const std::string in_path = (root / f.at("inputs").get<std::string>()).string();
      const std::string out_path = (root / f.at("outputs").get<std::string>()).string();
      const std::string in_bytes = read_file(in_path);
      const std::string out_bytes = read_file(out_path);
      require(fnv1a(in_bytes) == f.at("inputs_fnv1a64").get<std::string>(), ErrorCode::kIo,
              in_path + ": checksum does not match the manifest");
      require(fnv1a(out_bytes) == f.at("outputs_fnv1a64").get<std::string>(), ErrorCode::kIo,
              out_path + ": checksum does not match the manifest");
      inputs = decode_inputs(in_bytes, in_path);
      outputs = decode_tensor(out_bytes, out_path);
      require(outputs.order() >= 1 && static_cast<Eigen::Index>(outputs.dim(0)) == inputs.rows(),
              ErrorCode::kIo, name + ": input and output sample counts differ");
    };
    d.train.levels.resize(2);
    load("level0", d.train.levels[0].inputs, d.train.levels[0].outputs);
    load("level1", d.train.levels[1].inputs, d.train.levels[1].outputs);
    load("test", d.test_inputs, d.test_outputs);
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, manifest_path + ": " + e.what());
  }
  d.config.spec.validate();
  d.train.validate();
  return d;
}

}  // namespace mfgar
