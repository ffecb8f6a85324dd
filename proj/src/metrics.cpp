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

#include "mfgar/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "json.hpp"
#include "mfgar/error.hpp"

namespace mfgar {

namespace {

constexpr double kVarianceFloor = 1e-12;

template <class P>
const DenseTensor& mean_of(const P& p) {
  if constexpr (std::is_same_v<P, PosteriorField>) {
    return p.mean;
  } else {
    return p;
  }
}

template <class P>
void check_sets(const std::vector<P>& preds, const std::vector<DenseTensor>& truths) {
  require(!truths.empty(), ErrorCode::kInvalidArgument, "no test samples to evaluate");
  require(preds.size() == truths.size(), ErrorCode::kShapeMismatch,
          std::to_string(preds.size()) + " predictions for " + std::to_string(truths.size()) +
              " test samples");
  for (std::size_t n = 0; n < truths.size(); ++n) {
    require(mean_of(preds[n]).shape() == truths[n].shape() && truths[n].shape() == truths[0].shape(),
            ErrorCode::kShapeMismatch, "prediction " + std::to_string(n) + " has the wrong shape");
  }
}

double squared_error(const DenseTensor& a, const DenseTensor& b) {
  return (a.as_vector() - b.as_vector()).squaredNorm();
}

template <class P>
double rmse_impl(const std::vector<P>& preds, const std::vector<DenseTensor>& truths) {
  check_sets(preds, truths);
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < truths.size(); ++n) {
    s += squared_error(mean_of(preds[n]), truths[n]);
    count += truths[n].size();
  }
  return std::sqrt(s / static_cast<double>(count));
}

}  // namespace

double rmse(const std::vector<DenseTensor>& means, const std::vector<DenseTensor>& truths) {
  return rmse_impl(means, truths);
}

double rmse(const std::vector<PosteriorField>& predictions, const std::vector<DenseTensor>& truths) {
  return rmse_impl(predictions, truths);
}

double nll_metric(const std::vector<PosteriorField>& predictions,
                  const std::vector<DenseTensor>& truths) {
  check_sets(predictions, truths);
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < truths.size(); ++n) {
    const PosteriorField& p = predictions[n];
    require(p.variance_diag.shape() == p.mean.shape(), ErrorCode::kShapeMismatch,
            "predictive variance and mean shapes differ");
    for (std::size_t k = 0; k < truths[n].size(); ++k) {
      const double v = std::max(p.variance_diag[k], kVarianceFloor);
      const double e = truths[n][k] - p.mean[k];
      s += 0.5 * std::log(v) + e * e / (2.0 * v);
    }
    count += truths[n].size();
  }
  return s / static_cast<double>(count);
}

DenseTensor rmse_error_field(const std::vector<DenseTensor>& means,
                             const std::vector<DenseTensor>& truths) {
  check_sets(means, truths);
  DenseTensor out(truths[0].shape());
  for (std::size_t n = 0; n < truths.size(); ++n) {
    out.as_vector() += (means[n].as_vector() - truths[n].as_vector()).cwiseAbs2();
  }
  out.as_vector() = (out.as_vector() / static_cast<double>(truths.size())).cwiseSqrt();
  return out;
}

std::vector<DenseTensor> split_samples(const DenseTensor& stacked) {
  require(stacked.order() >= 2, ErrorCode::kShapeMismatch,
          "stacked samples need a sample mode and at least one field mode");
  const Shape field = stacked.trailing_shape();
  const std::size_t size = shape_size(field);
  std::vector<DenseTensor> out;
  out.reserve(stacked.dim(0));
  for (std::size_t n = 0; n < stacked.dim(0); ++n) {
    const auto first = stacked.storage().begin() + static_cast<std::ptrdiff_t>(n * size);
    out.emplace_back(field, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(size)));
  }
  return out;
}

EvalReport evaluate(const std::vector<PosteriorField>& predictions,
                    const std::vector<DenseTensor>& truths, const std::string& model_kind,
                    const std::string& dataset) {
  EvalReport r;
  r.model_kind = model_kind;
  r.dataset = dataset;
  r.n_test = truths.size();
  r.rmse = rmse(predictions, truths);
  r.nll = nll_metric(predictions, truths);
  for (std::size_t n = 0; n < truths.size(); ++n) {
    r.per_sample_rmse.push_back(
        std::sqrt(squared_error(predictions[n].mean, truths[n]) / static_cast<double>(truths[n].size())));
  }
  return r;
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string report_csv_header() { return "model,dataset,n_test,rmse,nll"; }

std::string to_csv_row(const EvalReport& r) {
  return r.model_kind + "," + r.dataset + "," + std::to_string(r.n_test) + "," +
         format_double(r.rmse) + "," + format_double(r.nll);
}

std::string to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model_kind;
  j["dataset"] = r.dataset;
  j["n_test"] = r.n_test;
  j["rmse"] = r.rmse;
  j["nll"] = r.nll;
  j["per_sample_rmse"] = r.per_sample_rmse;
  return j.dump(2);
}

}  // namespace mfgar
