/*
 * Copyright 2026 The featnorm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEATNORM_METRICS_HPP
#define FEATNORM_METRICS_HPP

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "featnorm/error.hpp"

namespace featnorm {

struct Metric {
  std::string name;
  double value = 0.0;
  std::size_t support = 0;
};

/// Overall accuracy: classes count in proportion to their frequency.
inline Metric weighted_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("prediction count " + std::to_string(predictions.size()) +
                          " does not match label count " + std::to_string(labels.size()));
  }
  if (labels.empty()) throw ValidationError("weighted accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return {"weighted_accuracy", static_cast<double>(correct) / static_cast<double>(labels.size()),
          labels.size()};
}

/// Trapezoidal area under (x, y) divided by the x range, i.e. the mean
/// height of the piecewise-linear curve.
inline double auc(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw ValidationError("auc needs at least two points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [x, y] = points[i];
    if (!std::isfinite(x) || !(y >= 0.0 && y <= 1.0)) {
      throw ValidationError("auc point " + std::to_string(i) + " out of domain");
    }
    if (i > 0 && !(x > points[i - 1].first)) {
      throw ValidationError(x == points[i - 1].first ? "auc: duplicate x value"
                                                     : "auc: x values must be strictly increasing");
    }
  }
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].second + points[i - 1].second) * (points[i].first - points[i - 1].first);
  }
  return area / (points.back().first - points.front().first);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean of an empty set");
  MeanStd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  for (double v : values) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(values.size()));
  return r;
}

}  // namespace featnorm

#endif  // FEATNORM_METRICS_HPP
