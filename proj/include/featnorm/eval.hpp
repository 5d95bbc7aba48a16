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

#ifndef FEATNORM_EVAL_HPP
#define FEATNORM_EVAL_HPP

// Evaluation protocols: k-fold speaker-independent / repeated
// speaker-dependent cross-validation with best-validation-epoch test
// scoring, the frozen-representation speaker-ID probe, and the
// samples-per-class learning curve with its normalized AUC.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "featnorm/data.hpp"
#include "featnorm/error.hpp"
#include "featnorm/metrics.hpp"
#include "featnorm/nn.hpp"
#include "featnorm/parallel.hpp"
#include "featnorm/random.hpp"
#include "featnorm/trainer.hpp"

namespace featnorm {

struct CvConfig {
  Architecture arch;  // input_dim and label counts are taken from the data
  TrainConfig train;
  std::size_t k_folds = 5;
  double validation_fraction = 0.1;
  std::array<double, 3> sd_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct FoldResult {
  FoldSplit split;
  Metric wa;
  TrainReport report;
};

struct CvResult {
  SplitMode mode = SplitMode::speaker_independent;
  std::vector<FoldResult> folds;
  MeanStd summary;
};

namespace detail {

inline Architecture fit_architecture(Architecture arch, const Dataset& emotion_data,
                                     const Dataset* speaker_data) {
  arch.input_dim = emotion_data.feature_dim();
  arch.n_emotions = emotion_data.n_emotions();
  arch.n_speakers = speaker_data ? speaker_data->n_speakers() : emotion_data.n_speakers();
  if (speaker_data && speaker_data->feature_dim() != emotion_data.feature_dim()) {
    throw ValidationError("speaker and emotion datasets have different feature dims");
  }
  return arch;
}

inline std::vector<FoldSplit> make_splits(const Dataset& data, SplitMode mode, std::size_t k,
                                          double validation_fraction,
                                          std::span<const double> sd_ratios, std::uint64_t seed) {
  if (mode == SplitMode::speaker_independent) {
    return split_speaker_independent(data, k, validation_fraction, seed);
  }
  if (k < 1) throw ValidationError("k_folds must be at least 1");
  std::vector<FoldSplit> splits;
  for (std::size_t f = 0; f < k; ++f) splits.push_back(split_speaker_dependent(data, sd_ratios, seed, f));
  return splits;
}

/// Trains one model on a split and scores the best-epoch snapshot on test.
inline FoldResult run_split(const Dataset& data, const FoldSplit& split, const Dataset* speaker_data,
                            std::span<const std::size_t> train_indices, const Architecture& arch,
                            TrainConfig train_config, std::uint64_t model_seed) {
  ModelAssembly model = make_assembly(arch, train_config.strategy, model_seed);
  const Dataset& sd = speaker_data ? *speaker_data : data;
  const std::vector<std::size_t> sd_indices =
      speaker_data ? speaker_data->all_indices() : std::vector<std::size_t>(split.train);
  FoldResult result;
  result.split = split;
  result.report = train(std::move(model), data, train_indices, split.validation, sd, sd_indices,
                        train_config);
  const auto predictions = predict_emotions(result.report.best_model, data.features(split.test));
  result.wa = weighted_accuracy(predictions, data.emotions(split.test));
  return result;
}

}  // namespace detail

/// One fresh model per fold; each fold's test WA comes from its
/// best-validation-epoch snapshot. Speaker steps use `speaker_data` when
/// given, otherwise the fold's emotion training records.
inline CvResult cross_validate(const Dataset& data, const CvConfig& config, SplitMode mode,
                               const Dataset* speaker_data = nullptr) {
  const Architecture arch = detail::fit_architecture(config.arch, data, speaker_data);
  const auto splits = detail::make_splits(data, mode, config.k_folds, config.validation_fraction,
                                          config.sd_ratios, derive_seed(config.seed, "split"));
  CvResult result;
  result.mode = mode;
  result.folds.resize(splits.size());
  parallel_for(splits.size(), config.jobs, [&](std::size_t f) {
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "train", f);
    result.folds[f] = detail::run_split(data, splits[f], speaker_data, splits[f].train, arch, tc,
                                        derive_seed(config.seed, "model", f));
  });
  std::vector<double> values;
  for (const auto& f : result.folds) values.push_back(f.wa.value);
  result.summary = mean_std(values);
  return result;
}

struct ProbeConfig {
  double eta = 0.05;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double train_fraction = 0.8;
  /// Share of the training part held back for best-epoch selection.
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Trains a fresh linear speaker classifier on the frozen representation
/// (upstream, then projector when given) and returns its held-out accuracy.
inline Metric probe_speaker_id(const Mlp& upstream, const Mlp* projector,
                               const Dataset& speaker_data, const ProbeConfig& config) {
  if (speaker_data.feature_dim() != upstream.in_dim()) {
    throw ValidationError("speaker data has feature dim " + std::to_string(speaker_data.feature_dim()) +
                          " but the upstream expects " + std::to_string(upstream.in_dim()));
  }
  if (projector && projector->in_dim() != upstream.out_dim()) {
    throw ValidationError("projector input dim does not match the upstream output");
  }
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0) ||
      !(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ValidationError("probe fractions must lie in (0, 1)");
  }
  if (!(config.eta > 0.0) || config.epochs == 0 || config.batch_size == 0) {
    throw ValidationError("probe eta, epochs and batch_size must be positive");
  }
  const auto all = speaker_data.all_indices();
  Matrix reps = infer(upstream, speaker_data.features(all));
  if (projector) reps = infer(*projector, reps);
  const auto labels = speaker_data.speakers(all);

  std::vector<std::size_t> order = all;
  Stream split_rng(config.seed, "probe_split");
  split_rng.shuffle(order);
  const auto n_fit = static_cast<std::size_t>(
      std::llround(config.train_fraction * static_cast<double>(order.size())));
  const auto n_val = static_cast<std::size_t>(
      std::llround(config.validation_fraction * static_cast<double>(n_fit)));
  if (n_val == 0 || n_val >= n_fit || n_fit >= order.size()) {
    throw ValidationError("speaker dataset too small for the probe split");
  }
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                               order.begin() + static_cast<std::ptrdiff_t>(n_fit));
  std::vector<std::size_t> held(order.begin() + static_cast<std::ptrdiff_t>(n_fit), order.end());

  auto pick = [&labels](std::span<const std::size_t> idx) {
    std::vector<int> out;
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  };
  auto accuracy = [&](const Mlp& head, std::span<const std::size_t> idx) {
    return weighted_accuracy(argmax_rows(infer(head, gather_rows(reps, idx))), pick(idx)).value;
  };

  Stream init_rng(config.seed, "probe_init");
  const std::size_t dims[] = {reps.cols(), speaker_data.n_speakers()};
  Mlp head = Mlp::glorot(dims, Activation::identity, Activation::identity, init_rng);
  Mlp best = head;
  double best_val = -1.0;
  Stream batch_rng(config.seed, "probe_batches");
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    batch_rng.shuffle(fit);
    for (std::size_t start = 0; start < fit.size(); start += config.batch_size) {
      const std::size_t end = std::min(fit.size(), start + config.batch_size);
      std::span<const std::size_t> batch(fit.data() + start, end - start);
      auto fwd = forward(head, gather_rows(reps, batch));
      auto loss = softmax_cross_entropy(fwd.output, pick(batch));
      auto back = backward(head, fwd.cache, loss.dlogits);
      apply_update(head, back.grads, config.eta, Direction::descent);
    }
    const double v = accuracy(head, val);
    if (v > best_val) {
      best_val = v;
      best = head;
    }
  }
  Metric m = weighted_accuracy(argmax_rows(infer(best, gather_rows(reps, held))), pick(held));
  m.name = "probe_accuracy";
  return m;
}

struct CurvePoint {
  std::size_t n_per_class = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
};

struct CurveResult {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

struct LowResourceConfig {
  Architecture arch;
  TrainConfig train;
  SplitMode mode = SplitMode::speaker_dependent;
  std::size_t k_folds = 5;
  double validation_fraction = 0.1;
  std::array<double, 3> sd_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Normalized AUC of a curve; a single point degenerates to its mean.
inline double curve_auc(std::span<const CurvePoint> points) {
  if (points.size() == 1) return points.front().mean;
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points) xy.emplace_back(static_cast<double>(p.n_per_class), p.mean);
  return auc(xy);
}

/// For each size and repeat r: split with the r-th split seed, draw
/// n_per_class training samples per emotion, train, score the best-epoch
/// snapshot on the test part. Speaker steps use the full training part of
/// the split (or `speaker_data`), which carries no emotion labels.
inline CurveResult low_resource_curve(const Dataset& data, std::span<const std::size_t> sizes,
                                      std::size_t repeats, const LowResourceConfig& config,
                                      const Dataset* speaker_data = nullptr) {
  if (sizes.empty()) throw ValidationError("no training sizes given");
  if (repeats < 1) throw ValidationError("repeats must be at least 1");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ValidationError("training sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ValidationError("sizes must be strictly ascending");
  }
  const Architecture arch = detail::fit_architecture(config.arch, data, speaker_data);

  std::vector<FoldSplit> splits;
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::uint64_t split_seed = derive_seed(config.seed, "lowres_split", r);
    if (config.mode == SplitMode::speaker_independent) {
      auto folds = split_speaker_independent(data, config.k_folds, config.validation_fraction, split_seed);
      splits.push_back(std::move(folds[r % folds.size()]));
    } else {
      splits.push_back(split_speaker_dependent(data, config.sd_ratios, split_seed, r));
    }
  }
  // Validate populations up front so no training is wasted.
  std::vector<std::vector<std::size_t>> train_sets(sizes.size() * repeats);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (std::size_t r = 0; r < repeats; ++r) {
      train_sets[i * repeats + r] = subsample_indices(
          data, splits[r].train, sizes[i], derive_seed(config.seed, "lowres_subsample", r));
    }
  }

  CurveResult result;
  result.points.resize(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    result.points[i].n_per_class = sizes[i];
    result.points[i].seeds.resize(repeats);
    result.points[i].accuracies.resize(repeats);
  }
  parallel_for(sizes.size() * repeats, config.jobs, [&](std::size_t unit) {
    const std::size_t i = unit / repeats;
    const std::size_t r = unit % repeats;
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "lowres_train", r);
    auto fold = detail::run_split(data, splits[r], speaker_data, train_sets[unit], arch, tc,
                                  derive_seed(config.seed, "model", r));
    result.points[i].seeds[r] = derive_seed(config.seed, "lowres_split", r);
    result.points[i].accuracies[r] = fold.wa.value;
  });
  for (auto& p : result.points) p.mean = mean_std(p.accuracies).mean;
  result.auc = curve_auc(result.points);
  return result;
}

}  // namespace featnorm

#endif  // FEATNORM_EVAL_HPP
