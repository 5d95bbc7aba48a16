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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "featnorm/eval.hpp"

namespace featnorm {
namespace {

using Points = std::vector<std::pair<double, double>>;

TEST(WeightedAccuracy, HandExamples) {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 1, 1, 0};
  EXPECT_EQ(weighted_accuracy(a, b).value, 0.5);
  EXPECT_EQ(weighted_accuracy(a, a).value, 1.0);
  EXPECT_EQ(weighted_accuracy(std::vector<int>{3}, std::vector<int>{2}).value, 0.0);
  EXPECT_EQ(weighted_accuracy(a, b).support, 4u);
  EXPECT_THROW(weighted_accuracy(a, std::vector<int>{0}), ValidationError);
  EXPECT_THROW(weighted_accuracy(std::vector<int>{}, std::vector<int>{}), ValidationError);
}

TEST(WeightedAccuracy, RandomGuessingIsChance) {
  Stream rng(77);
  const std::size_t n = 20000;
  std::vector<int> p(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = static_cast<int>(rng.below(4));
    y[i] = static_cast<int>(rng.below(4));
  }
  EXPECT_NEAR(weighted_accuracy(p, y).value, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(Auc, HandCurves) {
  EXPECT_DOUBLE_EQ(auc(Points{{4, 0.7}, {16, 0.7}, {128, 0.7}}), 0.7);
  EXPECT_EQ(auc(Points{{0, 0}, {1, 1}}), 0.5);
  EXPECT_EQ(auc(Points{{0, 0}, {1, 1}, {2, 0}}), 0.5);
  // ((.2+.4)/2*2 + (.4+1)/2*2) / 4
  EXPECT_DOUBLE_EQ(auc(Points{{2, 0.2}, {4, 0.4}, {6, 1.0}}), 0.5);
}

TEST(Auc, RejectsBadInput) {
  EXPECT_THROW(auc(Points{{1, 0.5}}), ValidationError);
  try {
    auc(Points{{1, 0.5}, {1, 0.6}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate x"), std::string::npos);
  }
  EXPECT_THROW(auc(Points{{2, 0.5}, {1, 0.6}}), ValidationError);
  EXPECT_THROW(auc(Points{{1, 0.5}, {2, 1.5}}), ValidationError);
  EXPECT_THROW(auc(Points{{1, 0.5}, {2, NAN}}), ValidationError);
}

TEST(Auc, CollinearPointsDoNotChangeArea) {
  Stream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = rng.uniform(0, 10), x1 = x0 + rng.uniform(0.5, 10);
    const double y0 = rng.uniform(), y1 = rng.uniform();
    const double t = rng.uniform(0.1, 0.9);
    const Points two{{x0, y0}, {x1, y1}};
    const Points three{{x0, y0}, {x0 + t * (x1 - x0), y0 + t * (y1 - y0)}, {x1, y1}};
    EXPECT_NEAR(auc(two), auc(three), 1e-12);
  }
}

TEST(Auc, MonotoneInEachHeight) {
  Stream rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Points p;
    double x = 0;
    for (int i = 0; i < 5; ++i) {
      x += rng.uniform(0.5, 3);
      p.emplace_back(x, rng.uniform(0, 0.9));
    }
    const double before = auc(p);
    p[rng.below(5)].second += 0.05;
    EXPECT_GT(auc(p), before);
  }
}

TEST(MeanStd, Population) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto m = mean_std(v);
  EXPECT_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
}

SynthSpec clean_spec() {
  SynthSpec s;
  s.n_speakers = 10;
  s.samples_per_speaker = 40;
  s.feature_dim = 8;
  s.speaker_scale = 1.0;
  s.emotion_scale = 4.0;
  s.noise_std = 0.3;
  s.bias_rho = 0.0;
  s.seed = 12;
  return s;
}

CvConfig small_cv(Strategy strategy) {
  CvConfig c;
  c.arch.upstream_hidden = {16};
  c.arch.embedding_dim = 8;
  c.train.strategy = strategy;
  c.train.epochs = 8;
  c.train.batch_size = 16;
  c.seed = 5;
  return c;
}

TEST(CrossValidate, StructureAndSummary) {
  const auto data = generate(clean_spec());
  const auto cv = cross_validate(data, small_cv(Strategy::tap), SplitMode::speaker_independent);
  ASSERT_EQ(cv.folds.size(), 5u);
  EXPECT_EQ(cv.mode, SplitMode::speaker_independent);
  double sum = 0.0;
  std::size_t tested = 0;
  for (std::size_t f = 0; f < cv.folds.size(); ++f) {
    const auto& fold = cv.folds[f];
    EXPECT_EQ(fold.split.fold_index, f);
    EXPECT_EQ(fold.wa.support, fold.split.test.size());
    EXPECT_EQ(fold.report.epochs.size(), 8u);
    EXPECT_GT(fold.report.speaker_steps, 0u);
    sum += fold.wa.value;
    tested += fold.split.test.size();
  }
  EXPECT_EQ(tested, data.size());
  EXPECT_NEAR(cv.summary.mean, sum / 5.0, 1e-12);
  EXPECT_GE(cv.summary.mean, 0.95);
}

TEST(CrossValidate, DeterministicAndJobIndependent) {
  const auto data = generate(clean_spec());
  auto cfg = small_cv(Strategy::snp);
  cfg.train.epochs = 3;
  const auto a = cross_validate(data, cfg, SplitMode::speaker_dependent);
  cfg.jobs = 3;
  const auto b = cross_validate(data, cfg, SplitMode::speaker_dependent);
  ASSERT_EQ(a.folds.size(), b.folds.size());
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    EXPECT_EQ(a.folds[f].report, b.folds[f].report);
    EXPECT_EQ(a.folds[f].wa.value, b.folds[f].wa.value);
  }
  EXPECT_EQ(a.mode, SplitMode::speaker_dependent);
}

TEST(Probe, RandomUpstreamStillCarriesSpeaker) {
  SynthSpec s;
  s.samples_per_speaker = 60;
  s.seed = 8;
  const auto data = generate(s);
  Stream rng(9);
  const std::size_t dims[] = {32, 64, 32};
  const Mlp upstream = Mlp::glorot(dims, Activation::relu, Activation::relu, rng);
  const auto before = parameter_hash(upstream);
  ProbeConfig cfg;
  cfg.epochs = 20;
  const auto m = probe_speaker_id(upstream, nullptr, data, cfg);
  EXPECT_EQ(m.name, "probe_accuracy");
  EXPECT_GT(m.value, 3.0 * 0.1);
  EXPECT_EQ(m.support, 120u);  // 20% of 600
  EXPECT_EQ(parameter_hash(upstream), before);
  EXPECT_EQ(probe_speaker_id(upstream, nullptr, data, cfg).value, m.value);
}

TEST(Probe, DimensionMismatch) {
  SynthSpec s;
  s.feature_dim = 5;
  s.samples_per_speaker = 5;
  const auto data = generate(s);
  Stream rng(1);
  const std::size_t dims[] = {32, 8};
  const Mlp upstream = Mlp::glorot(dims, Activation::relu, Activation::relu, rng);
  EXPECT_THROW(probe_speaker_id(upstream, nullptr, data, ProbeConfig{}), ValidationError);
  const std::size_t pdims[] = {7, 4};
  const Mlp projector = Mlp::glorot(pdims, Activation::tanh, Activation::tanh, rng);
  SynthSpec s32;
  s32.samples_per_speaker = 5;
  EXPECT_THROW(probe_speaker_id(upstream, &projector, generate(s32), ProbeConfig{}), ValidationError);
}

LowResourceConfig small_lowres() {
  LowResourceConfig c;
  c.arch.upstream_hidden = {16};
  c.arch.embedding_dim = 8;
  c.train.epochs = 8;
  c.train.batch_size = 8;
  c.seed = 2;
  return c;
}

TEST(LowResource, SinglePointAucIsItsMean) {
  const auto data = generate(clean_spec());
  const std::vector<std::size_t> sizes{4};
  const auto r = low_resource_curve(data, sizes, 2, small_lowres());
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.points[0].accuracies.size(), 2u);
  EXPECT_EQ(r.auc, r.points[0].mean);
}

TEST(LowResource, MeansAndAucRecompute) {
  const auto data = generate(clean_spec());
  const std::vector<std::size_t> sizes{1, 4, 16};
  const auto r = low_resource_curve(data, sizes, 3, small_lowres());
  Points xy;
  for (const auto& p : r.points) {
    double sum = 0.0;
    for (double a : p.accuracies) sum += a;
    EXPECT_NEAR(p.mean, sum / 3.0, 1e-12);
    xy.emplace_back(static_cast<double>(p.n_per_class), p.mean);
  }
  EXPECT_NEAR(r.auc, auc(xy), 1e-12);
  EXPECT_GE(r.points.back().mean, r.points.front().mean);
  EXPECT_GE(r.points.back().mean, 0.9);
}

TEST(LowResource, RejectsBadGrids) {
  const auto data = generate(clean_spec());
  EXPECT_THROW(low_resource_curve(data, std::vector<std::size_t>{}, 1, small_lowres()), ValidationError);
  EXPECT_THROW(low_resource_curve(data, std::vector<std::size_t>{4, 4}, 1, small_lowres()), ValidationError);
  EXPECT_THROW(low_resource_curve(data, std::vector<std::size_t>{4}, 0, small_lowres()), ValidationError);
  EXPECT_THROW(low_resource_curve(data, std::vector<std::size_t>{10000}, 1, small_lowres()), ValidationError);
}

}  // namespace
}  // namespace featnorm
