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
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "featnorm/data.hpp"
#include "featnorm/trainer.hpp"

namespace featnorm {
namespace {

Architecture small_arch() {
  Architecture a;
  a.input_dim = 8;
  a.upstream_hidden = {12};
  a.embedding_dim = 6;
  a.n_emotions = 3;
  a.n_speakers = 4;
  return a;
}

Dataset small_data(std::uint64_t seed = 3) {
  SynthSpec s;
  s.n_speakers = 4;
  s.n_emotions = 3;
  s.feature_dim = 8;
  s.samples_per_speaker = 40;
  s.seed = seed;
  return generate(s);
}

struct Batch {
  Matrix x;
  std::vector<int> emotions;
  std::vector<int> speakers;
};

Batch batch_of(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back((i * 7) % d.size());
  return {d.features(idx), d.emotions(idx), d.speakers(idx)};
}

TEST(EmotionStep, ZeroRateIsNullStepButReportsLoss) {
  const auto data = small_data();
  const auto b = batch_of(data, 10);
  for (auto strategy : {Strategy::baseline, Strategy::tap, Strategy::snp}) {
    ModelAssembly m = make_assembly(small_arch(), strategy, 5);
    const ModelAssembly before = m;
    const double loss = emotion_step(m, b.x, b.emotions, 0.0, strategy);
    EXPECT_EQ(hash_model(m), hash_model(before));
    const double expected =
        softmax_cross_entropy(infer(m.emotion_head, represent(m, b.x)), b.emotions).loss;
    EXPECT_EQ(loss, expected);
    EXPECT_GT(loss, 0.0);
  }
}

// The composed loss as a function of one component, for the finite-difference oracle.
double emotion_loss(const ModelAssembly& m, const Matrix& x, const std::vector<int>& y) {
  return softmax_cross_entropy(infer(m.emotion_head, represent(m, x)), y).loss;
}
double speaker_loss(const ModelAssembly& m, const Matrix& x, const std::vector<int>& y) {
  return softmax_cross_entropy(infer(m.speaker_head, represent(m, x)), y).loss;
}

TEST(EmotionStep, SingleParameterUpdateMatchesOracle) {
  // One-parameter encoder (1 -> 1 identity), linear two-class head.
  ModelAssembly m;
  m.upstream = Mlp({DenseLayer(Matrix{{0.7}}, {0.0}, Activation::identity)});
  m.emotion_head = Mlp({DenseLayer(Matrix{{1.5, -0.5}}, {0.1, 0.0}, Activation::identity)});
  m.speaker_head = Mlp({DenseLayer(Matrix{{1.0, 2.0}}, {0.0, 0.0}, Activation::identity)});
  const Matrix x{{2.0}};
  const std::vector<int> y{1};
  const double eta = 0.3;

  // Hand arithmetic: z = 1.4, logits = (2.2, -0.7), p1 = σ(-2.9);
  // dℓ/dw = (p1 - 1) * (-0.5 - 1.5) * x.
  const double p1 = 1.0 / (1.0 + std::exp(2.9));
  const double hand_grad = (p1 - 1.0) * (-2.0) * 2.0;

  ModelAssembly probe = m;
  auto fd = finite_diff_grad(
      [&](const Mlp& up) {
        probe.upstream = up;
        return emotion_loss(probe, x, y);
      },
      m.upstream, 1e-6);
  EXPECT_NEAR(fd.at(0), hand_grad, 1e-8);

  ModelAssembly stepped = m;
  emotion_step(stepped, x, y, eta, Strategy::tap);
  EXPECT_NEAR(stepped.upstream.parameter(0), 0.7 - eta * hand_grad, 1e-12);
  EXPECT_NEAR(stepped.upstream.parameter(1), -eta * (p1 - 1.0) * (-2.0), 1e-12);  // bias
}

TEST(EmotionStep, AllComponentsMoveByOracleGradients) {
  const auto data = small_data();
  const auto b = batch_of(data, 6);
  for (auto strategy : {Strategy::tap, Strategy::snp}) {
    ModelAssembly m = make_assembly(small_arch(), strategy, 9);
    const double eta = 0.01;
    ModelAssembly probe = m;
    auto oracle = [&](auto member) {
      return finite_diff_grad(
          [&](const Mlp& part) {
            ModelAssembly p = m;
            p.*member = part;
            return emotion_loss(p, b.x, b.emotions);
          },
          m.*member, 1e-6);
    };
    auto g_up = oracle(&ModelAssembly::upstream);
    auto g_er = oracle(&ModelAssembly::emotion_head);
    ModelAssembly stepped = m;
    emotion_step(stepped, b.x, b.emotions, eta, strategy);
    for (std::size_t i = 0; i < g_up.parameter_count(); ++i) {
      EXPECT_NEAR(stepped.upstream.parameter(i), m.upstream.parameter(i) - eta * g_up.at(i), 1e-9);
    }
    for (std::size_t i = 0; i < g_er.parameter_count(); ++i) {
      EXPECT_NEAR(stepped.emotion_head.parameter(i), m.emotion_head.parameter(i) - eta * g_er.at(i),
                  1e-9);
    }
    if (strategy == Strategy::snp) {
      auto g_proj = finite_diff_grad(
          [&](const Mlp& part) {
            ModelAssembly p = m;
            p.projector = part;
            return emotion_loss(p, b.x, b.emotions);
          },
          *m.projector, 1e-6);
      for (std::size_t i = 0; i < g_proj.parameter_count(); ++i) {
        EXPECT_NEAR(stepped.projector->parameter(i), m.projector->parameter(i) - eta * g_proj.at(i),
                    1e-9);
      }
    }
  }
}

TEST(EmotionStep, NeverTouchesSpeakerHead) {
  const auto data = small_data();
  for (auto strategy : {Strategy::baseline, Strategy::tap, Strategy::snp}) {
    ModelAssembly m = make_assembly(small_arch(), strategy, 2);
    const auto before = parameter_hash(m.speaker_head);
    for (std::size_t n : {1, 5, 17}) {
      const auto b = batch_of(data, n);
      emotion_step(m, b.x, b.emotions, 0.2, strategy);
    }
    EXPECT_EQ(parameter_hash(m.speaker_head), before);
  }
}

TEST(EmotionStep, RejectsBadLabelsAndMismatchedStrategy) {
  ModelAssembly m = make_assembly(small_arch(), Strategy::tap, 1);
  const auto b = batch_of(small_data(), 4);
  std::vector<int> bad = b.emotions;
  bad[2] = 3;
  EXPECT_THROW(emotion_step(m, b.x, bad, 0.1, Strategy::tap), ValidationError);
  EXPECT_THROW(emotion_step(m, b.x, b.emotions, 0.1, Strategy::snp), ContractError);
  EXPECT_THROW(emotion_step(m, Matrix(3, 5), std::vector<int>{0, 0, 0}, 0.1, Strategy::tap),
               ShapeError);
}

TEST(SpeakerStep, ZeroLambdaLeavesRepresentationUnchanged) {
  const auto b = batch_of(small_data(), 8);
  for (auto strategy : {Strategy::tap, Strategy::snp}) {
    ModelAssembly m = make_assembly(small_arch(), strategy, 4);
    const auto before = hash_model(m);
    StepStats stats;
    speaker_step(m, b.x, b.speakers, 0.1, 0.0, strategy, &stats);
    const auto after = hash_model(m);
    EXPECT_EQ(after.upstream, before.upstream);
    EXPECT_EQ(after.projector, before.projector);
    EXPECT_EQ(after.emotion_head, before.emotion_head);
    EXPECT_NE(after.speaker_head, before.speaker_head);
    EXPECT_EQ(stats.upstream_backward, 0u);
  }
}

TEST(SpeakerStep, SnpFreezesUpstreamAndSkipsItsGradients) {
  const auto data = small_data();
  ModelAssembly m = make_assembly(small_arch(), Strategy::snp, 4);
  const auto up_before = parameter_hash(m.upstream);
  const auto proj_before = parameter_hash(*m.projector);
  StepStats stats;
  for (double lambda : {1e-4, 1e-2, 0.5}) {
    for (std::size_t n : {3, 9}) {
      const auto b = batch_of(data, n);
      speaker_step(m, b.x, b.speakers, 0.05, lambda, Strategy::snp, &stats);
    }
  }
  EXPECT_EQ(parameter_hash(m.upstream), up_before);
  EXPECT_NE(parameter_hash(*m.projector), proj_before);
  EXPECT_EQ(stats.upstream_backward, 0u);
  EXPECT_EQ(stats.projector_backward, 6u);
}

TEST(SpeakerStep, TapAscendsUpstreamByLambdaTimesOracleGradient) {
  const auto b = batch_of(small_data(), 5);
  ModelAssembly m = make_assembly(small_arch(), Strategy::tap, 12);
  const double eta = 0.05;
  const double lambda = 0.02;
  auto g_up = finite_diff_grad(
      [&](const Mlp& up) {
        ModelAssembly p = m;
        p.upstream = up;
        return speaker_loss(p, b.x, b.speakers);
      },
      m.upstream, 1e-6);
  auto g_id = finite_diff_grad(
      [&](const Mlp& head) {
        ModelAssembly p = m;
        p.speaker_head = head;
        return speaker_loss(p, b.x, b.speakers);
      },
      m.speaker_head, 1e-6);
  ModelAssembly stepped = m;
  speaker_step(stepped, b.x, b.speakers, eta, lambda, Strategy::tap);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < g_up.parameter_count(); ++i) {
    const double delta = stepped.upstream.parameter(i) - m.upstream.parameter(i);
    EXPECT_NEAR(delta, lambda * g_up.at(i), 1e-10);
    if (std::abs(g_up.at(i)) > 1e-6) {
      EXPECT_GT(delta * g_up.at(i), 0.0);  // +gradient direction
      ++moved;
    }
  }
  EXPECT_GT(moved, 0u);
  for (std::size_t i = 0; i < g_id.parameter_count(); ++i) {
    EXPECT_NEAR(stepped.speaker_head.parameter(i), m.speaker_head.parameter(i) - eta * g_id.at(i),
                1e-10);
  }
  EXPECT_EQ(parameter_hash(stepped.emotion_head), parameter_hash(m.emotion_head));
}

TEST(SpeakerStep, AscentEqualsDescentOnNegatedLoss) {
  const auto b = batch_of(small_data(), 7);
  ModelAssembly m = make_assembly(small_arch(), Strategy::tap, 21);
  ModelAssembly stepped = m;
  speaker_step(stepped, b.x, b.speakers, 0.05, 0.01, Strategy::tap);

  auto up = forward(m.upstream, b.x);
  auto head = forward(m.speaker_head, up.output);
  auto loss = softmax_cross_entropy(head.output, b.speakers);
  auto head_back = backward(m.speaker_head, head.cache, loss.dlogits);
  Matrix negated = head_back.dinput;
  for (double& v : negated.data()) v = -v;
  auto up_back = backward(m.upstream, up.cache, negated);
  apply_update(m.upstream, up_back.grads, 0.01, Direction::descent);
  apply_update(m.speaker_head, head_back.grads, 0.05, Direction::descent);
  EXPECT_EQ(hash_model(m), hash_model(stepped));
}

TEST(SpeakerStep, BaselineIsAContractError) {
  ModelAssembly m = make_assembly(small_arch(), Strategy::baseline, 1);
  const auto b = batch_of(small_data(), 4);
  EXPECT_THROW(speaker_step(m, b.x, b.speakers, 0.1, 0.0, Strategy::baseline), ContractError);
  EXPECT_THROW(speaker_step(m, b.x, b.speakers, 0.1, -1.0, Strategy::tap), ValidationError);
}

struct Fixture {
  Dataset data = small_data(8);
  std::vector<std::size_t> train_idx, val_idx;
  Fixture() {
    for (std::size_t i = 0; i < data.size(); ++i) (i % 5 == 0 ? val_idx : train_idx).push_back(i);
  }
  TrainReport run(Strategy s, double lambda, std::size_t epochs = 6, std::uint64_t seed = 3) const {
    TrainConfig c;
    c.strategy = s;
    c.lambda = lambda;
    c.epochs = epochs;
    c.batch_size = 16;
    c.seed = seed;
    return train(make_assembly(small_arch(), s, 77), data, train_idx, val_idx, data, train_idx, c);
  }
};

TEST(Train, BaselineRecordsNoSpeakerSteps) {
  Fixture f;
  const auto r = f.run(Strategy::baseline, 0.5);
  EXPECT_EQ(r.speaker_steps, 0u);
  EXPECT_EQ(r.config.lambda, 0.0);
  EXPECT_EQ(r.emotion_steps, 6u * 8u);  // 128 training records / 16
  EXPECT_EQ(r.epochs.size(), 6u);
}

TEST(Train, SameSeedIsBitIdentical) {
  Fixture f;
  for (auto s : {Strategy::tap, Strategy::snp}) {
    const auto a = f.run(s, 0.01);
    const auto b = f.run(s, 0.01);
    EXPECT_TRUE(a == b);
    EXPECT_EQ(a.speaker_steps, a.emotion_steps);
  }
  EXPECT_FALSE(f.run(Strategy::tap, 0.01, 6, 3) == f.run(Strategy::tap, 0.01, 6, 4));
}

TEST(Train, ZeroLambdaTapTracksBaselineExactly) {
  Fixture f;
  const auto tap = f.run(Strategy::tap, 0.0, 8);
  const auto base = f.run(Strategy::baseline, 0.0, 8);
  ASSERT_EQ(tap.epochs.size(), base.epochs.size());
  for (std::size_t e = 0; e < tap.epochs.size(); ++e) {
    EXPECT_EQ(tap.epochs[e].hashes.upstream, base.epochs[e].hashes.upstream);
    EXPECT_EQ(tap.epochs[e].hashes.emotion_head, base.epochs[e].hashes.emotion_head);
    EXPECT_EQ(tap.epochs[e].validation_wa, base.epochs[e].validation_wa);
  }
  EXPECT_NE(tap.final_model.speaker_head, base.final_model.speaker_head);
}

double upstream_distance(const Mlp& a, const Mlp& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.parameter_count(); ++i) d = std::max(d, std::abs(a.parameter(i) - b.parameter(i)));
  return d;
}

TEST(Train, LambdaContinuity) {
  Fixture f;
  const auto base = f.run(Strategy::baseline, 0.0, 4);
  double previous = INFINITY;
  for (double lambda : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const auto tap = f.run(Strategy::tap, lambda, 4);
    const double d = upstream_distance(tap.final_model.upstream, base.final_model.upstream);
    EXPECT_LT(d, previous) << "lambda " << lambda;
    previous = d;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Train, SnpNeverDifferentiatesUpstreamInSpeakerSteps) {
  Fixture f;
  const auto r = f.run(Strategy::snp, 0.01);
  EXPECT_EQ(r.stats.upstream_backward, r.emotion_steps);
  EXPECT_EQ(r.stats.projector_backward, r.emotion_steps + r.speaker_steps);
  const auto tap = f.run(Strategy::tap, 0.01);
  EXPECT_EQ(tap.stats.upstream_backward, tap.emotion_steps + tap.speaker_steps);
}

TEST(Train, BestEpochIsEarliestArgmaxAndSnapshotMatches) {
  Fixture f;
  const auto r = f.run(Strategy::tap, 0.001, 12);
  double best = -1.0;
  std::size_t expected = 0;
  for (std::size_t e = 0; e < r.epochs.size(); ++e) {
    if (r.epochs[e].validation_wa > best) {
      best = r.epochs[e].validation_wa;
      expected = e;
    }
  }
  EXPECT_EQ(r.best_epoch, expected);
  EXPECT_EQ(hash_model(r.best_model), r.epochs[r.best_epoch].hashes);
  EXPECT_EQ(evaluate_wa(r.best_model, f.data, f.val_idx), r.best_validation_wa());
}

TEST(Train, RejectsEmptySplits) {
  Fixture f;
  TrainConfig c;
  const std::vector<std::size_t> none;
  auto m = make_assembly(small_arch(), Strategy::tap, 1);
  EXPECT_THROW(train(m, f.data, none, f.val_idx, f.data, f.train_idx, c), ValidationError);
  EXPECT_THROW(train(m, f.data, f.train_idx, none, f.data, f.train_idx, c), ValidationError);
  EXPECT_THROW(train(m, f.data, f.train_idx, f.val_idx, f.data, none, c), ValidationError);
  c.epochs = 0;
  EXPECT_THROW(train(m, f.data, f.train_idx, f.val_idx, f.data, f.train_idx, c), ValidationError);
}

TEST(Snapshot, RoundTripAndIsolation) {
  ModelAssembly m = make_assembly(small_arch(), Strategy::snp, 6);
  const Snapshot snap = snapshot(m);
  const auto b = batch_of(small_data(), 6);
  emotion_step(m, b.x, b.emotions, 0.5, Strategy::snp);
  EXPECT_NE(hash_model(m), hash_model(snap.model));
  const ModelAssembly back = restore(snap);
  EXPECT_EQ(hash_model(back), hash_model(make_assembly(small_arch(), Strategy::snp, 6)));
}

TEST(Snapshot, TextRoundTripReproducesValidationWa) {
  Fixture f;
  const auto r = f.run(Strategy::snp, 0.01, 5);
  std::stringstream buf;
  write_assembly(buf, r.best_model);
  const ModelAssembly loaded = read_assembly(buf);
  EXPECT_EQ(hash_model(loaded), hash_model(r.best_model));
  EXPECT_EQ(evaluate_wa(loaded, f.data, f.val_idx), r.best_validation_wa());
}

TEST(CyclingBatcher, CoversEveryIndexPerPass) {
  CyclingBatcher it({0, 1, 2, 3, 4}, Stream(1));
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 5; ++i) seen[it.next(2)[0]]++;  // 10 draws = 2 passes
  const auto rest = it.next(0);
  EXPECT_TRUE(rest.empty());
  CyclingBatcher all({0, 1, 2, 3, 4}, Stream(1));
  std::vector<int> counts(5, 0);
  for (auto i : all.next(15)) counts[i]++;
  for (int c : counts) EXPECT_EQ(c, 3);
}

}  // namespace
}  // namespace featnorm
