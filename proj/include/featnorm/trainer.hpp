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

#ifndef FEATNORM_TRAINER_HPP
#define FEATNORM_TRAINER_HPP

// Two-step adversarial training. An emotion step descends the emotion loss
// through the head and the shared representation; a speaker step descends
// the speaker loss on the speaker head while *ascending* it on the
// representation, which pushes speaker identity out of the embedding.
//
//   TAP       ascent is applied to the upstream encoder.
//   SNP       a tanh projector sits between encoder and heads; only the
//             projector receives the ascent and the encoder is never
//             differentiated in a speaker step.
//   BASELINE  emotion steps only.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "featnorm/data.hpp"
#include "featnorm/error.hpp"
#include "featnorm/matrix.hpp"
#include "featnorm/metrics.hpp"
#include "featnorm/nn.hpp"
#include "featnorm/random.hpp"

namespace featnorm {

enum class Strategy { baseline, tap, snp };

inline std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::baseline: return "baseline";
    case Strategy::tap: return "tap";
    case Strategy::snp: return "snp";
  }
  return "baseline";
}

inline Strategy parse_strategy(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "baseline") return Strategy::baseline;
  if (lower == "tap") return Strategy::tap;
  if (lower == "snp") return Strategy::snp;
  throw ValidationError("unknown strategy '" + std::string(text) + "'");
}

/// Layer sizes for a model assembly.
struct Architecture {
  std::size_t input_dim = 32;
  std::vector<std::size_t> upstream_hidden{64};
  std::size_t embedding_dim = 32;
  Activation upstream_activation = Activation::relu;
  Activation projector_activation = Activation::tanh;
  std::size_t n_emotions = 4;
  std::size_t n_speakers = 10;

  void validate() const {
    if (input_dim == 0 || embedding_dim == 0) throw ValidationError("model dims must be positive");
    for (auto h : upstream_hidden) {
      if (h == 0) throw ValidationError("hidden dims must be positive");
    }
    if (n_emotions < 2) throw ValidationError("need at least two emotion classes");
    if (n_speakers < 2) throw ValidationError("need at least two speaker classes");
  }
};

/// Upstream encoder, optional projector, and the two task heads that read
/// the same representation.
struct ModelAssembly {
  Mlp upstream;
  std::optional<Mlp> projector;
  Mlp emotion_head;
  Mlp speaker_head;

  std::size_t representation_dim() const {
    return projector ? projector->out_dim() : upstream.out_dim();
  }

  void validate() const {
    if (projector) {
      if (projector->depth() != 1) throw ValidationError("projector must be a single layer");
      if (projector->layer(0).activation() == Activation::identity) {
        throw ValidationError("projector must be non-linear");
      }
      if (projector->in_dim() != upstream.out_dim()) {
        throw ShapeError("projector input dim " + std::to_string(projector->in_dim()) +
                         " != upstream output dim " + std::to_string(upstream.out_dim()));
      }
    }
    const std::size_t k = representation_dim();
    if (emotion_head.in_dim() != k || speaker_head.in_dim() != k) {
      throw ShapeError("heads must consume the " + std::to_string(k) + "-dim representation");
    }
  }

  void check_strategy(Strategy strategy) const {
    if ((strategy == Strategy::snp) != projector.has_value()) {
      throw ContractError(std::string("strategy ") + std::string(to_string(strategy)) +
                          (projector ? " must not have a projector" : " requires a projector"));
    }
  }

  friend bool operator==(const ModelAssembly&, const ModelAssembly&) = default;
};

/// Freshly initialised assembly. Each component draws from its own stream,
/// so the encoder and heads are identical across strategies for one seed.
inline ModelAssembly make_assembly(const Architecture& arch, Strategy strategy, std::uint64_t seed) {
  arch.validate();
  std::vector<std::size_t> dims{arch.input_dim};
  dims.insert(dims.end(), arch.upstream_hidden.begin(), arch.upstream_hidden.end());
  dims.push_back(arch.embedding_dim);
  Stream up_rng(seed, "init_upstream");
  Stream proj_rng(seed, "init_projector");
  Stream er_rng(seed, "init_emotion_head");
  Stream id_rng(seed, "init_speaker_head");
  ModelAssembly m;
  m.upstream = Mlp::glorot(dims, arch.upstream_activation, arch.upstream_activation, up_rng);
  if (strategy == Strategy::snp) {
    const std::size_t k[] = {arch.embedding_dim, arch.embedding_dim};
    m.projector = Mlp::glorot(k, arch.projector_activation, arch.projector_activation, proj_rng);
  }
  const std::size_t er[] = {arch.embedding_dim, arch.n_emotions};
  const std::size_t id[] = {arch.embedding_dim, arch.n_speakers};
  m.emotion_head = Mlp::glorot(er, Activation::identity, Activation::identity, er_rng);
  m.speaker_head = Mlp::glorot(id, Activation::identity, Activation::identity, id_rng);
  m.validate();
  return m;
}

/// Representation fed to both heads, without caches.
inline Matrix represent(const ModelAssembly& model, const Matrix& x) {
  Matrix rep = infer(model.upstream, x);
  if (model.projector) rep = infer(*model.projector, rep);
  return rep;
}

inline std::vector<int> predict_emotions(const ModelAssembly& model, const Matrix& x) {
  return argmax_rows(infer(model.emotion_head, represent(model, x)));
}

/// Backward-pass counters; lets callers observe which components were
/// differentiated.
struct StepStats {
  std::size_t upstream_backward = 0;
  std::size_t projector_backward = 0;
  std::size_t emotion_head_backward = 0;
  std::size_t speaker_head_backward = 0;

  friend bool operator==(const StepStats&, const StepStats&) = default;
};

/// Descent on the emotion loss for the emotion head, the projector (SNP)
/// and the upstream encoder. The speaker head is not touched. Returns the
/// pre-update batch loss. eta == 0 is a null step.
inline double emotion_step(ModelAssembly& model, const Matrix& features,
                           std::span<const int> emotion_labels, double eta, Strategy strategy,
                           StepStats* stats = nullptr) {
  model.check_strategy(strategy);
  if (features.rows() == 0) throw ValidationError("empty emotion batch");
  if (!(eta >= 0.0)) throw ValidationError("eta must be non-negative");

  auto up = forward(model.upstream, features);
  std::optional<ForwardResult> proj;
  if (model.projector) proj = forward(*model.projector, up.output);
  const Matrix& rep = proj ? proj->output : up.output;
  auto head = forward(model.emotion_head, rep);
  auto loss = softmax_cross_entropy(head.output, emotion_labels);

  auto head_back = backward(model.emotion_head, head.cache, loss.dlogits);
  Matrix d_up = std::move(head_back.dinput);
  std::optional<BackwardResult> proj_back;
  if (proj) {
    proj_back = backward(*model.projector, proj->cache, d_up);
    d_up = std::move(proj_back->dinput);
  }
  auto up_back = backward(model.upstream, up.cache, d_up);
  if (stats) {
    ++stats->emotion_head_backward;
    ++stats->upstream_backward;
    if (proj_back) ++stats->projector_backward;
  }

  if (eta > 0.0) {
    apply_update(model.emotion_head, head_back.grads, eta, Direction::descent);
    if (proj_back) apply_update(*model.projector, proj_back->grads, eta, Direction::descent);
    apply_update(model.upstream, up_back.grads, eta, Direction::descent);
  }
  return loss.loss;
}

/// Descent with rate eta on the speaker head; ascent with rate lambda on the
/// upstream encoder (TAP) or on the projector alone (SNP, encoder frozen and
/// not differentiated). Never valid under BASELINE.
inline double speaker_step(ModelAssembly& model, const Matrix& features,
                           std::span<const int> speaker_labels, double eta, double lambda,
                           Strategy strategy, StepStats* stats = nullptr) {
  if (strategy == Strategy::baseline) {
    throw ContractError("speaker_step scheduled under the baseline strategy");
  }
  model.check_strategy(strategy);
  if (features.rows() == 0) throw ValidationError("empty speaker batch");
  if (!(eta >= 0.0)) throw ValidationError("eta must be non-negative");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");

  const bool adversary = lambda > 0.0;
  std::optional<ForwardResult> up;
  std::optional<ForwardResult> proj;
  Matrix rep;
  if (strategy == Strategy::snp) {
    rep = infer(model.upstream, features);
    if (adversary) {
      proj = forward(*model.projector, rep);
      rep = proj->output;
    } else {
      rep = infer(*model.projector, rep);
    }
  } else if (adversary) {
    up = forward(model.upstream, features);
    rep = up->output;
  } else {
    rep = infer(model.upstream, features);
  }

  auto head = forward(model.speaker_head, rep);
  auto loss = softmax_cross_entropy(head.output, speaker_labels);
  auto head_back = backward(model.speaker_head, head.cache, loss.dlogits);
  if (stats) ++stats->speaker_head_backward;

  std::optional<Gradients> adversary_grads;
  if (proj) {
    adversary_grads = backward(*model.projector, proj->cache, head_back.dinput).grads;
    if (stats) ++stats->projector_backward;
  } else if (up) {
    adversary_grads = backward(model.upstream, up->cache, head_back.dinput).grads;
    if (stats) ++stats->upstream_backward;
  }

  if (eta > 0.0) apply_update(model.speaker_head, head_back.grads, eta, Direction::descent);
  if (adversary_grads) {
    Mlp& target = strategy == Strategy::snp ? *model.projector : model.upstream;
    apply_update(target, *adversary_grads, lambda, Direction::ascent);
  }
  return loss.loss;
}

struct TrainConfig {
  double eta = 0.05;
  double lambda = 0.001;
  Strategy strategy = Strategy::tap;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t speaker_steps_per_emotion_step = 1;
  std::uint64_t seed = 0;

  /// Copy with BASELINE forcing lambda = 0; throws on invalid values.
  TrainConfig normalized() const {
    TrainConfig c = *this;
    if (!(c.eta > 0.0)) throw ValidationError("eta must be positive");
    if (!(c.lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    if (c.epochs < 1) throw ValidationError("epochs must be at least 1");
    if (c.batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (c.strategy == Strategy::baseline) c.lambda = 0.0;
    return c;
  }
};

struct ModelHashes {
  std::uint64_t upstream = 0;
  std::uint64_t projector = 0;
  std::uint64_t emotion_head = 0;
  std::uint64_t speaker_head = 0;

  friend bool operator==(const ModelHashes&, const ModelHashes&) = default;
};

inline ModelHashes hash_model(const ModelAssembly& m) {
  return {parameter_hash(m.upstream), m.projector ? parameter_hash(*m.projector) : 0,
          parameter_hash(m.emotion_head), parameter_hash(m.speaker_head)};
}

struct EpochRecord {
  double train_loss = 0.0;    // mean emotion batch loss
  double speaker_loss = 0.0;  // mean speaker batch loss, 0 without speaker steps
  double validation_wa = 0.0;
  ModelHashes hashes;         // parameters at the end of the epoch

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  ModelAssembly best_model;
  ModelAssembly final_model;
  std::size_t emotion_steps = 0;
  std::size_t speaker_steps = 0;
  StepStats stats;

  double best_validation_wa() const { return epochs.at(best_epoch).validation_wa; }
};

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.eta == b.eta && a.lambda == b.lambda && a.strategy == b.strategy &&
         a.epochs == b.epochs && a.batch_size == b.batch_size &&
         a.speaker_steps_per_emotion_step == b.speaker_steps_per_emotion_step && a.seed == b.seed;
}

inline bool operator==(const TrainReport& a, const TrainReport& b) {
  return a.config == b.config && a.epochs == b.epochs && a.best_epoch == b.best_epoch &&
         a.best_model == b.best_model && a.final_model == b.final_model &&
         a.emotion_steps == b.emotion_steps && a.speaker_steps == b.speaker_steps &&
         a.stats == b.stats;
}

/// Opaque copy used for best-epoch selection.
struct Snapshot {
  ModelAssembly model;
};

inline Snapshot snapshot(const ModelAssembly& m) { return {m}; }
inline ModelAssembly restore(const Snapshot& s) { return s.model; }

/// Endless mini-batch source over a fixed index set; reshuffles with its own
/// stream after every pass.
class CyclingBatcher {
 public:
  CyclingBatcher(std::vector<std::size_t> indices, Stream rng)
      : indices_(std::move(indices)), rng_(rng) {
    if (indices_.empty()) throw ValidationError("cannot cycle over an empty index set");
    rng_.shuffle(indices_);
  }

  std::vector<std::size_t> next(std::size_t batch_size) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (pos_ == indices_.size()) {
        rng_.shuffle(indices_);
        pos_ = 0;
      }
      batch.push_back(indices_[pos_++]);
    }
    return batch;
  }

 private:
  std::vector<std::size_t> indices_;
  Stream rng_;
  std::size_t pos_ = 0;
};

inline double evaluate_wa(const ModelAssembly& model, const Dataset& data,
                          std::span<const std::size_t> indices) {
  const auto predictions = predict_emotions(model, data.features(indices));
  const auto labels = data.emotions(indices);
  return weighted_accuracy(predictions, labels).value;
}

/// Full training run. Each emotion mini-batch step is followed by
/// speaker_steps_per_emotion_step speaker steps drawn from an independent
/// cycling iterator over (speaker_data, speaker_indices). Validation WA is
/// measured after every epoch; the best epoch (earliest on ties) is kept.
inline TrainReport train(ModelAssembly model, const Dataset& emotion_data,
                         std::span<const std::size_t> train_indices,
                         std::span<const std::size_t> validation_indices,
                         const Dataset& speaker_data, std::span<const std::size_t> speaker_indices,
                         const TrainConfig& raw_config) {
  const TrainConfig config = raw_config.normalized();
  model.validate();
  model.check_strategy(config.strategy);
  if (train_indices.empty()) throw ValidationError("empty emotion training split");
  if (validation_indices.empty()) throw ValidationError("empty emotion validation split");
  if (emotion_data.feature_dim() != model.upstream.in_dim()) {
    throw ShapeError("emotion features have dim " + std::to_string(emotion_data.feature_dim()) +
                     ", model expects " + std::to_string(model.upstream.in_dim()));
  }
  if (model.emotion_head.out_dim() < emotion_data.n_emotions()) {
    throw ShapeError("emotion head too narrow for the dataset's emotion classes");
  }
  const bool adversarial = config.strategy != Strategy::baseline;
  std::optional<CyclingBatcher> speaker_batches;
  if (adversarial && config.speaker_steps_per_emotion_step > 0) {
    if (speaker_indices.empty()) throw ValidationError("empty speaker dataset");
    if (speaker_data.feature_dim() != model.upstream.in_dim()) {
      throw ShapeError("speaker features have dim " + std::to_string(speaker_data.feature_dim()) +
                       ", model expects " + std::to_string(model.upstream.in_dim()));
    }
    if (model.speaker_head.out_dim() < speaker_data.n_speakers()) {
      throw ShapeError("speaker head too narrow for the speaker dataset");
    }
    speaker_batches.emplace(std::vector<std::size_t>(speaker_indices.begin(), speaker_indices.end()),
                            Stream(config.seed, "speaker_batches"));
  }

  TrainReport report;
  report.config = config;
  Stream emotion_rng(config.seed, "emotion_batches");
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    emotion_rng.shuffle(order);
    double loss_sum = 0.0;
    double speaker_loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t speaker_batches_run = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      loss_sum += emotion_step(model, emotion_data.features(batch), emotion_data.emotions(batch),
                               config.eta, config.strategy, &report.stats);
      ++batches;
      ++report.emotion_steps;
      if (!speaker_batches) continue;
      for (std::size_t s = 0; s < config.speaker_steps_per_emotion_step; ++s) {
        const auto sb = speaker_batches->next(config.batch_size);
        speaker_loss_sum += speaker_step(model, speaker_data.features(sb), speaker_data.speakers(sb),
                                         config.eta, config.lambda, config.strategy, &report.stats);
        ++speaker_batches_run;
        ++report.speaker_steps;
      }
    }
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.speaker_loss =
        speaker_batches_run ? speaker_loss_sum / static_cast<double>(speaker_batches_run) : 0.0;
    rec.validation_wa = evaluate_wa(model, emotion_data, validation_indices);
    rec.hashes = hash_model(model);
    report.epochs.push_back(rec);
    if (epoch == 0 || rec.validation_wa > report.epochs[report.best_epoch].validation_wa) {
      report.best_epoch = epoch;
      report.best_model = restore(snapshot(model));
    }
  }
  report.final_model = std::move(model);
  return report;
}

// Assembly text format: a header, the strategy tag, then each component as
// `component <name>` followed by an embedded featnorm-mlp block.

inline void write_assembly(std::ostream& out, const ModelAssembly& m) {
  out << "featnorm-assembly 1\n";
  out << "projector " << (m.projector ? "yes" : "no") << '\n';
  out << "component upstream\n";
  write_mlp(out, m.upstream);
  if (m.projector) {
    out << "component projector\n";
    write_mlp(out, *m.projector);
  }
  out << "component emotion_head\n";
  write_mlp(out, m.emotion_head);
  out << "component speaker_head\n";
  write_mlp(out, m.speaker_head);
}

inline std::string assembly_text(const ModelAssembly& m) {
  std::ostringstream out;
  write_assembly(out, m);
  return out.str();
}

inline ModelAssembly read_assembly(std::istream& in) {
  detail::LineReader reader{in};
  if (reader.next("assembly header") != "featnorm-assembly 1") {
    throw ParseError("expected 'featnorm-assembly 1'", reader.line_no);
  }
  const std::string proj_line = reader.next("projector flag");
  if (proj_line != "projector yes" && proj_line != "projector no") {
    throw ParseError("expected 'projector yes|no'", reader.line_no);
  }
  auto component = [&reader](const std::string& name) {
    if (reader.next("component line") != "component " + name) {
      throw ParseError("expected 'component " + name + "'", reader.line_no);
    }
    return detail::read_mlp(reader);
  };
  ModelAssembly m;
  m.upstream = component("upstream");
  if (proj_line == "projector yes") m.projector = component("projector");
  m.emotion_head = component("emotion_head");
  m.speaker_head = component("speaker_head");
  try {
    m.validate();
  } catch (const Error& e) {
    throw ParseError(e.what(), reader.line_no);
  }
  return m;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"eta", c.eta},
          {"lambda", c.lambda},
          {"strategy", to_string(c.strategy)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"speaker_steps_per_emotion_step", c.speaker_steps_per_emotion_step},
          {"seed", c.seed},
          {"validation_metric", "weighted_accuracy"}};
}

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.config);
  auto train_loss = nlohmann::ordered_json::array();
  auto speaker_loss = nlohmann::ordered_json::array();
  auto val_wa = nlohmann::ordered_json::array();
  auto up_hash = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    train_loss.push_back(e.train_loss);
    speaker_loss.push_back(e.speaker_loss);
    val_wa.push_back(e.validation_wa);
    up_hash.push_back(hex64(e.hashes.upstream));
  }
  j["epochs"] = {{"train_loss", std::move(train_loss)},
                 {"speaker_loss", std::move(speaker_loss)},
                 {"validation_wa", std::move(val_wa)},
                 {"upstream_hash", std::move(up_hash)}};
  j["best_epoch"] = r.best_epoch;
  j["best_validation_wa"] = r.best_validation_wa();
  j["emotion_steps"] = r.emotion_steps;
  j["speaker_steps"] = r.speaker_steps;
  j["backward_passes"] = {{"upstream", r.stats.upstream_backward},
                          {"projector", r.stats.projector_backward},
                          {"emotion_head", r.stats.emotion_head_backward},
                          {"speaker_head", r.stats.speaker_head_backward}};
  return j;
}

}  // namespace featnorm

#endif  // FEATNORM_TRAINER_HPP
