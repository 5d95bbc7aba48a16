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

#ifndef FEATNORM_EXPERIMENT_HPP
#define FEATNORM_EXPERIMENT_HPP

// Experiment configuration (sectioned key=value) and the command
// implementations behind the featnorm CLI. Every command computes all of its
// results first, then writes them into the output directory; manifest.json
// is written last and atomically.

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "featnorm/data.hpp"
#include "featnorm/error.hpp"
#include "featnorm/eval.hpp"
#include "featnorm/gradcheck.hpp"
#include "featnorm/metrics.hpp"
#include "featnorm/trainer.hpp"

namespace featnorm {

inline constexpr const char* kVersion = "0.1.0";

/// Flat sectioned configuration. Only known keys are accepted; every value is
/// kept as text and parsed on access.
class ExperimentConfig {
 public:
  using Table = std::map<std::string, std::map<std::string, std::string>>;

  ExperimentConfig() : table_(default_table()) {}

  static Table default_table() {
    return {
        {"run", {{"seed", "1"}, {"out", "featnorm-out"}}},
        {"data",
         {{"source", "synth"},
          {"emotion_csv", ""},
          {"speaker_csv", ""},
          {"seed", ""},
          {"n_speakers", "10"},
          {"n_emotions", "4"},
          {"feature_dim", "32"},
          {"speaker_scale", "6"},
          {"emotion_scale", "3"},
          {"noise_std", "1"},
          {"bias_rho", "0.9"},
          {"samples_per_speaker", "200"},
          {"preference_seed", "0"}}},
        {"model",
         {{"upstream_hidden", "64"},
          {"embedding_dim", "32"},
          {"projector_dim", ""},
          {"upstream_activation", "relu"},
          {"projector_activation", "tanh"}}},
        {"train",
         {{"strategy", "tap"},
          {"eta", "0.05"},
          {"lambda", "0.001"},
          {"epochs", "50"},
          {"batch_size", "32"},
          {"speaker_steps_per_emotion_step", "1"}}},
        {"eval",
         {{"mode", "speaker_independent"},
          {"k_folds", "5"},
          {"validation_fraction", "0.1"},
          {"sd_ratios", "0.8,0.1,0.1"},
          {"sizes", "4,8,16,32,64,128"},
          {"repeats", "5"},
          {"lowres_mode", "speaker_dependent"},
          {"strategies", ""}}},
        {"probe",
         {{"eta", "0.05"},
          {"epochs", "50"},
          {"batch_size", "32"},
          {"train_fraction", "0.8"},
          {"validation_fraction", "0.1"}}},
        {"gradcheck",
         {{"models", "20"}, {"max_params", "10000"}, {"step", "1e-05"}, {"tolerance", "0.0001"}}},
    };
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config file " + path.string() + " not found");
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ParseError(e.message(), e.line());
    }
    ExperimentConfig config;
    for (const auto& [section, keys] : tree) {
      if (keys.empty() && !keys.data().empty()) {
        throw ValidationError("config key '" + section + "' must live inside a [section]");
      }
      for (const auto& [key, value] : keys) config.set(section + "." + key, value.data());
    }
    return config;
  }

  /// `section.key` = value; unknown keys are rejected.
  void set(const std::string& dotted, const std::string& value) {
    const auto dot = dotted.find('.');
    if (dot == std::string::npos) throw ValidationError("expected section.key, got '" + dotted + "'");
    const auto section = dotted.substr(0, dot);
    const auto key = dotted.substr(dot + 1);
    auto s = table_.find(section);
    if (s == table_.end() || !s->second.contains(key)) {
      throw ValidationError("unknown config key '" + dotted + "'");
    }
    s->second[key] = value;
  }

  const std::string& get(const std::string& section, const std::string& key) const {
    return table_.at(section).at(key);
  }

  double real(const std::string& section, const std::string& key) const {
    const auto& text = get(section, key);
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
      throw ValidationError(section + "." + key + " must be a number, got '" + text + "'");
    }
    return v;
  }

  std::uint64_t count(const std::string& section, const std::string& key) const {
    const auto& text = get(section, key);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (text.empty() || text[0] == '-' || end != text.c_str() + text.size() || errno) {
      throw ValidationError(section + "." + key + " must be a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  std::vector<std::string> list(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(section, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& section, const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : list(section, key)) {
      ExperimentConfig probe;
      probe.table_["run"]["seed"] = item;
      try {
        out.push_back(probe.count("run", "seed"));
      } catch (const ValidationError&) {
        throw ValidationError(section + "." + key + " must be a list of integers");
      }
    }
    return out;
  }

  std::uint64_t master_seed() const { return count("run", "seed"); }

  SynthSpec synth_spec() const {
    SynthSpec s;
    s.n_speakers = count("data", "n_speakers");
    s.n_emotions = count("data", "n_emotions");
    s.feature_dim = count("data", "feature_dim");
    s.speaker_scale = real("data", "speaker_scale");
    s.emotion_scale = real("data", "emotion_scale");
    s.noise_std = real("data", "noise_std");
    s.bias_rho = real("data", "bias_rho");
    s.samples_per_speaker = count("data", "samples_per_speaker");
    s.preference_seed = count("data", "preference_seed");
    s.seed = get("data", "seed").empty() ? derive_seed(master_seed(), "data") : count("data", "seed");
    s.validate();
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.strategy = parse_strategy(get("train", "strategy"));
    t.eta = real("train", "eta");
    t.lambda = real("train", "lambda");
    t.epochs = count("train", "epochs");
    t.batch_size = count("train", "batch_size");
    t.speaker_steps_per_emotion_step = count("train", "speaker_steps_per_emotion_step");
    t.seed = master_seed();
    return t.normalized();
  }

  /// Label counts and input dim are filled from the data at run time.
  Architecture architecture() const {
    Architecture a;
    a.upstream_hidden = counts("model", "upstream_hidden");
    a.embedding_dim = count("model", "embedding_dim");
    a.upstream_activation = parse_activation(get("model", "upstream_activation"));
    a.projector_activation = parse_activation(get("model", "projector_activation"));
    if (a.projector_activation == Activation::identity) {
      throw ValidationError("model.projector_activation must be non-linear");
    }
    if (a.embedding_dim == 0) throw ValidationError("model.embedding_dim must be positive");
    for (auto h : a.upstream_hidden) {
      if (h == 0) throw ValidationError("model.upstream_hidden entries must be positive");
    }
    return a;
  }

  /// Strategy/projector consistency: the projector maps k -> k under SNP.
  void check_model_consistency(Strategy strategy) const {
    if (strategy != Strategy::snp) return;
    const auto& pd = get("model", "projector_dim");
    if (pd.empty()) return;
    const auto dim = count("model", "projector_dim");
    if (dim == 0) throw ValidationError("strategy snp requires a projector (model.projector_dim is 0)");
    if (dim != count("model", "embedding_dim")) {
      throw ValidationError("model.projector_dim must equal model.embedding_dim for strategy snp");
    }
  }

  SplitMode eval_mode() const { return parse_split_mode(get("eval", "mode")); }

  std::array<double, 3> sd_ratios() const {
    const auto items = list("eval", "sd_ratios");
    if (items.size() != 3) throw ValidationError("eval.sd_ratios needs three comma-separated values");
    std::array<double, 3> r{};
    for (std::size_t i = 0; i < 3; ++i) {
      char* end = nullptr;
      r[i] = std::strtod(items[i].c_str(), &end);
      if (end != items[i].c_str() + items[i].size()) throw ValidationError("bad eval.sd_ratios entry");
    }
    return r;
  }

  ProbeConfig probe_config() const {
    ProbeConfig p;
    p.eta = real("probe", "eta");
    p.epochs = count("probe", "epochs");
    p.batch_size = count("probe", "batch_size");
    p.train_fraction = real("probe", "train_fraction");
    p.validation_fraction = real("probe", "validation_fraction");
    p.seed = derive_seed(master_seed(), "probe");
    return p;
  }

  nlohmann::ordered_json echo() const {
    nlohmann::ordered_json j;
    for (const auto& [section, keys] : table_) {
      for (const auto& [key, value] : keys) {
        if (section == "run" && key == "out") continue;  // location, not content
        j[section][key] = value;
      }
    }
    return j;
  }

  const Table& table() const noexcept { return table_; }

 private:
  Table table_;
};

/// Files written by a command, keyed by role; paths relative to the run dir.
using Artifacts = std::vector<std::pair<std::string, std::string>>;

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;
  std::size_t jobs = 1;
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

/// Timestamp for manifests: SOURCE_DATE_EPOCH when set, otherwise null, so
/// reruns stay byte-identical.
inline nlohmann::ordered_json manifest_timestamp() {
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) return epoch;
  return nullptr;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

inline void write_outputs(const RunContext& ctx, const std::string& command,
                          const std::vector<std::pair<std::string, std::string>>& files,
                          const nlohmann::ordered_json& extra = {}) {
  ensure_dir(ctx.out);
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
  for (const auto& [name, text] : files) {
    write_file_atomic(ctx.out / name, text);
    artifacts[name] = name;
  }
  nlohmann::ordered_json manifest;
  manifest["tool"] = "featnorm";
  manifest["version"] = kVersion;
  manifest["command"] = command;
  manifest["config"] = ctx.config.echo();
  manifest["timestamp"] = manifest_timestamp();
  manifest["artifacts"] = artifacts;
  if (!extra.is_null()) manifest["summary"] = extra;
  manifest["status"] = "complete";
  write_file_atomic(ctx.out / "manifest.json", json_text(manifest));
}

struct LoadedData {
  Dataset emotion;
  std::optional<Dataset> speaker;
  std::optional<SynthSpec> spec;
};

inline LoadedData load_data(const ExperimentConfig& config) {
  LoadedData d;
  const auto& source = config.get("data", "source");
  if (source == "synth") {
    if (!config.get("data", "emotion_csv").empty()) {
      throw ValidationError("data.source=synth conflicts with data.emotion_csv");
    }
    d.spec = config.synth_spec();
    d.emotion = generate(*d.spec);
  } else if (source == "csv") {
    const auto& path = config.get("data", "emotion_csv");
    if (path.empty()) throw ValidationError("data.source=csv requires data.emotion_csv");
    if (!std::filesystem::exists(path)) throw IoError("emotion dataset " + path + " not found");
    d.emotion = load_csv(path);
  } else {
    throw ValidationError("data.source must be synth or csv");
  }
  if (const auto& sp = config.get("data", "speaker_csv"); !sp.empty()) {
    if (!std::filesystem::exists(sp)) throw IoError("speaker dataset " + sp + " not found");
    d.speaker = load_csv(sp);
  }
  return d;
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

/// gen-data: dataset.csv + dataset.meta.
inline void cmd_gen_data(const RunContext& ctx) {
  const SynthSpec spec = ctx.config.synth_spec();
  const Dataset data = generate(spec);
  detail::write_outputs(ctx, "gen-data",
                        {{"dataset.csv", csv_text(data)}, {"dataset.meta", meta_text(data, spec)}},
                        {{"records", data.size()}});
  *ctx.log << "wrote " << data.size() << " records to " << (ctx.out / "dataset.csv").string() << '\n';
}

/// train: one run on the first split of eval.mode.
inline TrainReport cmd_train(const RunContext& ctx) {
  const TrainConfig tc = ctx.config.train_config();
  ctx.config.check_model_consistency(tc.strategy);
  const Architecture arch_cfg = ctx.config.architecture();
  const auto data = detail::load_data(ctx.config);
  const Dataset* speaker = data.speaker ? &*data.speaker : nullptr;
  const Architecture arch = detail::fit_architecture(arch_cfg, data.emotion, speaker);
  const std::uint64_t seed = ctx.config.master_seed();
  const auto ratios = ctx.config.sd_ratios();
  const auto splits = detail::make_splits(
      data.emotion, ctx.config.eval_mode(),
      ctx.config.eval_mode() == SplitMode::speaker_independent ? ctx.config.count("eval", "k_folds") : 1,
      ctx.config.real("eval", "validation_fraction"), ratios, derive_seed(seed, "split"));
  TrainConfig fold_tc = tc;
  fold_tc.seed = derive_seed(seed, "train", 0);
  auto fold = detail::run_split(data.emotion, splits[0], speaker, splits[0].train, arch, fold_tc,
                                derive_seed(seed, "model", 0));

  auto report = to_json(fold.report);
  report["split"] = {{"mode", to_string(splits[0].mode)},
                     {"fold_index", splits[0].fold_index},
                     {"train", splits[0].train.size()},
                     {"validation", splits[0].validation.size()},
                     {"test", splits[0].test.size()},
                     {"test_speakers", splits[0].test_speakers}};
  report["test_wa"] = fold.wa.value;
  report["snapshots"] = {{"best", "best.model"}, {"final", "final.model"}};
  detail::write_outputs(ctx, "train",
                        {{"report.json", detail::json_text(report)},
                         {"best.model", assembly_text(fold.report.best_model)},
                         {"final.model", assembly_text(fold.report.final_model)}},
                        {{"test_wa", fold.wa.value}, {"best_epoch", fold.report.best_epoch}});
  *ctx.log << "strategy " << to_string(tc.strategy) << " lambda " << detail::fmt(tc.lambda)
           << ": best epoch " << fold.report.best_epoch << ", validation WA "
           << fold.report.best_validation_wa() << ", test WA " << fold.wa.value << '\n';
  return std::move(fold.report);
}

/// eval: cross-validation in eval.mode; cv.csv (fold,wa) + cv.json.
inline CvResult cmd_eval(const RunContext& ctx) {
  CvConfig cv;
  cv.train = ctx.config.train_config();
  ctx.config.check_model_consistency(cv.train.strategy);
  cv.arch = ctx.config.architecture();
  cv.k_folds = ctx.config.count("eval", "k_folds");
  cv.validation_fraction = ctx.config.real("eval", "validation_fraction");
  cv.sd_ratios = ctx.config.sd_ratios();
  cv.seed = ctx.config.master_seed();
  cv.jobs = ctx.jobs;
  const SplitMode mode = ctx.config.eval_mode();
  const auto data = detail::load_data(ctx.config);
  CvResult result = cross_validate(data.emotion, cv, mode, data.speaker ? &*data.speaker : nullptr);

  std::string csv = "fold,wa\n";
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& f : result.folds) {
    csv += std::to_string(f.split.fold_index) + "," + detail::fmt(f.wa.value) + "\n";
    folds.push_back({{"fold", f.split.fold_index},
                     {"wa", f.wa.value},
                     {"support", f.wa.support},
                     {"best_epoch", f.report.best_epoch},
                     {"best_validation_wa", f.report.best_validation_wa()},
                     {"test_speakers", f.split.test_speakers},
                     {"speaker_steps", f.report.speaker_steps}});
  }
  nlohmann::ordered_json report;
  report["mode"] = to_string(mode);
  report["k_folds"] = cv.k_folds;
  report["strategy"] = to_string(cv.train.strategy);
  report["lambda"] = cv.train.lambda;
  report["folds"] = folds;
  report["mean"] = result.summary.mean;
  report["std"] = result.summary.std;
  detail::write_outputs(ctx, "eval", {{"cv.csv", csv}, {"cv.json", detail::json_text(report)}},
                        {{"mean", result.summary.mean}, {"std", result.summary.std}});
  *ctx.log << to_string(mode) << " " << result.folds.size() << " folds: WA mean "
           << result.summary.mean << " std " << result.summary.std << '\n';
  return result;
}

/// probe: frozen-representation speaker-ID accuracy for each snapshot.
inline std::vector<Metric> cmd_probe(const RunContext& ctx,
                                     const std::vector<std::string>& snapshot_paths) {
  if (snapshot_paths.empty()) throw ValidationError("probe needs at least one snapshot path");
  std::vector<ModelAssembly> models;
  for (const auto& p : snapshot_paths) {
    std::ifstream in(p);
    if (!in) throw IoError("snapshot " + p + " not found");
    try {
      models.push_back(read_assembly(in));
    } catch (const ParseError& e) {
      throw ParseError("snapshot " + p + ": " + e.what(), 0);
    }
  }
  const auto data = detail::load_data(ctx.config);
  const Dataset& speakers = data.speaker ? *data.speaker : data.emotion;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].upstream.in_dim() != speakers.feature_dim()) {
      throw ValidationError("snapshot " + snapshot_paths[i] + " expects feature dim " +
                            std::to_string(models[i].upstream.in_dim()) + " but the speaker data has " +
                            std::to_string(speakers.feature_dim()));
    }
  }
  const ProbeConfig pc = ctx.config.probe_config();
  std::vector<Metric> metrics(models.size());
  parallel_for(models.size(), ctx.jobs, [&](std::size_t i) {
    const Mlp* proj = models[i].projector ? &*models[i].projector : nullptr;
    metrics[i] = probe_speaker_id(models[i].upstream, proj, speakers, pc);
  });
  std::string csv = "snapshot,accuracy\n";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    csv += snapshot_paths[i] + "," + detail::fmt(metrics[i].value) + "\n";
    rows.push_back({{"snapshot", snapshot_paths[i]},
                    {"accuracy", metrics[i].value},
                    {"support", metrics[i].support},
                    {"projector", models[i].projector.has_value()}});
  }
  nlohmann::ordered_json report{{"chance", 1.0 / static_cast<double>(speakers.n_speakers())},
                                {"probes", rows}};
  detail::write_outputs(ctx, "probe", {{"probe.csv", csv}, {"probe.json", detail::json_text(report)}});
  *ctx.log << "snapshot\tprobe accuracy\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    *ctx.log << snapshot_paths[i] << '\t' << metrics[i].value << '\n';
  }
  return metrics;
}

/// lowres: learning curve per strategy; lowres_<label>.csv (size,seed,accuracy)
/// and lowres.json with each curve's AUC.
inline std::map<std::string, CurveResult> cmd_lowres(const RunContext& ctx) {
  const TrainConfig base = ctx.config.train_config();
  std::vector<Strategy> strategies;
  for (const auto& s : ctx.config.list("eval", "strategies")) strategies.push_back(parse_strategy(s));
  if (strategies.empty()) strategies.push_back(base.strategy);
  for (auto s : strategies) ctx.config.check_model_consistency(s);
  LowResourceConfig lc;
  lc.arch = ctx.config.architecture();
  lc.mode = parse_split_mode(ctx.config.get("eval", "lowres_mode"));
  lc.k_folds = ctx.config.count("eval", "k_folds");
  lc.validation_fraction = ctx.config.real("eval", "validation_fraction");
  lc.sd_ratios = ctx.config.sd_ratios();
  lc.seed = ctx.config.master_seed();
  lc.jobs = ctx.jobs;
  const auto sizes = ctx.config.counts("eval", "sizes");
  const auto repeats = ctx.config.count("eval", "repeats");
  const auto data = detail::load_data(ctx.config);

  std::map<std::string, CurveResult> curves;
  std::vector<std::pair<std::string, std::string>> files;
  nlohmann::ordered_json report;
  report["mode"] = to_string(lc.mode);
  report["repeats"] = repeats;
  report["sizes"] = sizes;
  for (auto s : strategies) {
    const std::string label(to_string(s));
    if (curves.contains(label)) throw ValidationError("eval.strategies lists " + label + " twice");
    lc.train = base;
    lc.train.strategy = s;
    lc.train.lambda = ctx.config.real("train", "lambda");
    lc.train = lc.train.normalized();
    CurveResult curve = low_resource_curve(data.emotion, sizes, repeats, lc,
                                           data.speaker ? &*data.speaker : nullptr);
    std::string csv = "size,seed,accuracy\n";
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : curve.points) {
      for (std::size_t r = 0; r < p.accuracies.size(); ++r) {
        csv += std::to_string(p.n_per_class) + "," + std::to_string(p.seeds[r]) + "," +
               detail::fmt(p.accuracies[r]) + "\n";
      }
      points.push_back({{"n_per_class", p.n_per_class}, {"accuracies", p.accuracies}, {"mean", p.mean}});
    }
    files.emplace_back("lowres_" + label + ".csv", csv);
    report["curves"][label] = {{"lambda", lc.train.lambda}, {"points", points}, {"auc", curve.auc}};
    *ctx.log << label << ": AUC " << curve.auc << '\n';
    curves.emplace(label, std::move(curve));
  }
  files.emplace_back("lowres.json", detail::json_text(report));
  nlohmann::ordered_json summary;
  for (const auto& [label, c] : curves) summary[label] = c.auc;
  detail::write_outputs(ctx, "lowres", files, summary);
  return curves;
}

/// gradcheck: backward() vs central differences on randomized models.
inline GradcheckReport cmd_gradcheck(const RunContext& ctx, bool corrupt_gradient = false) {
  GradcheckConfig gc;
  gc.models = ctx.config.count("gradcheck", "models");
  gc.max_params = ctx.config.count("gradcheck", "max_params");
  gc.step = ctx.config.real("gradcheck", "step");
  gc.tolerance = ctx.config.real("gradcheck", "tolerance");
  gc.seed = ctx.config.master_seed();
  gc.corrupt_gradient = corrupt_gradient;
  if (gc.models == 0) throw ValidationError("gradcheck.models must be positive");
  const GradcheckReport report = run_gradcheck(gc);

  nlohmann::ordered_json instances = nlohmann::ordered_json::array();
  for (const auto& inst : report.instances) {
    instances.push_back({{"model", inst.description},
                         {"parameters", inst.parameters},
                         {"max_relative_error", inst.max_relative_error},
                         {"max_absolute_error", inst.max_absolute_error},
                         {"worst", (inst.worst_is_input ? "input " : "parameter ") +
                                       std::to_string(inst.worst_index)},
                         {"violations", inst.violations}});
  }
  nlohmann::ordered_json j{{"step", gc.step},
                           {"tolerance", gc.tolerance},
                           {"instances", instances},
                           {"max_relative_error", report.max_relative_error},
                           {"violations", report.violations},
                           {"verdict", report.passed() ? "pass" : "fail"}};
  detail::write_outputs(ctx, "gradcheck", {{"gradcheck.json", detail::json_text(j)}},
                        {{"verdict", report.passed() ? "pass" : "fail"}});
  *ctx.log << "gradcheck " << (report.passed() ? "PASS" : "FAIL") << ": " << report.instances.size()
           << " models, max relative error " << report.max_relative_error << '\n';
  if (!report.passed()) {
    const auto worst = std::max_element(
        report.instances.begin(), report.instances.end(),
        [](const auto& a, const auto& b) { return a.max_relative_error < b.max_relative_error; });
    *ctx.log << "worst: model '" << worst->description << "' "
             << (worst->worst_is_input ? "input " : "parameter ") << worst->worst_index
             << " relative error " << worst->max_relative_error << '\n';
  }
  return report;
}

}  // namespace featnorm

#endif  // FEATNORM_EXPERIMENT_HPP
