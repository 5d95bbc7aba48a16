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

#ifndef FEATNORM_DATA_HPP
#define FEATNORM_DATA_HPP

// Labelled feature datasets: a synthetic generator with planted speaker
// offsets and a tunable speaker->emotion bias, the speaker-independent and
// speaker-dependent splitters, per-class subsampling, and CSV persistence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "featnorm/error.hpp"
#include "featnorm/matrix.hpp"
#include "featnorm/nn.hpp"
#include "featnorm/random.hpp"

namespace featnorm {

struct SynthSpec {
  std::size_t n_speakers = 10;
  std::size_t n_emotions = 4;
  std::size_t feature_dim = 32;
  double speaker_scale = 6.0;
  double emotion_scale = 3.0;
  double noise_std = 1.0;
  double bias_rho = 0.9;
  std::size_t samples_per_speaker = 200;
  std::uint64_t seed = 0;
  /// 0 keeps the preferred-emotion map s mod n_emotions; otherwise speakers
  /// are permuted with this seed before taking the modulus.
  std::uint64_t preference_seed = 0;

  void validate() const {
    if (feature_dim == 0) throw ValidationError("feature_dim must be positive");
    if (n_speakers < 2) throw ValidationError("n_speakers must be at least 2");
    if (n_emotions < 2) throw ValidationError("n_emotions must be at least 2");
    if (!(bias_rho >= 0.0 && bias_rho <= 1.0)) throw ValidationError("bias_rho must lie in [0, 1]");
    if (!(speaker_scale >= 0.0) || !(emotion_scale >= 0.0) || !(noise_std >= 0.0)) {
      throw ValidationError("speaker_scale, emotion_scale and noise_std must be non-negative");
    }
    if (samples_per_speaker == 0) throw ValidationError("samples_per_speaker must be positive");
  }

  /// Preferred emotion for each speaker.
  std::vector<int> preferences() const {
    std::vector<std::size_t> order(n_speakers);
    for (std::size_t s = 0; s < n_speakers; ++s) order[s] = s;
    if (preference_seed != 0) {
      Stream rng(preference_seed, "preference");
      rng.shuffle(order);
    }
    std::vector<int> pref(n_speakers);
    for (std::size_t s = 0; s < n_speakers; ++s) pref[s] = static_cast<int>(order[s] % n_emotions);
    return pref;
  }
};

struct Record {
  std::string id;
  int speaker = 0;
  int emotion = 0;
  std::vector<double> features;

  friend bool operator==(const Record&, const Record&) = default;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n_speakers, std::size_t n_emotions, std::size_t feature_dim,
          std::vector<Record> records = {})
      : n_speakers_(n_speakers),
        n_emotions_(n_emotions),
        feature_dim_(feature_dim),
        records_(std::move(records)) {
    validate();
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t n_speakers() const noexcept { return n_speakers_; }
  std::size_t n_emotions() const noexcept { return n_emotions_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const std::vector<Record>& records() const noexcept { return records_; }
  const Record& operator[](std::size_t i) const { return records_.at(i); }

  void validate() const {
    if (feature_dim_ == 0) throw ValidationError("dataset feature_dim must be positive");
    std::set<std::string_view> ids;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const Record& r = records_[i];
      if (r.features.size() != feature_dim_) {
        throw ValidationError("record " + r.id + " has " + std::to_string(r.features.size()) +
                              " features, expected " + std::to_string(feature_dim_));
      }
      if (r.speaker < 0 || static_cast<std::size_t>(r.speaker) >= n_speakers_) {
        throw ValidationError("record " + r.id + " speaker label out of range");
      }
      if (r.emotion < 0 || static_cast<std::size_t>(r.emotion) >= n_emotions_) {
        throw ValidationError("record " + r.id + " emotion label out of range");
      }
      if (!ids.insert(r.id).second) throw ValidationError("duplicate utterance id " + r.id);
    }
  }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(records_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }

  Matrix features(std::span<const std::size_t> indices) const {
    Matrix m(indices.size(), feature_dim_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& f = records_.at(indices[i]).features;
      std::copy(f.begin(), f.end(), m.row(i).begin());
    }
    return m;
  }

  std::vector<int> emotions(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records_.at(i).emotion);
    return out;
  }

  std::vector<int> speakers(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records_.at(i).speaker);
    return out;
  }

  /// New dataset holding the selected records, same label spaces.
  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<Record> recs;
    recs.reserve(indices.size());
    for (auto i : indices) recs.push_back(records_.at(i));
    return Dataset(n_speakers_, n_emotions_, feature_dim_, std::move(recs));
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_speakers_ = 0;
  std::size_t n_emotions_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<Record> records_;
};

namespace detail {

inline std::vector<double> random_direction(std::size_t dim, double scale, Stream& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x = norm > 0.0 ? x * scale / norm : 0.0;
  return v;
}

inline std::string utterance_id(std::size_t speaker, std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "spk%03zu_utt%05zu", speaker, index);
  return buf;
}

}  // namespace detail

/// Per-emotion signal vectors (norm emotion_scale) for a spec.
inline std::vector<std::vector<double>> emotion_signals(const SynthSpec& spec) {
  Stream rng(spec.seed, "emotion_signal");
  std::vector<std::vector<double>> out;
  for (std::size_t e = 0; e < spec.n_emotions; ++e) {
    out.push_back(detail::random_direction(spec.feature_dim, spec.emotion_scale, rng));
  }
  return out;
}

/// Per-speaker offset vectors (norm speaker_scale) for a spec.
inline std::vector<std::vector<double>> speaker_offsets(const SynthSpec& spec) {
  Stream rng(spec.seed, "speaker_offset");
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    out.push_back(detail::random_direction(spec.feature_dim, spec.speaker_scale, rng));
  }
  return out;
}

/// x = emotion_signal[e] + speaker_offset[s] + N(0, noise_std²). With
/// probability bias_rho the emotion is the speaker's preferred one, otherwise
/// uniform over all emotions.
inline Dataset generate(const SynthSpec& spec) {
  spec.validate();
  const auto signals = emotion_signals(spec);
  const auto offsets = speaker_offsets(spec);
  const auto preferred = spec.preferences();
  Stream label_rng(spec.seed, "emotion_label");
  Stream noise_rng(spec.seed, "noise");
  std::vector<Record> records;
  records.reserve(spec.n_speakers * spec.samples_per_speaker);
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    for (std::size_t i = 0; i < spec.samples_per_speaker; ++i) {
      Record r;
      r.id = detail::utterance_id(s, i);
      r.speaker = static_cast<int>(s);
      const double u = label_rng.uniform();
      r.emotion = u < spec.bias_rho ? preferred[s]
                                    : static_cast<int>(label_rng.below(spec.n_emotions));
      r.features.resize(spec.feature_dim);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        r.features[d] = signals[r.emotion][d] + offsets[s][d] + spec.noise_std * noise_rng.normal();
      }
      records.push_back(std::move(r));
    }
  }
  return Dataset(spec.n_speakers, spec.n_emotions, spec.feature_dim, std::move(records));
}

enum class SplitMode { speaker_independent, speaker_dependent };

inline std::string_view to_string(SplitMode m) noexcept {
  return m == SplitMode::speaker_independent ? "speaker_independent" : "speaker_dependent";
}

inline SplitMode parse_split_mode(std::string_view text) {
  if (text == "speaker_independent") return SplitMode::speaker_independent;
  if (text == "speaker_dependent") return SplitMode::speaker_dependent;
  throw ValidationError("unknown split mode '" + std::string(text) + "'");
}

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  SplitMode mode = SplitMode::speaker_independent;
  std::size_t fold_index = 0;
  std::vector<int> test_speakers;  // speaker_independent only

  friend bool operator==(const FoldSplit&, const FoldSplit&) = default;
};

inline std::vector<int> present_speakers(const Dataset& data, std::span<const std::size_t> indices) {
  std::set<int> s;
  for (auto i : indices) s.insert(data[i].speaker);
  return {s.begin(), s.end()};
}

/// Speakers (those present in the data) are shuffled and cut into k equal
/// groups. Fold i tests on group i; the remaining utterances are split into
/// train and validation at utterance level.
inline std::vector<FoldSplit> split_speaker_independent(const Dataset& data, std::size_t k_folds,
                                                        double validation_fraction,
                                                        std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("validation_fraction must lie in (0, 1)");
  }
  auto speakers = present_speakers(data, data.all_indices());
  if (k_folds < 2) throw ValidationError("k_folds must be at least 2");
  if (k_folds > speakers.size()) {
    throw ValidationError("k_folds (" + std::to_string(k_folds) + ") exceeds speaker count (" +
                          std::to_string(speakers.size()) + ")");
  }
  if (speakers.size() % k_folds != 0) {
    throw ValidationError(std::to_string(speakers.size()) + " speakers cannot be divided into " +
                          std::to_string(k_folds) + " equal folds");
  }
  Stream speaker_rng(seed, "si_speakers");
  speaker_rng.shuffle(speakers);
  const std::size_t group = speakers.size() / k_folds;

  std::vector<FoldSplit> folds;
  for (std::size_t f = 0; f < k_folds; ++f) {
    FoldSplit split;
    split.mode = SplitMode::speaker_independent;
    split.fold_index = f;
    split.test_speakers.assign(speakers.begin() + static_cast<std::ptrdiff_t>(f * group),
                               speakers.begin() + static_cast<std::ptrdiff_t>((f + 1) * group));
    std::sort(split.test_speakers.begin(), split.test_speakers.end());
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (std::binary_search(split.test_speakers.begin(), split.test_speakers.end(),
                             data[i].speaker)) {
        split.test.push_back(i);
      } else {
        rest.push_back(i);
      }
    }
    Stream rng(seed, "si_validation", f);
    rng.shuffle(rest);
    const auto n_val = static_cast<std::size_t>(
        std::llround(validation_fraction * static_cast<double>(rest.size())));
    if (n_val == 0 || n_val >= rest.size() || split.test.empty()) {
      throw ValidationError("fold " + std::to_string(f) + " would have an empty part");
    }
    split.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    folds.push_back(std::move(split));
  }
  return folds;
}

/// Uniform utterance-level train/validation/test split.
inline FoldSplit split_speaker_dependent(const Dataset& data, std::span<const double> ratios,
                                         std::uint64_t seed, std::size_t fold_index = 0) {
  if (ratios.size() != 3) throw ValidationError("expected three ratios (train, validation, test)");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ValidationError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  auto idx = data.all_indices();
  Stream rng(seed, "sd_split", fold_index);
  rng.shuffle(idx);
  const double n = static_cast<double>(idx.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * n));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= idx.size()) {
    throw ValidationError("split ratios produce an empty part for " + std::to_string(idx.size()) +
                          " records");
  }
  FoldSplit split;
  split.mode = SplitMode::speaker_dependent;
  split.fold_index = fold_index;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                          idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

/// Exactly n_per_class indices per emotion class drawn uniformly from `pool`,
/// grouped by class in ascending class order.
inline std::vector<std::size_t> subsample_indices(const Dataset& data,
                                                  std::span<const std::size_t> pool,
                                                  std::size_t n_per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(data.n_emotions());
  for (auto i : pool) by_class.at(static_cast<std::size_t>(data[i].emotion)).push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < n_per_class) {
      throw ValidationError("emotion class " + std::to_string(c) + " has " +
                            std::to_string(members.size()) + " samples, fewer than the requested " +
                            std::to_string(n_per_class));
    }
    Stream rng(seed, "subsample", c);
    rng.shuffle(members);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_per_class));
  }
  return out;
}

inline Dataset subsample_per_class(const Dataset& data, std::size_t n_per_class,
                                   std::uint64_t seed) {
  const auto all = data.all_indices();
  const auto picked = subsample_indices(data, all, n_per_class, seed);
  return data.subset(picked);
}

// CSV: header `id,speaker,emotion,f0,...,f{d-1}`, features %.17g, LF endings.
// Sidecar `<basename>.meta` holds key=value lines.

inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta");
  return p;
}

inline std::string csv_text(const Dataset& data) {
  std::string out = "id,speaker,emotion";
  for (std::size_t d = 0; d < data.feature_dim(); ++d) out += ",f" + std::to_string(d);
  out += '\n';
  for (const auto& r : data.records()) {
    if (r.id.find_first_of(",\n\r") != std::string::npos) {
      throw ValidationError("utterance id '" + r.id + "' cannot be written as CSV");
    }
    out += r.id;
    out += ',' + std::to_string(r.speaker) + ',' + std::to_string(r.emotion);
    for (double f : r.features) {
      out += ',';
      out += format_double(f);
    }
    out += '\n';
  }
  return out;
}

inline std::string meta_text(const Dataset& data, const std::optional<SynthSpec>& spec) {
  std::ostringstream m;
  m << "n_speakers=" << data.n_speakers() << '\n'
    << "n_emotions=" << data.n_emotions() << '\n'
    << "feature_dim=" << data.feature_dim() << '\n'
    << "records=" << data.size() << '\n';
  if (spec) {
    m << "generator.speaker_scale=" << format_double(spec->speaker_scale) << '\n'
      << "generator.emotion_scale=" << format_double(spec->emotion_scale) << '\n'
      << "generator.noise_std=" << format_double(spec->noise_std) << '\n'
      << "generator.bias_rho=" << format_double(spec->bias_rho) << '\n'
      << "generator.samples_per_speaker=" << spec->samples_per_speaker << '\n'
      << "generator.seed=" << spec->seed << '\n'
      << "generator.preference_seed=" << spec->preference_seed << '\n';
  }
  return m.str();
}

/// Writes `text` to a sibling temporary and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void save_csv(const Dataset& data, const std::filesystem::path& path,
                     const std::optional<SynthSpec>& spec = std::nullopt) {
  write_file_atomic(path, csv_text(data));
  write_file_atomic(meta_path(path), meta_text(data, spec));
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value in " + path.string(), line_no);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

/// Loads a dataset CSV. Label cardinalities come from the sidecar when it
/// exists, otherwise from the largest label seen.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "id" || header[1] != "speaker" || header[2] != "emotion") {
    throw ParseError("header must be id,speaker,emotion,f0,...", 1);
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t d = 0; d < dim; ++d) {
    if (header[3 + d] != "f" + std::to_string(d)) {
      throw ParseError("unexpected header column '" + header[3 + d] + "'", 1);
    }
  }
  std::vector<Record> records;
  std::size_t line_no = 1;
  int max_speaker = -1;
  int max_emotion = -1;
  auto parse_int = [&](const std::string& cell, const char* what) {
    char* end = nullptr;
    const long v = std::strtol(cell.c_str(), &end, 10);
    if (cell.empty() || end != cell.c_str() + cell.size() || v < 0 || v > 1'000'000'000) {
      throw ParseError(std::string("bad ") + what + " '" + cell + "'", line_no);
    }
    return static_cast<int>(v);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    Record r;
    r.id = cells[0];
    if (r.id.empty()) throw ParseError("empty utterance id", line_no);
    r.speaker = parse_int(cells[1], "speaker label");
    r.emotion = parse_int(cells[2], "emotion label");
    r.features.reserve(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      const std::string& c = cells[3 + d];
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(v)) {
        throw ParseError("bad feature value '" + c + "'", line_no);
      }
      r.features.push_back(v);
    }
    max_speaker = std::max(max_speaker, r.speaker);
    max_emotion = std::max(max_emotion, r.emotion);
    records.push_back(std::move(r));
  }
  std::size_t n_speakers = static_cast<std::size_t>(max_speaker + 1);
  std::size_t n_emotions = static_cast<std::size_t>(max_emotion + 1);
  if (auto mp = meta_path(path); std::filesystem::exists(mp)) {
    const auto kv = read_key_values(mp);
    try {
      if (auto it = kv.find("n_speakers"); it != kv.end()) n_speakers = std::stoul(it->second);
      if (auto it = kv.find("n_emotions"); it != kv.end()) n_emotions = std::stoul(it->second);
      if (auto it = kv.find("feature_dim"); it != kv.end() && std::stoul(it->second) != dim) {
        throw ParseError("sidecar feature_dim disagrees with CSV header", 0);
      }
    } catch (const std::logic_error&) {
      throw ParseError("malformed sidecar " + mp.string(), 0);
    }
  }
  try {
    return Dataset(n_speakers, n_emotions, dim, std::move(records));
  } catch (const ValidationError& e) {
    throw ParseError(std::string(path.string()) + ": " + e.what(), 0);
  }
}

}  // namespace featnorm

#endif  // FEATNORM_DATA_HPP
