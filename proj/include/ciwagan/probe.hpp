// Copyright 2026 The CiwaGAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "ciwagan/articeval.hpp"
#include "ciwagan/corpus.hpp"
#include "ciwagan/lexstats.hpp"
#include "ciwagan/nets.hpp"
#include "ciwagan/parallel.hpp"
#include "ciwagan/physmodel.hpp"
#include "json.hpp"

namespace ciwagan {

inline constexpr std::size_t kFeatureFrame = 256;
inline constexpr std::size_t kFeatureHop = 80;
inline constexpr std::size_t kFeatureBins = 128;
inline constexpr std::size_t kFeatureFrames = (kSamples - kFeatureFrame) / kFeatureHop + 1;  // 253

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// log(1 + |DFT|) of rectangular 256-sample frames every 80 samples, first
/// 128 bins.
inline FeatureMatrix spectral_features(std::span<const double> wave) {
  if (wave.size() != kSamples) throw std::invalid_argument("features need 20480 samples");
  FeatureMatrix f(kFeatureFrames, kFeatureBins);
  Eigen::FFT<double> fft;
  std::vector<double> frame(kFeatureFrame);
  std::vector<std::complex<double>> spec;
  for (std::size_t t = 0; t < kFeatureFrames; ++t) {
    std::copy_n(wave.begin() + static_cast<std::ptrdiff_t>(t * kFeatureHop), kFeatureFrame, frame.begin());
    fft.fwd(spec, frame);
    for (std::size_t b = 0; b < kFeatureBins; ++b) f(t, b) = std::log1p(std::abs(spec[b]));
  }
  return f;
}

/// DTW (symmetric steps) over frames with Euclidean local cost.
inline double feature_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  const std::size_t n = static_cast<std::size_t>(a.rows()), m = static_cast<std::size_t>(b.rows());
  Eigen::MatrixXd cost(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    cost.row(i) = (b.rowwise() - a.row(i)).rowwise().norm().transpose();
  }
  return dtw_from_cost(n, m, [&](std::size_t i, std::size_t j) { return cost(i, j); }, false).distance;
}

inline constexpr int kElse = -1;

/// Reference audio for a word: the template rendered noise-free with the
/// voicing channel held at 1.
inline Waveform render_reference(const WordTemplate& w) {
  Trajectory t = w.trajectory;
  for (std::size_t f = 0; f < kFrames; ++f) t.at(f, kVoicing) = 1.0;
  return ReferenceSynthesizer(false).synthesize(t, 0);
}

struct Transcription {
  int word = kElse;  // word index, or kElse
  double distance = 0.0;
};

/// Nearest-template DTW transcriber with an ELSE threshold.
class TranscriptionOracle {
 public:
  TranscriptionOracle() = default;

  /// Reference renderings of the first `num_words` words of `corpus_seed`;
  /// tau left unset.
  TranscriptionOracle(std::uint64_t corpus_seed, std::size_t num_words) : corpus_seed_(corpus_seed) {
    templates_.resize(num_words);
    parallel_for(num_words, [&](std::size_t w) {
      templates_[w] = spectral_features(render_reference(make_template(corpus_seed, w)).samples);
    }, 1);
  }

  /// tau = factor x median distance between corpus tokens and their own
  /// word's template.
  double calibrate(std::span<const Token> tokens, double factor = 1.5) {
    if (tokens.empty()) throw std::invalid_argument("calibration needs at least one token");
    std::vector<double> d(tokens.size());
    parallel_for(tokens.size(), [&](std::size_t i) {
      d[i] = feature_distance(spectral_features(tokens[i].waveform.samples), templates_.at(tokens[i].word_index));
    }, 1);
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    const double median = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
    tau_ = factor * median;
    return tau_;
  }

  Transcription classify(std::span<const double> wave) const {
    const auto f = spectral_features(wave);
    Transcription best{kElse, std::numeric_limits<double>::infinity()};
    int arg = kElse;
    for (std::size_t w = 0; w < templates_.size(); ++w) {
      const double d = feature_distance(f, templates_[w]);
      if (d < best.distance) {
        best.distance = d;
        arg = static_cast<int>(w);
      }
    }
    best.word = best.distance > tau_ ? kElse : arg;
    return best;
  }

  std::vector<Transcription> classify_batch(const Tensor& waves) const {
    std::vector<Transcription> out(waves.dim(0));
    parallel_for(out.size(), [&](std::size_t b) {
      out[b] = classify(waves.data().subspan(b * kSamples, kSamples));
    }, 1);
    return out;
  }

  double tau() const { return tau_; }
  void set_tau(double tau) { tau_ = tau; }
  std::size_t num_words() const { return templates_.size(); }
  std::uint64_t corpus_seed() const { return corpus_seed_; }

  nlohmann::ordered_json calibration_json() const {
    nlohmann::ordered_json j;
    j["corpus_seed"] = corpus_seed_;
    j["num_words"] = templates_.size();
    j["tau"] = tau_;
    return j;
  }

  static TranscriptionOracle from_calibration(const nlohmann::json& j) {
    TranscriptionOracle o(j.at("corpus_seed").get<std::uint64_t>(), j.at("num_words").get<std::size_t>());
    o.tau_ = j.at("tau").get<double>();
    return o;
  }

 private:
  std::uint64_t corpus_seed_ = 0;
  std::vector<FeatureMatrix> templates_;
  double tau_ = std::numeric_limits<double>::infinity();
};

struct ProbeSpec {
  double code_scale = 15.0;
  std::size_t samples_per_code = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(code_scale > 0.0)) throw std::invalid_argument("code_scale must be positive");
  }
};

struct ProbeRecord {
  std::size_t code = 0;
  double scale = 0.0;
  std::size_t sample_id = 0;
  int predicted = kElse;
  double distance = 0.0;
};

struct ProbeResult {
  CountTable table;
  std::vector<ProbeRecord> records;
  std::uint64_t z_checksum = 0;
};

/// Maps a latent batch to trajectories [batch x 256 x 13].
using TrajectorySource = std::function<Tensor(const LatentBatch&)>;

/// Pipeline-check source: the word-k template trajectory for every row whose
/// largest code entry is k.
inline TrajectorySource template_source(std::uint64_t corpus_seed) {
  return [corpus_seed](const LatentBatch& l) {
    std::vector<Trajectory> out;
    for (std::size_t b = 0; b < l.batch; ++b) {
      const auto* row = l.c.data() + b * l.num_codes;
      const auto k = static_cast<std::size_t>(std::max_element(row, row + l.num_codes) - row);
      out.push_back(make_template(corpus_seed, k).trajectory);
    }
    return stack(out);
  };
}

inline std::uint64_t latent_checksum(const LatentBatch& l) {
  return fnv1a64(l.z.data(), l.z.size() * sizeof(double));
}

/// For each code k: the shared z batch with c = scale * onehot(k), rendered
/// and transcribed. z and noise seeds depend only on spec.seed.
inline ProbeResult probe_codes(const TrajectorySource& source, std::size_t num_codes, const ProbeSpec& spec,
                               const PhysicalModel& model, const TranscriptionOracle& oracle) {
  spec.validate();
  Rng rng(spec.seed);
  const LatentBatch base = sample_latent(rng, spec.samples_per_code, num_codes);
  std::vector<std::uint64_t> seeds(spec.samples_per_code);
  Rng noise = rng.fork(0x6e6f697365ULL);
  for (auto& s : seeds) s = noise.next_u64();

  ProbeResult r;
  r.table = CountTable(num_codes, oracle.num_words());
  r.z_checksum = latent_checksum(base);
  for (std::size_t k = 0; k < num_codes; ++k) {
    if (spec.samples_per_code == 0) continue;
    const LatentBatch probe = with_code(base, k, spec.code_scale);
    const Tensor traj = source(probe).detach();
    const Tensor waves = model.synthesize(traj, seeds);
    const auto labels = oracle.classify_batch(waves);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto col = labels[i].word == kElse ? r.table.else_column() : static_cast<std::size_t>(labels[i].word);
      ++r.table.counts[k][col];
      r.records.push_back({k, spec.code_scale, i, labels[i].word, labels[i].distance});
    }
  }
  return r;
}

inline std::string probe_record_line(const ProbeRecord& p, std::size_t num_words) {
  nlohmann::ordered_json j;
  j["code"] = p.code;
  j["scale"] = p.scale;
  j["sample_id"] = p.sample_id;
  j["predicted"] = p.predicted == kElse ? std::string("else") : column_label(static_cast<std::size_t>(p.predicted), num_words);
  j["distance"] = p.distance;
  return j.dump();
}

struct Dominance {
  std::size_t column = 0;  // word index, or num_words for else
  std::size_t count = 0;
};

/// Modal column per code; ties go to the lowest column index.
inline std::vector<Dominance> dominance_report(const CountTable& t) {
  std::vector<Dominance> out;
  for (const auto& row : t.counts) {
    Dominance d;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] > d.count) d = {c, row[c]};
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace ciwagan
