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
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ciwagan/parallel.hpp"
#include "ciwagan/physmodel.hpp"
#include "ciwagan/rng.hpp"

namespace ciwagan {

inline constexpr std::size_t kControlPoints = 5;
inline constexpr std::size_t kLexiconSize = 9;

inline constexpr std::array<const char*, kChannels> kChannelNames{
    "ll_x", "ll_y", "tt_x", "tt_y", "li_x", "li_y", "ul_x", "ul_y", "tb_x", "tb_y", "td_x", "td_y", "voicing"};

struct CorpusSpec {
  std::uint64_t corpus_seed = 1;
  std::size_t tokens_per_word = 100;
  double amplitude_jitter = 0.05;
  double time_warp = 0.05;
  std::size_t num_words = kLexiconSize;

  void validate() const {
    if (tokens_per_word < 1) throw std::invalid_argument("tokens_per_word must be >= 1");
    if (num_words < 1 || num_words > kLexiconSize) {
      throw std::invalid_argument("num_words must be in [1, 9]");
    }
    if (!(amplitude_jitter >= 0.0)) throw std::invalid_argument("amplitude_jitter must be >= 0");
    if (!(time_warp >= 0.0 && time_warp < 1.0)) throw std::invalid_argument("time_warp must be in [0, 1)");
  }
};

struct WordTemplate {
  std::size_t word_index = 0;
  std::array<std::array<double, kControlPoints>, kEmaChannels> control{};
  Trajectory trajectory;
};

namespace detail {

// Onset/offset schedule on normalized time u in [0,1].
inline double voicing_schedule(double u) {
  if (u <= 0.10 || u >= 0.90) return 0.0;
  if (u < 0.15) return (u - 0.10) / 0.05;
  if (u > 0.85) return (0.90 - u) / 0.05;
  return 1.0;
}

// Piecewise-linear curve through control points spread evenly over [0,1].
inline double control_curve(const std::array<double, kControlPoints>& cp, double u) {
  const double x = std::clamp(u, 0.0, 1.0) * static_cast<double>(kControlPoints - 1);
  const std::size_t k = std::min(static_cast<std::size_t>(x), kControlPoints - 2);
  const double frac = x - static_cast<double>(k);
  return (1.0 - frac) * cp[k] + frac * cp[k + 1];
}

// u(f) = (f / warp) / 255, clamped at the end of the curve.
inline Trajectory build_trajectory(const std::array<std::array<double, kControlPoints>, kEmaChannels>& cp,
                                   double warp) {
  Trajectory t;
  for (std::size_t f = 0; f < kFrames; ++f) {
    const double u = std::min(1.0, static_cast<double>(f) / warp / static_cast<double>(kFrames - 1));
    for (std::size_t c = 0; c < kEmaChannels; ++c) t.at(f, c) = control_curve(cp[c], u);
    t.at(f, kVoicing) = voicing_schedule(u);
  }
  return t;
}

}  // namespace detail

inline WordTemplate make_template(std::uint64_t corpus_seed, std::size_t word_index) {
  if (word_index >= kLexiconSize) throw std::out_of_range("word_index must be < 9");
  Rng rng = Rng(corpus_seed).fork(word_index);
  WordTemplate w;
  w.word_index = word_index;
  for (auto& ch : w.control) {
    for (auto& v : ch) v = rng.uniform(-0.8, 0.8);
  }
  w.trajectory = detail::build_trajectory(w.control, 1.0);
  return w;
}

struct Token {
  std::size_t word_index = 0;
  std::size_t token_id = 0;
  std::uint64_t noise_seed = 0;
  Trajectory trajectory;
  Waveform waveform;
};

/// Jittered, time-warped rendition of a template. `jitter` and `warp` of 0
/// reproduce the template exactly.
inline Token render_token(const WordTemplate& tmpl, Rng& jitter_rng, const ReferenceSynthesizer& model,
                          std::uint64_t noise_seed, double jitter = 0.05, double warp = 0.05) {
  auto cp = tmpl.control;
  if (jitter > 0.0) {
    for (auto& ch : cp) {
      for (auto& v : ch) v += jitter_rng.normal(0.0, jitter);
    }
  }
  const double factor = warp > 0.0 ? jitter_rng.uniform(1.0 - warp, 1.0 + warp) : 1.0;
  Token tok;
  tok.word_index = tmpl.word_index;
  tok.noise_seed = noise_seed;
  tok.trajectory = detail::build_trajectory(cp, factor);
  tok.waveform = model.synthesize(tok.trajectory, noise_seed);
  return tok;
}

inline std::uint64_t token_noise_seed(std::uint64_t corpus_seed, std::size_t word, std::size_t token) {
  return Rng::mix(Rng::mix(corpus_seed ^ 0x9e3779b97f4a7c15ULL) + (word << 32) + token);
}

struct Corpus {
  CorpusSpec spec;
  std::vector<WordTemplate> templates;
  std::vector<Token> tokens;  // word-major, token_id ascending
};

/// Pure function of `spec`: templates for the first `num_words` words and
/// `tokens_per_word` rendered tokens each.
inline Corpus synthesize_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus c;
  c.spec = spec;
  for (std::size_t w = 0; w < spec.num_words; ++w) c.templates.push_back(make_template(spec.corpus_seed, w));
  c.tokens.resize(spec.num_words * spec.tokens_per_word);
  ReferenceSynthesizer model;
  const Rng base = Rng(spec.corpus_seed).fork(0x746f6b656eULL);
  parallel_for(c.tokens.size(), [&](std::size_t i) {
    const std::size_t w = i / spec.tokens_per_word, t = i % spec.tokens_per_word;
    Rng rng = base.fork(i);
    c.tokens[i] = render_token(c.templates[w], rng, model, token_noise_seed(spec.corpus_seed, w, t),
                               spec.amplitude_jitter, spec.time_warp);
    c.tokens[i].token_id = t;
  }, 1);
  return c;
}

// ---------------------------------------------------------------------------
// File formats

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string ema_header() {
  std::string h = "frame";
  for (const char* n : kChannelNames) h += std::string(",") + n;
  return h;
}

inline void write_ema_csv(std::ostream& os, const Trajectory& t) {
  os << ema_header() << '\n';
  char buf[32];
  for (std::size_t f = 0; f < kFrames; ++f) {
    os << f;
    for (std::size_t c = 0; c < kChannels; ++c) {
      std::snprintf(buf, sizeof buf, ",%.9g", t.at(f, c));
      os << buf;
    }
    os << '\n';
  }
}

inline Trajectory read_ema_csv(std::istream& is, const std::string& where = "EMA CSV") {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(where + ": line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != ema_header()) {
    std::size_t fields = std::count(line.begin(), line.end(), ',') + 1;
    throw FormatError(where + ": line 1: expected header with 14 columns (frame + 13 channels), got " +
                      std::to_string(fields) + " columns");
  }
  Trajectory t;
  std::size_t rows = 0;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (rows == kFrames) throw FormatError(where + ": line " + std::to_string(lineno) + ": more than 256 rows");
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != kChannels + 1) {
      throw FormatError(where + ": line " + std::to_string(lineno) + ": expected 14 fields, got " +
                        std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < kChannels; ++c) {
      const std::string& cell = cells[c + 1];
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size()) {
        throw FormatError(where + ": line " + std::to_string(lineno) + ", column " + std::to_string(c + 2) +
                          ": not a number: '" + cell + "'");
      }
      t.at(rows, c) = v;
    }
    ++rows;
  }
  if (rows != kFrames) {
    throw FormatError(where + ": expected 256 data rows, got " + std::to_string(rows));
  }
  return t;
}

inline void save_ema_csv(const std::filesystem::path& p, const Trajectory& t) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  write_ema_csv(os, t);
}

inline Trajectory load_ema_csv(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return read_ema_csv(is, p.string());
}

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}
inline std::uint16_t get_u16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

}  // namespace detail

inline std::int16_t pcm16(double x) {
  const double q = std::round(x * 32767.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

/// RIFF/PCM mono 16 kHz 16-bit.
inline std::string encode_wav(const Waveform& w) {
  std::string s = "RIFF";
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  detail::put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  detail::put_u32(s, 16);
  detail::put_u16(s, 1);
  detail::put_u16(s, 1);
  detail::put_u32(s, kSampleRate);
  detail::put_u32(s, kSampleRate * 2);
  detail::put_u16(s, 2);
  detail::put_u16(s, 16);
  s += "data";
  detail::put_u32(s, data_bytes);
  for (double x : w.samples) detail::put_u16(s, static_cast<std::uint16_t>(pcm16(x)));
  return s;
}

inline Waveform decode_wav(const std::string& s, const std::string& where = "WAV") {
  auto fail = [&](std::size_t byte, const std::string& msg) {
    throw FormatError(where + ": byte " + std::to_string(byte) + ": " + msg);
  };
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0) fail(0, "missing RIFF magic");
  if (s.compare(8, 4, "WAVE") != 0) fail(8, "missing WAVE tag");
  std::size_t at = 12;
  bool have_fmt = false;
  while (at + 8 <= s.size()) {
    const std::string id = s.substr(at, 4);
    const std::uint32_t size = detail::get_u32(s, at + 4);
    const std::size_t body = at + 8;
    if (body + size > s.size()) fail(at, "chunk '" + id + "' runs past end of file");
    if (id == "fmt ") {
      if (size < 16) fail(at, "fmt chunk too short");
      if (detail::get_u16(s, body) != 1) fail(body, "not PCM");
      if (detail::get_u16(s, body + 2) != 1) fail(body + 2, "expected mono");
      if (detail::get_u32(s, body + 4) != kSampleRate) fail(body + 4, "expected 16000 Hz");
      if (detail::get_u16(s, body + 14) != 16) fail(body + 14, "expected 16-bit samples");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(at, "data chunk before fmt chunk");
      if (size != kSamples * 2) {
        fail(at + 4, "expected 20480 samples, got " + std::to_string(size / 2));
      }
      Waveform w;
      for (std::size_t n = 0; n < kSamples; ++n) {
        w.samples[n] = static_cast<std::int16_t>(detail::get_u16(s, body + 2 * n)) / 32767.0;
      }
      return w;
    }
    at = body + size + (size & 1);
  }
  fail(at, "no data chunk");
  return {};
}

inline void save_wav(const std::filesystem::path& p, const Waveform& w) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  const std::string bytes = encode_wav(w);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Waveform load_wav(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, p.string());
}

struct ManifestEntry {
  std::size_t word_index = 0;
  std::size_t token_id = 0;
  std::uint64_t noise_seed = 0;
  std::string ema_path;
  std::string wav_path;
};

inline std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["word_index"] = e.word_index;
  j["token_id"] = e.token_id;
  j["noise_seed"] = e.noise_seed;
  j["ema_path"] = e.ema_path;
  j["wav_path"] = e.wav_path;
  return j.dump();
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.word_index = j.at("word_index").get<std::size_t>();
      e.token_id = j.at("token_id").get<std::size_t>();
      e.noise_seed = j.at("noise_seed").get<std::uint64_t>();
      e.ema_path = j.at("ema_path").get<std::string>();
      e.wav_path = j.at("wav_path").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(p.string() + ": line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

/// Writes ema/, wav/ and manifest.jsonl under `dir`; paths in the manifest
/// are relative to `dir`.
inline std::vector<ManifestEntry> write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "ema");
  fs::create_directories(dir / "wav");
  std::vector<ManifestEntry> entries;
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& tok : c.tokens) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "w%zu_t%04zu", tok.word_index, tok.token_id);
    ManifestEntry e{tok.word_index, tok.token_id, tok.noise_seed, std::string("ema/") + stem + ".csv",
                    std::string("wav/") + stem + ".wav"};
    save_ema_csv(dir / e.ema_path, tok.trajectory);
    save_wav(dir / e.wav_path, tok.waveform);
    manifest << manifest_line(e) << '\n';
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Loads every token listed in `dir/manifest.jsonl`.
inline std::vector<Token> load_corpus(const std::filesystem::path& dir) {
  auto entries = read_manifest(dir / "manifest.jsonl");
  std::vector<Token> tokens(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    tokens[i].word_index = e.word_index;
    tokens[i].token_id = e.token_id;
    tokens[i].noise_seed = e.noise_seed;
    tokens[i].trajectory = load_ema_csv(dir / e.ema_path);
    tokens[i].waveform = load_wav(dir / e.wav_path);
  }
  return tokens;
}

}  // namespace ciwagan
