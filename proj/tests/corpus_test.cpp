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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "ciwagan/corpus.hpp"

namespace ciwagan {
namespace {

double l2(const Trajectory& a, const Trajectory& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return std::sqrt(s);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ciwagan_corpus_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Template, Deterministic) {
  auto a = make_template(7, 3), b = make_template(7, 3);
  EXPECT_EQ(a.trajectory.values, b.trajectory.values);
  EXPECT_THROW(make_template(7, 9), std::out_of_range);
}

TEST(Template, DistinctWordsAcrossSeeds) {
  std::size_t far = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (std::size_t i = 0; i < 9; ++i) {
      for (std::size_t j = i + 1; j < 9; ++j) {
        const double d = l2(make_template(seed, i).trajectory, make_template(seed, j).trajectory);
        EXPECT_GT(d, 0.0);
        far += d > 0.1;
        ++total;
      }
    }
  }
  EXPECT_EQ(far, total);
}

TEST(Template, VoicingSchedule) {
  auto t = make_template(1, 0).trajectory;
  EXPECT_EQ(t.at(128, kVoicing), 1.0);
  EXPECT_EQ(t.at(0, kVoicing), 0.0);
  EXPECT_EQ(t.at(25, kVoicing), 0.0);    // u = 0.098
  EXPECT_EQ(t.at(255, kVoicing), 0.0);
  EXPECT_NEAR(t.at(32, kVoicing), (32.0 / 255.0 - 0.10) / 0.05, 1e-12);
  for (std::size_t f = 39; f <= 216; ++f) EXPECT_EQ(t.at(f, kVoicing), 1.0) << f;
  validate(t);
}

TEST(Template, ControlPointsInterpolated) {
  auto w = make_template(3, 2);
  for (std::size_t c = 0; c < kEmaChannels; ++c) {
    EXPECT_EQ(w.trajectory.at(0, c), w.control[c][0]);
    EXPECT_EQ(w.trajectory.at(255, c), w.control[c][4]);
    for (double v : w.control[c]) {
      EXPECT_GE(v, -0.8);
      EXPECT_LT(v, 0.8);
    }
  }
}

TEST(Token, ZeroJitterMatchesTemplate) {
  ReferenceSynthesizer model;
  auto w = make_template(2, 4);
  Rng rng(1);
  auto tok = render_token(w, rng, model, 77, 0.0, 0.0);
  EXPECT_EQ(tok.trajectory.values, w.trajectory.values);
  EXPECT_EQ(tok.waveform.samples, model.synthesize(w.trajectory, 77).samples);
  EXPECT_EQ(tok.waveform.samples.size(), kSamples);
}

TEST(Token, JitterPerturbsWithinBounds) {
  ReferenceSynthesizer model;
  auto w = make_template(2, 4);
  Rng rng(1);
  auto tok = render_token(w, rng, model, 77);
  const double d = l2(tok.trajectory, w.trajectory);
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 5.0);
  validate(tok.trajectory);
}

TEST(Corpus, PureFunctionOfSpec) {
  CorpusSpec spec;
  spec.tokens_per_word = 3;
  spec.num_words = 2;
  auto a = synthesize_corpus(spec), b = synthesize_corpus(spec);
  ASSERT_EQ(a.tokens.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.tokens[i].waveform.samples, b.tokens[i].waveform.samples);
    EXPECT_EQ(a.tokens[i].word_index, i / 3);
    EXPECT_EQ(a.tokens[i].token_id, i % 3);
  }
  EXPECT_NE(a.tokens[0].noise_seed, a.tokens[1].noise_seed);

  auto d1 = scratch("pure1"), d2 = scratch("pure2");
  write_corpus(a, d1);
  write_corpus(b, d2);
  for (const char* f : {"manifest.jsonl", "ema/w1_t0002.csv", "wav/w0_t0001.wav"}) {
    std::ifstream x(d1 / f, std::ios::binary), y(d2 / f, std::ios::binary);
    std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    EXPECT_FALSE(sx.empty());
    EXPECT_EQ(sx, sy) << f;
  }
  auto loaded = load_corpus(d1);
  ASSERT_EQ(loaded.size(), 6u);
  EXPECT_EQ(loaded[4].noise_seed, a.tokens[4].noise_seed);
  for (std::size_t n = 0; n < kSamples; ++n) {
    ASSERT_EQ(loaded[4].waveform.samples[n], pcm16(a.tokens[4].waveform.samples[n]) / 32767.0);
  }
}

TEST(EmaCsv, RoundTrip) {
  auto t = make_template(5, 1).trajectory;
  Rng rng(2);
  for (std::size_t i = 0; i < 12; ++i) t.values[i] = rng.uniform(-1, 1);
  std::stringstream ss;
  write_ema_csv(ss, t);
  auto back = read_ema_csv(ss);
  for (std::size_t i = 0; i < t.values.size(); ++i) EXPECT_NEAR(back.values[i], t.values[i], 1e-6);
}

TEST(EmaCsv, RejectsMissingVoicingColumn) {
  std::stringstream ss;
  ss << "frame,ll_x,ll_y,tt_x,tt_y,li_x,li_y,ul_x,ul_y,tb_x,tb_y,td_x,td_y\n";
  for (int f = 0; f < 256; ++f) {
    ss << f;
    for (int c = 0; c < 12; ++c) ss << ",0";
    ss << "\n";
  }
  try {
    read_ema_csv(ss);
    FAIL() << "accepted a 12-channel file";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
}

TEST(EmaCsv, RejectsBadRows) {
  std::stringstream good;
  write_ema_csv(good, Trajectory{});
  std::string text = good.str();
  // Short file.
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_ema_csv(truncated), FormatError);
  // Non-numeric cell on data line 3 (file line 4).
  std::string bad = text;
  const auto pos = bad.find("\n2,") + 3;
  bad.replace(pos, 1, "x");
  std::stringstream ss(bad);
  try {
    read_ema_csv(ss);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Wav, FormatContract) {
  Waveform w;
  w.samples[0] = 1.0;
  w.samples[1] = -1.0;
  w.samples[2] = 2.0;
  w.samples[3] = -2.0;
  w.samples[4] = 0.5;
  const std::string bytes = encode_wav(w);
  ASSERT_EQ(bytes.size(), 44u + 2 * kSamples);
  auto sample = [&](std::size_t n) {
    return static_cast<std::int16_t>(static_cast<unsigned char>(bytes[44 + 2 * n]) |
                                     (static_cast<unsigned char>(bytes[45 + 2 * n]) << 8));
  };
  EXPECT_EQ(sample(0), 32767);
  EXPECT_EQ(sample(1), -32767);
  EXPECT_EQ(sample(2), 32767);
  EXPECT_EQ(sample(3), -32768);
  EXPECT_EQ(sample(4), 16384);
  auto back = decode_wav(bytes);
  EXPECT_EQ(back.samples[0], 1.0);
  EXPECT_NEAR(back.samples[4], 0.5, 1.0 / 32767);
}

TEST(Wav, RejectsWrongSampleCount) {
  std::string fixed = encode_wav(Waveform{});
  // Declare one sample fewer in the data chunk header.
  const std::uint32_t short_size = 2 * (kSamples - 1);
  for (int i = 0; i < 4; ++i) fixed[40 + i] = static_cast<char>((short_size >> (8 * i)) & 0xff);
  try {
    decode_wav(fixed);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 40"), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode_wav("RIFX"), FormatError);
}

TEST(Manifest, RejectsMalformedLine) {
  auto d = scratch("manifest");
  {
    std::ofstream os(d / "manifest.jsonl");
    os << manifest_line({0, 0, 5, "a.csv", "a.wav"}) << "\n{\"word_index\": 1}\n";
  }
  try {
    read_manifest(d / "manifest.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace ciwagan
