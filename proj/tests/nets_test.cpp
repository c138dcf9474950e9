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
#include <vector>

#include "ciwagan/gradcheck.hpp"
#include "ciwagan/gradsuite.hpp"
#include "ciwagan/nets.hpp"

namespace ciwagan {
namespace {

Architecture small_arch(std::size_t codes = 9) {
  Architecture a;
  a.num_codes = codes;
  a.width_divisor = 64;
  return a;
}

Tensor random_waves(std::size_t batch, Rng& rng) {
  std::vector<double> v(batch * kSamples);
  for (auto& x : v) x = rng.uniform(-0.8, 0.8);
  return Tensor({batch, kSamples}, std::move(v));
}

TEST(SampleLatent, FixedCodesAndScale) {
  Rng rng(1);
  auto s = sample_latent(rng, 2, 9, 1.0, 8);
  ASSERT_EQ(s.z_dim() + s.num_codes, 100u);
  for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(s.c[j], j == 8 ? 1.0 : 0.0);
  auto t = sample_latent(rng, 1, 9, 20.0, 8);
  for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(t.c[j], j == 8 ? 20.0 : 0.0);
  for (double z : s.z) {
    EXPECT_GE(z, -1.0);
    EXPECT_LE(z, 1.0);
  }
  EXPECT_THROW(sample_latent(rng, 1, 9, 1.0, 9), std::out_of_range);
  EXPECT_THROW(sample_latent(rng, 1, 1), std::invalid_argument);
  EXPECT_THROW(sample_latent(rng, 1, 9, 0.0), std::invalid_argument);
}

TEST(SampleLatent, TrainingCodesAreOneHotAndSeeded) {
  Rng a(5), b(5);
  auto x = sample_latent(a, 64, 3), y = sample_latent(b, 64, 3);
  EXPECT_EQ(x.z, y.z);
  EXPECT_EQ(x.codes, y.codes);
  for (std::size_t i = 0; i < 64; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 3; ++j) total += x.c[i * 3 + j];
    EXPECT_EQ(total, 1.0);
    EXPECT_EQ(x.c[i * 3 + static_cast<std::size_t>(x.codes[i])], 1.0);
  }
  EXPECT_EQ(x.as_tensor().shape(), (Shape{64, 100}));
}

TEST(SampleLatent, WithCodeKeepsZ) {
  Rng rng(2);
  auto base = sample_latent(rng, 4, 9);
  auto probe = with_code(base, 3, 15.0);
  EXPECT_EQ(probe.z, base.z);
  for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(probe.c[b * 9 + 3], 15.0);
  EXPECT_THROW(with_code(base, 9, 1.0), std::out_of_range);
}

TEST(Generator, ZeroParametersGiveNeutralTrajectory) {
  Rng rng(3);
  auto g = init_generator(small_arch(), rng, true);
  auto out = generator_forward(g, sample_latent(rng, 2, 9).as_tensor());
  ASSERT_EQ(out.shape(), (Shape{2, 256, 13}));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_EQ(out[i], (i % 13 == 12) ? 0.5 : 0.0);
  }
}

TEST(Generator, BatchShapeAndRange) {
  Rng rng(4);
  auto g = init_generator(small_arch(), rng);
  auto out = generator_forward(g, sample_latent(rng, 4, 9).as_tensor());
  ASSERT_EQ(out.shape(), (Shape{4, 256, 13}));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (i % 13 == 12) {
      EXPECT_GT(out[i], 0.0);
      EXPECT_LT(out[i], 1.0);
    } else {
      EXPECT_GT(out[i], -1.0);
      EXPECT_LT(out[i], 1.0);
    }
  }
  EXPECT_THROW(generator_forward(g, Tensor::zeros({1, 99})), ShapeError);
}

TEST(Generator, ContinuousInCodeScale) {
  Rng rng(6);
  auto g = init_generator(small_arch(), rng);
  auto base = sample_latent(rng, 1, 9);
  auto at = [&](double s) { return generator_forward(g, with_code(base, 2, s).as_tensor()); };
  for (double s : {1.0, 15.0, 20.0}) {
    auto a = at(s), b = at(s + 1e-6);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    EXPECT_LT(diff, 1e-3) << s;
  }
}

TEST(Critic, ZeroParametersScoreZeroAndShape) {
  Rng rng(7);
  auto d = init_critic(small_arch(), rng, true);
  auto s = critic_forward(d, random_waves(3, rng));
  ASSERT_EQ(s.shape(), (Shape{3}));
  for (double v : s.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(critic_forward(d, Tensor::zeros({1, 20479})), ShapeError);
}

TEST(Critic, FinalLayerIsLinear) {
  Rng rng(8);
  auto d = init_critic(small_arch(), rng);
  auto x = random_waves(1, rng);
  const double before = critic_forward(d, x).item();
  auto w = d.out_weight.mutable_data();
  const std::size_t unit = 5;
  // Contribution of the unit = activation * weight; recover activation by
  // zeroing the weight.
  const double saved = w[unit];
  w[unit] = 0.0;
  const double without = critic_forward(d, x).item();
  w[unit] = 2.0 * saved;
  const double doubled = critic_forward(d, x).item();
  EXPECT_NEAR(doubled - without, 2.0 * (before - without), 1e-12);
}

TEST(QNetwork, ZeroParametersGiveUniformPosterior) {
  Rng rng(9);
  auto q = init_q(small_arch(), rng, true);
  auto logits = q_forward(q, random_waves(2, rng));
  ASSERT_EQ(logits.shape(), (Shape{2, 9}));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(QNetwork, BatchItemsAreIndependent) {
  Rng rng(10);
  auto q = init_q(small_arch(), rng);
  auto x = random_waves(3, rng);
  std::vector<double> swapped(x.data().begin(), x.data().end());
  std::swap_ranges(swapped.begin(), swapped.begin() + kSamples, swapped.begin() + 2 * kSamples);
  auto a = q_forward(q, x), b = q_forward(q, Tensor({3, kSamples}, swapped));
  for (std::size_t j = 0; j < 9; ++j) {
    EXPECT_NEAR(a[j], b[2 * 9 + j], 1e-12);
    EXPECT_NEAR(a[2 * 9 + j], b[j], 1e-12);
    EXPECT_NEAR(a[9 + j], b[9 + j], 1e-12);
  }
}

TEST(Losses, CriticLossExamples) {
  auto t = [](std::vector<double> v) { return Tensor({v.size()}, v); };
  EXPECT_EQ(critic_loss(t({1, 2}), t({1, 2}), Tensor::scalar(0)).item(), 0.0);
  EXPECT_EQ(critic_loss(t({1, 1}), t({0, 0}), Tensor::scalar(0)).item(), -1.0);
  EXPECT_EQ(critic_loss(t({3}), t({3}), Tensor::scalar(0.5), 10.0).item(), 5.0);
}

TEST(Losses, CriticLossIsMonotone) {
  auto t = [](std::vector<double> v) { return Tensor({v.size()}, v); };
  const double base = critic_loss(t({0.5, 0.1}), t({0.2, 0.3}), Tensor::scalar(0.1)).item();
  EXPECT_LT(critic_loss(t({0.6, 0.1}), t({0.2, 0.3}), Tensor::scalar(0.1)).item(), base);
  EXPECT_LT(critic_loss(t({0.5, 0.1}), t({0.1, 0.3}), Tensor::scalar(0.1)).item(), base);
}

TEST(Losses, GeneratorLossExamples) {
  const std::vector<int> codes{0, 4};
  auto uniform = generator_loss(Tensor::zeros({2}), Tensor::zeros({2, 9}), codes);
  EXPECT_NEAR(uniform.item(), std::log(9.0), 1e-12);
  std::vector<double> l(18, 0.0);
  l[0] = 1000.0;
  l[9 + 4] = 1000.0;
  auto perfect = generator_loss(Tensor({2}, {2.0, 2.0}), Tensor({2, 9}, l), codes);
  EXPECT_NEAR(perfect.item(), -2.0, 1e-12);
}

TEST(Losses, QLossShiftInvariant) {
  Rng rng(11);
  std::vector<double> l(2 * 9);
  for (auto& v : l) v = rng.uniform(-2, 2);
  std::vector<double> shifted = l;
  for (std::size_t j = 0; j < 9; ++j) shifted[j] += 3.7;
  const std::vector<int> codes{1, 7};
  EXPECT_NEAR(softmax_cross_entropy(Tensor({2, 9}, l), codes).item(),
              softmax_cross_entropy(Tensor({2, 9}, shifted), codes).item(), 1e-12);
}

TEST(GradientPenalty, UnitAndZeroGradients) {
  const double unit = 1.0 / std::sqrt(static_cast<double>(kSamples));
  EXPECT_NEAR(penalty_from_gradients(Tensor::full({2, kSamples}, unit)).item(), 0.0, 1e-12);
  EXPECT_EQ(penalty_from_gradients(Tensor::zeros({2, kSamples})).item(), 1.0);

  Rng rng(12);
  auto constant = init_critic(small_arch(), rng, true);
  EXPECT_EQ(gradient_penalty(constant, random_waves(2, rng), random_waves(2, rng), rng).item(), 1.0);
}

TEST(GradientPenalty, InputGradientMatchesFiniteDifferences) {
  // The critic is piecewise linear, so central differences with a small
  // step recover the input gradient on every coordinate.
  Rng rng(13);
  auto d = init_critic(small_arch(), rng);
  for (auto& b : d.conv_bias) {
    for (auto& v : b.mutable_data()) v = rng.uniform(-0.1, 0.1);
  }
  auto x = random_waves(1, rng);
  auto analytic = critic_input_gradient(d, x);

  const double h = 1e-6;
  const std::size_t chunk = 64;
  std::vector<double> numeric(kSamples);
  for (std::size_t start = 0; start < kSamples; start += chunk) {
    std::vector<double> batch(2 * chunk * kSamples);
    for (std::size_t j = 0; j < chunk; ++j) {
      for (int sgn = 0; sgn < 2; ++sgn) {
        double* row = batch.data() + (2 * j + sgn) * kSamples;
        std::copy(x.data().begin(), x.data().end(), row);
        row[start + j] += sgn == 0 ? h : -h;
      }
    }
    auto s = critic_forward(d, Tensor({2 * chunk, kSamples}, std::move(batch)));
    for (std::size_t j = 0; j < chunk; ++j) numeric[start + j] = (s[2 * j] - s[2 * j + 1]) / (2 * h);
  }
  double norm_a = 0, norm_n = 0, worst = 0;
  for (std::size_t i = 0; i < kSamples; ++i) {
    norm_a += analytic[i] * analytic[i];
    norm_n += numeric[i] * numeric[i];
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
  }
  EXPECT_LT(worst, 1e-6);
  const double penalty_oracle = std::pow(std::sqrt(norm_n) - 1.0, 2.0);
  EXPECT_NEAR(penalty_from_gradients(analytic).item(), penalty_oracle, 1e-4);
}

TEST(GradientPenalty, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(14);
  auto d = init_critic(small_arch(), rng);
  auto real = random_waves(2, rng), fake = random_waves(2, rng);
  auto loss = [&] {
    Rng eps(99);
    return gradient_penalty(d, real, fake, eps);
  };
  auto res = check_gradients(loss, d.tensors(), 6, rng, 1e-5, 1e-6, true);
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst;
}

TEST(GeneratorLoss, EndToEndGradientThroughSynthesizer) {
  Rng rng(15);
  const auto arch = small_arch(3);
  auto g = init_generator(arch, rng);
  auto d = init_critic(arch, rng);
  auto q = init_q(arch, rng);
  ReferenceSynthesizer synth;
  auto latent = sample_latent(rng, 2, 3);
  const std::vector<std::uint64_t> seeds{11, 12};
  auto loss = [&] {
    Tensor waves = synth.synthesize(generator_forward(g, latent.as_tensor()), seeds);
    return generator_loss(critic_forward(d, waves), q_forward(q, waves), latent.codes);
  };
  auto res = check_gradients(loss, g.tensors(), 3, rng, 1e-6, 1e-6, true);
  EXPECT_LT(res.max_relative_error, 1e-3) << res.worst;
}

TEST(GradientSuites, AllWithinTolerance) {
  const auto results = run_gradient_suites(1);
  ASSERT_EQ(results.size(), 11u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " " << r.max_relative_error << " at " << r.worst;
    EXPECT_GT(r.probes, 0u) << r.name;
  }
  EXPECT_EQ(results.back().tolerance, 1e-3);
}

TEST(Architecture, FullWidthShapes) {
  Rng rng(16);
  Architecture arch;
  auto g = init_generator(arch, rng);
  ShapeTrace gt;
  generator_forward(g, sample_latent(rng, 1, 9).as_tensor(), &gt);
  const ShapeTrace g_expected{{100}, {16, 1024}, {32, 512}, {64, 512}, {128, 256}, {128, 256}, {256, 13}};
  EXPECT_EQ(gt, g_expected);

  auto d = init_critic(arch, rng);
  auto q = init_q(arch, rng);
  ShapeTrace dt, qt;
  auto x = random_waves(1, rng);
  critic_forward(d, x, &dt);
  q_forward(q, x, &qt);
  ShapeTrace trunk{{20480, 1}, {5120, 64}, {1280, 128}, {320, 256}, {80, 512}, {20, 1024}};
  ShapeTrace d_expected = trunk, q_expected = trunk;
  d_expected.push_back({1});
  q_expected.push_back({9});
  EXPECT_EQ(dt, d_expected);
  EXPECT_EQ(qt, q_expected);
  EXPECT_EQ(d.out_weight.shape(), (Shape{20480, 1}));
  EXPECT_EQ(g.up_kernel[0].shape(), (Shape{12, 1024, 512}));
  EXPECT_EQ(d.conv_kernel[4].shape(), (Shape{16, 512, 1024}));
}

TEST(Architecture, RejectsBadGeometry) {
  Architecture a;
  a.width_divisor = 3;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  Architecture b;
  b.generator_strides = {2, 2, 2, 2, 2};
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace ciwagan
