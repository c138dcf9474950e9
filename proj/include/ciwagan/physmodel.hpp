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

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciwagan/gradcheck.hpp"
#include "ciwagan/ops.hpp"
#include "ciwagan/parallel.hpp"
#include "ciwagan/rng.hpp"
#include "ciwagan/tensor.hpp"
#include "ciwagan/vecmath.hpp"

namespace ciwagan {

inline constexpr std::size_t kFrames = 256;
inline constexpr std::size_t kEmaChannels = 12;
inline constexpr std::size_t kChannels = 13;  // 12 EMA + voicing
inline constexpr std::size_t kVoicing = 12;   // 0-based channel index
inline constexpr std::size_t kSamples = 20480;
inline constexpr std::size_t kSampleRate = 16000;
inline constexpr std::size_t kUpsample = kSamples / kFrames;  // 80, i.e. 200 Hz frames

/// 256 frames x 13 channels, frame-major.
struct Trajectory {
  std::vector<double> values = std::vector<double>(kFrames * kChannels, 0.0);

  double& at(std::size_t frame, std::size_t channel) { return values[frame * kChannels + channel]; }
  double at(std::size_t frame, std::size_t channel) const {
    return values[frame * kChannels + channel];
  }
  std::vector<double> channel(std::size_t c) const {
    std::vector<double> out(kFrames);
    for (std::size_t f = 0; f < kFrames; ++f) out[f] = at(f, c);
    return out;
  }
};

struct Waveform {
  std::vector<double> samples = std::vector<double>(kSamples, 0.0);
};

inline void validate(const Trajectory& t) {
  if (t.values.size() != kFrames * kChannels) {
    throw std::invalid_argument("trajectory must hold 256x13 values, got " +
                                std::to_string(t.values.size()));
  }
  for (std::size_t f = 0; f < kFrames; ++f) {
    const double v = t.at(f, kVoicing);
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("voicing outside [0,1] at frame " + std::to_string(f));
    }
  }
}

/// Stacks trajectories into a [batch x 256 x 13] tensor.
inline Tensor stack(std::span<const Trajectory> trajs) {
  std::vector<double> v;
  v.reserve(trajs.size() * kFrames * kChannels);
  for (const auto& t : trajs) v.insert(v.end(), t.values.begin(), t.values.end());
  return Tensor({trajs.size(), kFrames, kChannels}, std::move(v));
}

inline Trajectory trajectory_at(const Tensor& batch, std::size_t item) {
  Trajectory t;
  const auto d = batch.data().subspan(item * kFrames * kChannels, kFrames * kChannels);
  t.values.assign(d.begin(), d.end());
  return t;
}

inline Waveform waveform_at(const Tensor& batch, std::size_t item) {
  Waveform w;
  const auto d = batch.data().subspan(item * kSamples, kSamples);
  w.samples.assign(d.begin(), d.end());
  return w;
}

/// Linear interpolation between frames at t = k / factor, holding the last
/// frame beyond the end.
inline std::vector<double> upsample_linear(std::span<const double> frames, std::size_t factor = kUpsample) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  const std::size_t n = frames.size();
  std::vector<double> out(n * factor);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t f = k / factor;
    const double frac = static_cast<double>(k % factor) / static_cast<double>(factor);
    out[k] = f + 1 < n ? (1.0 - frac) * frames[f] + frac * frames[f + 1] : frames[n - 1];
  }
  return out;
}

/// Articulatory-to-acoustic map A: [batch x 256 x 13] -> [batch x 20480],
/// differentiable with respect to the trajectory.
class PhysicalModel {
 public:
  virtual ~PhysicalModel() = default;
  virtual Tensor synthesize(const Tensor& trajectories,
                            std::span<const std::uint64_t> noise_seeds) const = 0;
};

/// Three-oscillator source/mix synthesizer. Each group of four EMA channels
/// steers one oscillator's frequency; the voicing channel crossfades the
/// harmonic source with white noise.
class ReferenceSynthesizer : public PhysicalModel {
 public:
  struct Band {
    double lo;
    double hi;
  };
  static constexpr std::array<Band, 3> kBands{{{200.0, 900.0}, {800.0, 2500.0}, {1500.0, 3500.0}}};
  static constexpr double kGain = 6.0 / 11.0;  // 1 / (1 + 1/2 + 1/3)
  static constexpr double kNoiseLevel = 0.3;

  explicit ReferenceSynthesizer(bool with_noise = true) : with_noise_(with_noise) {}

  Tensor synthesize(const Tensor& trajectories,
                    std::span<const std::uint64_t> noise_seeds) const override {
    if (trajectories.rank() != 3 || trajectories.dim(1) != kFrames ||
        trajectories.dim(2) != kChannels) {
      throw ShapeError("synthesize expects [batch x 256 x 13], got " +
                       shape_str(trajectories.shape()));
    }
    const std::size_t batch = trajectories.dim(0);
    if (noise_seeds.size() != batch) {
      throw std::invalid_argument("synthesize: " + std::to_string(noise_seeds.size()) +
                                  " noise seeds for batch of " + std::to_string(batch));
    }
    auto cache = std::make_shared<std::vector<ItemCache>>(batch);
    std::vector<double> y(batch * kSamples);
    parallel_for(batch, [&](std::size_t b) {
      forward_item(trajectories.data().subspan(b * kFrames * kChannels, kFrames * kChannels),
                   noise_seeds[b], (*cache)[b], std::span<double>(y).subspan(b * kSamples, kSamples));
    });
    Tensor tin = trajectories;
    return detail::make_result({batch, kSamples}, std::move(y), {&trajectories},
                               [tin, cache, batch](detail::Node& out) mutable {
                                 auto& g = tin.node()->grad_buffer();
                                 parallel_for(batch, [&](std::size_t b) {
                                   backward_item(std::span<const double>(out.grad).subspan(b * kSamples, kSamples),
                                                 (*cache)[b],
                                                 std::span<double>(g).subspan(b * kFrames * kChannels,
                                                                              kFrames * kChannels));
                                 });
                               });
  }

  Waveform synthesize(const Trajectory& t, std::uint64_t noise_seed) const {
    const std::uint64_t seeds[1] = {noise_seed};
    Tensor out = synthesize(stack(std::span<const Trajectory>(&t, 1)), seeds);
    return waveform_at(out, 0);
  }

  bool with_noise() const { return with_noise_; }

 private:
  struct ItemCache {
    std::vector<double> voicing;                 // v(n)
    std::vector<double> harmonic;                // h(n)
    std::vector<double> noise;                   // 0.3 * eps(n), or empty
    std::array<std::vector<double>, 3> cosine;   // cos(phi_i(n))
    std::array<std::vector<double>, 3> slope;    // dF_i/dg_i at n
  };

  static std::vector<double> noise_samples(std::uint64_t seed) {
    // Box-Muller, using both outputs of each draw pair.
    constexpr std::size_t kPairs = kSamples / 2;
    Rng rng(seed);
    std::vector<double> radius(kPairs), angle(kPairs), c(kPairs), s(kPairs);
    for (std::size_t k = 0; k < kPairs; ++k) {
      double u1 = rng.uniform();
      const double u2 = rng.uniform();
      radius[k] = u1 <= 0.0 ? 0x1.0p-53 : u1;
      angle[k] = 2.0 * std::numbers::pi * u2;
    }
    vecmath::log(radius, radius);
    vecmath::cos(angle, c);
    vecmath::sin(angle, s);
    std::vector<double> e(kSamples);
    for (std::size_t k = 0; k < kPairs; ++k) {
      const double r = kNoiseLevel * std::sqrt(-2.0 * radius[k]);
      e[2 * k] = r * c[k];
      e[2 * k + 1] = r * s[k];
    }
    return e;
  }

  void forward_item(std::span<const double> traj, std::uint64_t seed, ItemCache& c,
                    std::span<double> y) const {
    std::array<std::vector<double>, 3> group;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> means(kFrames);
      for (std::size_t f = 0; f < kFrames; ++f) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += traj[f * kChannels + 4 * i + j];
        means[f] = 0.25 * s;
      }
      group[i] = upsample_linear(means);
    }
    std::vector<double> vframes(kFrames);
    for (std::size_t f = 0; f < kFrames; ++f) vframes[f] = traj[f * kChannels + kVoicing];
    c.voicing = upsample_linear(vframes);
    if (with_noise_) c.noise = noise_samples(seed);
    c.harmonic.assign(kSamples, 0.0);
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    constexpr double kStep = kTwoPi / static_cast<double>(kSampleRate);
    std::vector<double> buf(kSamples), sn(kSamples);
    for (std::size_t i = 0; i < 3; ++i) {
      c.cosine[i].resize(kSamples);
      c.slope[i].resize(kSamples);
      const double span = kBands[i].hi - kBands[i].lo;
      const double weight = 1.0 / static_cast<double>(i + 1);
      for (std::size_t n = 0; n < kSamples; ++n) buf[n] = -2.0 * group[i][n];
      vecmath::exp(buf, buf);
      double phi = 0.0;
      for (std::size_t n = 0; n < kSamples; ++n) {
        const double s = 1.0 / (1.0 + buf[n]);
        phi += kStep * (kBands[i].lo + span * s);
        if (phi >= kTwoPi) phi -= kTwoPi;
        c.slope[i][n] = span * 2.0 * s * (1.0 - s);
        buf[n] = phi;
      }
      vecmath::sin(buf, sn);
      vecmath::cos(buf, c.cosine[i]);
      for (std::size_t n = 0; n < kSamples; ++n) c.harmonic[n] += weight * sn[n];
    }
    for (std::size_t n = 0; n < kSamples; ++n) {
      c.harmonic[n] *= kGain;
      const double e = c.noise.empty() ? 0.0 : c.noise[n];
      y[n] = c.voicing[n] * c.harmonic[n] + (1.0 - c.voicing[n]) * e;
    }
  }

  static void backward_item(std::span<const double> gy, const ItemCache& c, std::span<double> gt) {
    constexpr double kStep = 2.0 * std::numbers::pi / static_cast<double>(kSampleRate);
    std::vector<double> gv(kSamples);
    for (std::size_t n = 0; n < kSamples; ++n) {
      const double e = c.noise.empty() ? 0.0 : c.noise[n];
      gv[n] = gy[n] * (c.harmonic[n] - e);
    }
    add_downsampled(gv, gt, kVoicing, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
      // dL/dF(n) = step * sum_{m >= n} dL/dphi(m)
      std::vector<double> gg(kSamples);
      double tail = 0.0;
      const double w = kGain / static_cast<double>(i + 1);
      for (std::size_t n = kSamples; n-- > 0;) {
        tail += gy[n] * c.voicing[n] * w * c.cosine[i][n];
        gg[n] = kStep * tail * c.slope[i][n];
      }
      for (std::size_t j = 0; j < 4; ++j) add_downsampled(gg, gt, 4 * i + j, 0.25);
    }
  }

  // Adjoint of upsample_linear for one channel.
  static void add_downsampled(std::span<const double> g, std::span<double> gt, std::size_t channel,
                              double weight) {
    for (std::size_t k = 0; k < kSamples; ++k) {
      const std::size_t f = k / kUpsample;
      const double frac = static_cast<double>(k % kUpsample) / static_cast<double>(kUpsample);
      if (f + 1 < kFrames) {
        gt[f * kChannels + channel] += weight * (1.0 - frac) * g[k];
        gt[(f + 1) * kChannels + channel] += weight * frac * g[k];
      } else {
        gt[(kFrames - 1) * kChannels + channel] += weight * g[k];
      }
    }
  }

  bool with_noise_;
};

/// Max relative error between the analytic gradient of sum(synthesize(traj))
/// and central differences at `probe_count` random trajectory entries.
inline double jacobian_check(const PhysicalModel& model, const Trajectory& traj,
                             std::size_t probe_count, Rng& rng, std::uint64_t noise_seed = 1,
                             double h = 1e-5) {
  Tensor t = stack(std::span<const Trajectory>(&traj, 1));
  t.set_requires_grad(true);
  const std::uint64_t seeds[1] = {noise_seed};
  auto loss = [&] { return sum(model.synthesize(t, seeds)); };
  return check_gradients(loss, {t}, probe_count, rng, h).max_relative_error;
}

}  // namespace ciwagan
