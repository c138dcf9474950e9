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
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ciwagan/ops.hpp"
#include "ciwagan/physmodel.hpp"
#include "ciwagan/rng.hpp"
#include "ciwagan/tensor.hpp"

namespace ciwagan {

inline constexpr std::size_t kLatentDim = 100;  // [z || c]
inline constexpr double kLeakySlope = 0.2;

// ---------------------------------------------------------------------------
// Latent space

struct LatentBatch {
  std::size_t batch = 0;
  std::size_t num_codes = 0;
  std::vector<double> z;   // batch x z_dim, each in [-1, 1]
  std::vector<double> c;   // batch x num_codes, scaled one-hot
  std::vector<int> codes;  // index of the hot entry per item

  std::size_t z_dim() const { return kLatentDim - num_codes; }

  /// [batch x 100] = [z || c] per row.
  Tensor as_tensor() const {
    std::vector<double> v;
    v.reserve(batch * kLatentDim);
    const std::size_t zd = z_dim();
    for (std::size_t b = 0; b < batch; ++b) {
      v.insert(v.end(), z.begin() + static_cast<std::ptrdiff_t>(b * zd),
               z.begin() + static_cast<std::ptrdiff_t>((b + 1) * zd));
      v.insert(v.end(), c.begin() + static_cast<std::ptrdiff_t>(b * num_codes),
               c.begin() + static_cast<std::ptrdiff_t>((b + 1) * num_codes));
    }
    return Tensor({batch, kLatentDim}, std::move(v));
  }
};

/// Replaces the codes of `base` while keeping its z rows: every item gets
/// c = code_scale * one_hot(code).
inline LatentBatch with_code(const LatentBatch& base, int code, double code_scale) {
  if (code < 0 || static_cast<std::size_t>(code) >= base.num_codes) {
    throw std::out_of_range("code " + std::to_string(code) + " outside [0, " +
                            std::to_string(base.num_codes) + ")");
  }
  LatentBatch out = base;
  std::fill(out.c.begin(), out.c.end(), 0.0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    out.c[b * out.num_codes + static_cast<std::size_t>(code)] = code_scale;
    out.codes[b] = code;
  }
  return out;
}

/// z ~ Uniform(-1, 1)^(100 - num_codes); c = code_scale * one_hot(code) with
/// the code uniform over [0, num_codes) unless `fixed_code` is given.
inline LatentBatch sample_latent(Rng& rng, std::size_t batch, std::size_t num_codes = 9,
                                 double code_scale = 1.0, std::optional<int> fixed_code = {}) {
  if (num_codes < 2 || num_codes >= kLatentDim) {
    throw std::invalid_argument("num_codes must be in [2, 100), got " + std::to_string(num_codes));
  }
  if (!(code_scale > 0.0)) throw std::invalid_argument("code_scale must be positive");
  if (fixed_code && (*fixed_code < 0 || static_cast<std::size_t>(*fixed_code) >= num_codes)) {
    throw std::out_of_range("fixed_code " + std::to_string(*fixed_code) + " outside [0, " +
                            std::to_string(num_codes) + ")");
  }
  LatentBatch s;
  s.batch = batch;
  s.num_codes = num_codes;
  s.z.resize(batch * s.z_dim());
  s.c.assign(batch * num_codes, 0.0);
  s.codes.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < s.z_dim(); ++j) s.z[b * s.z_dim() + j] = rng.uniform(-1.0, 1.0);
    const int code = fixed_code ? *fixed_code : static_cast<int>(rng.below(num_codes));
    s.codes[b] = code;
    s.c[b * num_codes + static_cast<std::size_t>(code)] = code_scale;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Architecture

/// Layer geometry. With width_divisor 1 every layer matches the reference
/// table; larger divisors shrink channel counts (never lengths) for
/// desk-scale training.
struct Architecture {
  std::size_t num_codes = 9;
  std::size_t width_divisor = 1;
  std::size_t generator_taps = 12;
  std::array<std::size_t, 5> generator_strides{2, 2, 2, 1, 2};
  std::size_t conv_taps = 16;
  std::size_t conv_stride = 4;

  static constexpr std::size_t kSeedLength = 16;
  static constexpr std::array<std::size_t, 6> kGeneratorChannels{1024, 512, 512, 256, 256, 13};
  static constexpr std::array<std::size_t, 5> kConvChannels{64, 128, 256, 512, 1024};

  std::size_t generator_channels(std::size_t layer) const {
    return layer == 5 ? kChannels : kGeneratorChannels[layer] / width_divisor;
  }
  std::size_t conv_channels(std::size_t layer) const { return kConvChannels[layer] / width_divisor; }
  std::size_t conv_final_length() const {
    std::size_t len = kSamples;
    for (int i = 0; i < 5; ++i) len /= conv_stride;
    return len;
  }

  void validate() const {
    if (width_divisor == 0 || 64 % width_divisor != 0) {
      throw std::invalid_argument("width_divisor must divide 64, got " + std::to_string(width_divisor));
    }
    std::size_t frames = kSeedLength;
    for (auto s : generator_strides) {
      if (s == 0 || generator_taps < s) throw std::invalid_argument("generator taps shorter than stride");
      frames *= s;
    }
    if (frames != kFrames) {
      throw std::invalid_argument("generator strides give " + std::to_string(frames) + " frames, need 256");
    }
    if (conv_taps < conv_stride) throw std::invalid_argument("conv taps shorter than stride");
    std::size_t len = kSamples;
    for (int i = 0; i < 5; ++i) {
      if (len % conv_stride != 0) throw std::invalid_argument("conv stride does not divide 20480 evenly");
      len /= conv_stride;
    }
  }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v), true);
}

struct GeneratorParams {
  Architecture arch;
  Tensor fc_weight;  // 100 x 16*C0
  Tensor fc_bias;
  std::array<Tensor, 5> up_kernel;  // taps x C_in x C_out
  std::array<Tensor, 5> up_bias;

  NamedTensors named() const {
    NamedTensors out{{"generator.fc.weight", fc_weight}, {"generator.fc.bias", fc_bias}};
    for (std::size_t i = 0; i < 5; ++i) {
      out.emplace_back("generator.upconv" + std::to_string(i) + ".kernel", up_kernel[i]);
      out.emplace_back("generator.upconv" + std::to_string(i) + ".bias", up_bias[i]);
    }
    return out;
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> t;
    for (auto& [n, v] : named()) t.push_back(v);
    return t;
  }
};

/// Strided convolutional stack + fully connected head; shared shape for the
/// critic (one output) and the Q-network (one logit per code).
struct ConvNetParams {
  Architecture arch;
  std::string prefix;
  std::size_t outputs = 1;
  std::array<Tensor, 5> conv_kernel;
  std::array<Tensor, 5> conv_bias;
  Tensor out_weight;  // 20*C4 x outputs
  Tensor out_bias;

  NamedTensors named() const {
    NamedTensors out;
    for (std::size_t i = 0; i < 5; ++i) {
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".kernel", conv_kernel[i]);
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", conv_bias[i]);
    }
    out.emplace_back(prefix + ".logit.weight", out_weight);
    out.emplace_back(prefix + ".logit.bias", out_bias);
    return out;
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> t;
    for (auto& [n, v] : named()) t.push_back(v);
    return t;
  }
};

using CriticParams = ConvNetParams;
using QParams = ConvNetParams;

/// Glorot-uniform weights and zero biases; `zero_init` zeroes everything.
inline GeneratorParams init_generator(const Architecture& arch, Rng& rng, bool zero_init = false) {
  arch.validate();
  GeneratorParams p;
  p.arch = arch;
  const std::size_t fc_out = Architecture::kSeedLength * arch.generator_channels(0);
  p.fc_weight = glorot({kLatentDim, fc_out}, kLatentDim, fc_out, rng);
  p.fc_bias = Tensor::zeros({fc_out}, true);
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t cin = arch.generator_channels(i), cout = arch.generator_channels(i + 1);
    const std::size_t k = arch.generator_taps;
    p.up_kernel[i] = glorot({k, cin, cout}, k * cin, k * cout, rng);
    p.up_bias[i] = Tensor::zeros({cout}, true);
  }
  if (zero_init) {
    for (auto& t : p.tensors()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  return p;
}

inline ConvNetParams init_conv_net(const Architecture& arch, std::size_t outputs, std::string prefix,
                                   Rng& rng, bool zero_init = false) {
  arch.validate();
  ConvNetParams p;
  p.arch = arch;
  p.prefix = std::move(prefix);
  p.outputs = outputs;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t cout = arch.conv_channels(i), k = arch.conv_taps;
    p.conv_kernel[i] = glorot({k, cin, cout}, k * cin, k * cout, rng);
    p.conv_bias[i] = Tensor::zeros({cout}, true);
    cin = cout;
  }
  const std::size_t flat = arch.conv_final_length() * arch.conv_channels(4);
  p.out_weight = glorot({flat, outputs}, flat, outputs, rng);
  p.out_bias = Tensor::zeros({outputs}, true);
  if (zero_init) {
    for (auto& t : p.tensors()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  return p;
}

inline CriticParams init_critic(const Architecture& arch, Rng& rng, bool zero_init = false) {
  return init_conv_net(arch, 1, "critic", rng, zero_init);
}

inline QParams init_q(const Architecture& arch, Rng& rng, bool zero_init = false) {
  return init_conv_net(arch, arch.num_codes, "q", rng, zero_init);
}

/// Per-item layer output shapes recorded during a forward pass.
using ShapeTrace = std::vector<Shape>;

namespace detail {

inline void trace_push(ShapeTrace* trace, const Tensor& t) {
  if (trace) trace->push_back(Shape(t.shape().begin() + 1, t.shape().end()));
}

inline void check_layer(const Tensor& t, std::size_t len, std::size_t ch, const char* layer) {
  if (t.dim(1) != len || t.dim(2) != ch) {
    throw ShapeError(std::string(layer) + " produced " + shape_str(t.shape()) + ", expected [" +
                     std::to_string(len) + "x" + std::to_string(ch) + "] per item");
  }
}

}  // namespace detail

/// Latent [batch x 100] -> trajectories [batch x 256 x 13]; EMA channels
/// squashed by tanh, voicing by a sigmoid.
inline Tensor generator_forward(const GeneratorParams& p, const Tensor& latent,
                                ShapeTrace* trace = nullptr) {
  if (latent.rank() != 2 || latent.dim(1) != kLatentDim) {
    throw ShapeError("generator expects [batch x 100] latent, got " + shape_str(latent.shape()));
  }
  const auto& a = p.arch;
  const std::size_t batch = latent.dim(0);
  detail::trace_push(trace, latent);
  Tensor h = dense(latent, p.fc_weight, p.fc_bias);
  h = relu(reshape(h, {batch, Architecture::kSeedLength, a.generator_channels(0)}));
  detail::trace_push(trace, h);
  std::size_t len = Architecture::kSeedLength;
  for (std::size_t i = 0; i < 5; ++i) {
    h = add_bias(conv1d_transpose(h, p.up_kernel[i], a.generator_strides[i]), p.up_bias[i]);
    len *= a.generator_strides[i];
    detail::check_layer(h, len, a.generator_channels(i + 1), "upconv");
    if (i < 4) h = relu(h);
    detail::trace_push(trace, h);
  }
  return concat_last(tanh(slice_last(h, 0, kEmaChannels)), sigmoid(slice_last(h, kEmaChannels, kChannels)));
}

namespace detail {

// Runs the convolutional trunk; optionally records pre-activations.
inline Tensor conv_trunk(const ConvNetParams& p, const Tensor& waves, ShapeTrace* trace,
                         std::vector<Tensor>* preacts) {
  if (waves.rank() != 2 || waves.dim(1) != kSamples) {
    throw ShapeError(p.prefix + " expects [batch x 20480] waveforms, got " + shape_str(waves.shape()));
  }
  const auto& a = p.arch;
  const std::size_t batch = waves.dim(0);
  Tensor h = reshape(waves, {batch, kSamples, 1});
  trace_push(trace, h);
  std::size_t len = kSamples;
  for (std::size_t i = 0; i < 5; ++i) {
    Tensor pre = add_bias(conv1d(h, p.conv_kernel[i], a.conv_stride), p.conv_bias[i]);
    len /= a.conv_stride;
    check_layer(pre, len, a.conv_channels(i), "conv");
    if (preacts) preacts->push_back(pre);
    h = leaky_relu(pre, kLeakySlope);
    trace_push(trace, h);
  }
  return reshape(h, {batch, len * a.conv_channels(4)});
}

inline ConvNetParams detached(const ConvNetParams& p) {
  ConvNetParams d = p;
  for (std::size_t i = 0; i < 5; ++i) {
    d.conv_kernel[i] = p.conv_kernel[i].detach();
    d.conv_bias[i] = p.conv_bias[i].detach();
  }
  d.out_weight = p.out_weight.detach();
  d.out_bias = p.out_bias.detach();
  return d;
}

}  // namespace detail

/// Unbounded Wasserstein critic score per item: [batch x 20480] -> [batch].
inline Tensor critic_forward(const CriticParams& p, const Tensor& waves, ShapeTrace* trace = nullptr) {
  Tensor flat = detail::conv_trunk(p, waves, trace, nullptr);
  Tensor score = dense(flat, p.out_weight, p.out_bias);
  detail::trace_push(trace, score);
  return reshape(score, {waves.dim(0)});
}

/// Unnormalized code logits: [batch x 20480] -> [batch x num_codes].
inline Tensor q_forward(const QParams& p, const Tensor& waves, ShapeTrace* trace = nullptr) {
  Tensor flat = detail::conv_trunk(p, waves, trace, nullptr);
  Tensor logits = dense(flat, p.out_weight, p.out_bias);
  detail::trace_push(trace, logits);
  return logits;
}

/// d critic(x) / dx for every item, [batch x 20480], expressed as a graph in
/// the critic parameters so a penalty on it can be differentiated again.
/// Leaky-ReLU slopes are piecewise constant and enter as fixed masks.
inline Tensor critic_input_gradient(const CriticParams& p, const Tensor& waves) {
  if (p.outputs != 1) throw std::invalid_argument("critic_input_gradient needs a single-output critic");
  const auto& a = p.arch;
  const std::size_t batch = waves.dim(0);
  std::vector<Tensor> pre;
  detail::conv_trunk(detail::detached(p), waves.detach(), nullptr, &pre);

  const std::size_t flat = p.out_weight.numel();
  Tensor g = broadcast_rows(reshape(p.out_weight, {flat}), batch);
  g = reshape(g, {batch, a.conv_final_length(), a.conv_channels(4)});
  const auto pad = conv_left_pad(a.conv_taps, a.conv_stride);
  for (std::size_t i = 5; i-- > 0;) {
    const auto positive = ActivationPattern::positive(pre[i].data());
    std::vector<double> mask(positive.size());
    for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = positive[j] ? 1.0 : kLeakySlope;
    g = mul(g, Tensor(pre[i].shape(), std::move(mask)));
    const std::size_t in_len = pre[i].dim(1) * a.conv_stride;
    g = conv1d_transpose_cropped(g, swap_last_two(p.conv_kernel[i]), a.conv_stride, pad, in_len);
  }
  return reshape(g, {batch, kSamples});
}

/// mean over items of (||g_b||_2 - 1)^2 for per-item input gradients g.
inline Tensor penalty_from_gradients(const Tensor& input_grads) {
  Tensor norms = sqrt(sum_per_item(square(input_grads)));
  return mean(square(add_scalar(norms, -1.0)));
}

/// Interpolation points eps*real + (1-eps)*fake, eps ~ U(0,1) per item.
inline Tensor interpolate(const Tensor& real, const Tensor& fake, Rng& rng) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("gradient penalty: real " + shape_str(real.shape()) + " vs fake " +
                     shape_str(fake.shape()));
  }
  const std::size_t batch = real.dim(0), n = real.numel() / batch;
  std::vector<double> x(real.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    const double eps = rng.uniform();
    for (std::size_t j = 0; j < n; ++j) {
      x[b * n + j] = eps * real[b * n + j] + (1.0 - eps) * fake[b * n + j];
    }
  }
  return Tensor(real.shape(), std::move(x));
}

/// WGAN-GP term at random interpolates between real and fake batches.
inline Tensor gradient_penalty(const CriticParams& p, const Tensor& real, const Tensor& fake, Rng& rng) {
  return penalty_from_gradients(critic_input_gradient(p, interpolate(real.detach(), fake.detach(), rng)));
}

/// mean(fake) - mean(real) + lambda * gp; the critic minimizes this.
inline Tensor critic_loss(const Tensor& real_scores, const Tensor& fake_scores, const Tensor& gp,
                          double lambda = 10.0) {
  return add(sub(mean(fake_scores), mean(real_scores)), scale(gp, lambda));
}

/// -mean(fake) + cross-entropy of the Q-network against the true codes.
inline Tensor generator_loss(const Tensor& fake_scores, const Tensor& q_logits,
                             std::span<const int> codes) {
  return add(scale(mean(fake_scores), -1.0), softmax_cross_entropy(q_logits, codes));
}

}  // namespace ciwagan
