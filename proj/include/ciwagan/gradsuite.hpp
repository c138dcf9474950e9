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

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ciwagan/gradcheck.hpp"
#include "ciwagan/nets.hpp"
#include "ciwagan/ops.hpp"
#include "ciwagan/physmodel.hpp"

namespace ciwagan {

struct GradSuiteResult {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  std::size_t probes = 0;
  std::string worst;
  bool passed() const { return max_relative_error < tolerance; }
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline GradSuiteResult suite(std::string name, const GradCheckResult& r, double tolerance) {
  return {std::move(name), r.max_relative_error, tolerance, r.probes, r.worst};
}

inline GradSuiteResult merge(std::string name, const std::vector<GradSuiteResult>& parts) {
  GradSuiteResult out{std::move(name), 0.0, parts.empty() ? 0.0 : parts.front().tolerance, 0, ""};
  for (const auto& p : parts) {
    out.probes += p.probes;
    if (p.max_relative_error >= out.max_relative_error) {
      out.max_relative_error = p.max_relative_error;
      out.worst = p.name + ":" + p.worst;
    }
  }
  return out;
}

}  // namespace detail

/// Central-difference checks over every differentiable operation, the three
/// networks, the synthesizer, the gradient penalty and the end-to-end
/// generator loss. Networks use width divisor 64.
inline std::vector<GradSuiteResult> run_gradient_suites(std::uint64_t seed = 1) {
  using detail::uniform_tensor;
  constexpr double kTol = 1e-4;
  std::vector<GradSuiteResult> out;
  Rng rng(seed);

  {
    auto x = uniform_tensor({3, 4}, rng, true, -2.0, 2.0), y = uniform_tensor({3, 4}, rng);
    auto w = uniform_tensor({3, 4}, rng, false);
    const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
        {"relu", [&] { return sum(mul(relu(x), w)); }},
        {"leaky_relu", [&] { return sum(mul(leaky_relu(x, 0.2), w)); }},
        {"tanh", [&] { return sum(mul(tanh(x), w)); }},
        {"sigmoid", [&] { return sum(mul(sigmoid(x), w)); }},
        {"add_sub_scale", [&] { return sum(mul(sub(add(x, scale(y, 2.5)), add_scalar(y, 1.0)), w)); }},
        {"square_sqrt", [&] { return sum(mul(sqrt(add_scalar(square(x), 0.5)), w)); }},
        {"mean", [&] { return mean(mul(x, y)); }},
    };
    std::vector<GradSuiteResult> parts;
    for (const auto& [name, fn] : cases) parts.push_back(detail::suite(name, check_gradients(fn, {x, y}, 24, rng), kTol));
    out.push_back(detail::merge("elementwise", parts));
  }
  {
    auto x = uniform_tensor({4, 3}, rng, false);
    auto w1 = uniform_tensor({3, 5}, rng), b1 = uniform_tensor({5}, rng);
    auto w2 = uniform_tensor({5, 2}, rng), b2 = uniform_tensor({2}, rng);
    auto loss = [&] { return sum(tanh(dense(tanh(dense(x, w1, b1)), w2, b2))); };
    out.push_back(detail::suite("dense", check_gradients(loss, {w1, b1, w2, b2}, 50, rng), kTol));
  }
  {
    std::vector<GradSuiteResult> parts;
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t stride = 1 + rng.below(3);
      const std::size_t taps = stride + rng.below(4);
      const std::size_t len = stride * (2 + rng.below(4));
      const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3), batch = 1 + rng.below(2);
      auto x = uniform_tensor({batch, len, cin}, rng), k = uniform_tensor({taps, cin, cout}, rng);
      auto k2 = uniform_tensor({taps, cout, cin}, rng);
      auto w = uniform_tensor({batch, len, cin}, rng, false);
      auto loss = [&] { return sum(mul(conv1d_transpose(conv1d(x, k, stride), k2, stride), w)); };
      parts.push_back(detail::suite("trial" + std::to_string(trial), check_gradients(loss, {x, k, k2}, 30, rng), kTol));
    }
    out.push_back(detail::merge("convolution", parts));
  }
  {
    auto a = uniform_tensor({2, 3, 4}, rng), b = uniform_tensor({2, 3, 2}, rng);
    auto k = uniform_tensor({3, 2, 5}, rng), v = uniform_tensor({6}, rng), bias = uniform_tensor({6}, rng);
    auto loss = [&] {
      Tensor c = concat_last(slice_last(a, 1, 4), b);
      Tensor s = sum_per_item(square(c));
      Tensor sw = sum(mul(reshape(swap_last_two(k), {15, 2}), broadcast_rows(slice_last(v, 0, 2), 15)));
      Tensor br = sum(mul(broadcast_rows(v, 2), add_bias(broadcast_rows(v, 2), bias)));
      return add(add(sum(sqrt(add_scalar(s, 1.0))), sw), br);
    };
    out.push_back(detail::suite("shape_ops", check_gradients(loss, {a, b, k, v, bias}, 40, rng), kTol));
  }
  {
    auto logits = uniform_tensor({5, 9}, rng, true, -3.0, 3.0);
    const std::vector<int> t{0, 8, 3, 3, 5};
    out.push_back(detail::suite("softmax_cross_entropy",
                                check_gradients([&] { return softmax_cross_entropy(logits, t); }, {logits}, 100, rng),
                                kTol));
  }
  {
    ReferenceSynthesizer synth;
    Trajectory t;
    for (std::size_t f = 0; f < kFrames; ++f) {
      for (std::size_t c = 0; c < kEmaChannels; ++c) t.at(f, c) = 0.5 * std::sin(0.05 * static_cast<double>(f) + static_cast<double>(c));
      t.at(f, kVoicing) = 0.5 + 0.4 * std::cos(0.03 * static_cast<double>(f));
    }
    Tensor traj = stack(std::span<const Trajectory>(&t, 1));
    traj.set_requires_grad(true);
    const std::uint64_t seeds[1] = {1};
    auto loss = [&] { return sum(synth.synthesize(traj, seeds)); };
    out.push_back(detail::suite("synthesizer", check_gradients(loss, {traj}, 32, rng), kTol));
  }

  Architecture arch;
  arch.num_codes = 3;
  arch.width_divisor = 64;
  auto g = init_generator(arch, rng);
  auto d = init_critic(arch, rng);
  auto q = init_q(arch, rng);
  const auto latent = sample_latent(rng, 2, 3);
  auto waves = uniform_tensor({2, kSamples}, rng, false, -0.8, 0.8);
  auto other = uniform_tensor({2, kSamples}, rng, false, -0.8, 0.8);
  // Network probes difference within the linear piece of the unperturbed point.
  {
    auto w = uniform_tensor({2, kFrames, kChannels}, rng, false);
    auto loss = [&] { return sum(mul(generator_forward(g, latent.as_tensor()), w)); };
    out.push_back(detail::suite("generator", check_gradients(loss, g.tensors(), 4, rng, 1e-5, 1e-6, true), kTol));
  }
  {
    auto loss = [&] { return sum(critic_forward(d, waves)); };
    out.push_back(detail::suite("critic", check_gradients(loss, d.tensors(), 4, rng, 1e-5, 1e-6, true), kTol));
    auto qloss = [&] { return softmax_cross_entropy(q_forward(q, waves), latent.codes); };
    out.push_back(detail::suite("q_network", check_gradients(qloss, q.tensors(), 4, rng, 1e-5, 1e-6, true), kTol));
  }
  {
    auto loss = [&] {
      Rng eps(99);
      return gradient_penalty(d, waves, other, eps);
    };
    out.push_back(detail::suite("gradient_penalty", check_gradients(loss, d.tensors(), 4, rng, 1e-5, 1e-6, true), kTol));
  }
  {
    ReferenceSynthesizer synth;
    const std::vector<std::uint64_t> seeds{11, 12};
    auto loss = [&] {
      Tensor fake = synth.synthesize(generator_forward(g, latent.as_tensor()), seeds);
      return generator_loss(critic_forward(d, fake), q_forward(q, fake), latent.codes);
    };
    out.push_back(detail::suite("generator_loss_end_to_end", check_gradients(loss, g.tensors(), 3, rng, 1e-6, 1e-6, true), 1e-3));
  }
  return out;
}

}  // namespace ciwagan
