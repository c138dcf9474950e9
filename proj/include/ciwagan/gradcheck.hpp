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
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ciwagan/rng.hpp"
#include "ciwagan/ops.hpp"
#include "ciwagan/tensor.hpp"

namespace ciwagan {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // "<param>[<index>]" of the worst probe
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `loss_fn()` against central finite
/// differences on up to `probes_per_param` random entries of each parameter
/// (every entry when the parameter is smaller than that).
/// With `freeze_activations`, relu/leaky-ReLU sign patterns are recorded on
/// the unperturbed evaluation and replayed on the perturbed ones, so the
/// differences measure the linear piece the analytic gradient belongs to.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       std::vector<Tensor> params, std::size_t probes_per_param,
                                       Rng& rng, double h = 1e-5, double floor = 1e-6,
                                       bool freeze_activations = false) {
  for (auto& p : params) p.clear_grad();
  ActivationPattern pattern;
  {
    std::optional<ActivationPattern::Scope> record;
    if (freeze_activations) record.emplace(pattern, ActivationPattern::Mode::kRecord);
    backward(loss_fn());
  }
  std::optional<ActivationPattern::Scope> replay;
  if (freeze_activations) replay.emplace(pattern, ActivationPattern::Mode::kReplay);
  auto eval = [&] {
    pattern.rewind();
    return loss_fn().item();
  };
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::size_t n = p.numel();
    std::vector<std::size_t> idx;
    if (n <= probes_per_param) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < probes_per_param; ++i) idx.push_back(rng.below(n));
    }
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    for (std::size_t i : idx) {
      auto values = p.mutable_data();
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval();
      values[i] = saved - h;
      const double down = eval();
      values[i] = saved;
      const double err = relative_error(analytic[i], (up - down) / (2.0 * h), floor);
      ++result.probes;
      if (err > result.max_relative_error || result.worst.empty()) {
        if (err >= result.max_relative_error) {
          result.max_relative_error = err;
          result.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  for (auto& p : params) p.clear_grad();
  return result;
}

}  // namespace ciwagan
