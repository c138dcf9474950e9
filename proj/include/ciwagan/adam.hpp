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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciwagan/tensor.hpp"

namespace ciwagan {

/// Raised when training produces a non-finite gradient or loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params, AdamConfig config = {}) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.numel(), 0.0);
    s.second_moment.emplace_back(p.numel(), 0.0);
  }
  return s;
}

/// One bias-corrected Adam update using the gradients stored on `params`.
/// Parameters without a gradient are treated as having a zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                " parameters but state tracks " +
                                std::to_string(state.first_moment.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].numel() != state.first_moment[p].size()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(p) + " has shape " +
                                  shape_str(params[p].shape()) + " but moments hold " +
                                  std::to_string(state.first_moment[p].size()) + " values");
    }
    if (params[p].has_grad()) {
      for (double g : params[p].grad()) {
        if (!std::isfinite(g)) {
          throw DivergenceError("adam_step: non-finite gradient in parameter " + std::to_string(p));
        }
      }
    }
  }

  const auto& c = state.config;
  const std::uint64_t t = ++state.step_count;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const bool has = params[p].has_grad();
    auto g = params[p].grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace ciwagan
