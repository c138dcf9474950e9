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

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ciwagan {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key=value run configuration. Every key has a default; unknown keys
/// are rejected.
class RunConfig {
 public:
  RunConfig() {
    values_ = {
        {"seed", "1"},
        {"corpus.seed", "1"},
        {"corpus.tokens_per_word", "100"},
        {"corpus.num_words", "3"},
        {"corpus.jitter", "0.05"},
        {"corpus.warp", "0.05"},
        {"train.steps", "20000"},
        {"train.batch_size", "16"},
        {"train.critic_updates", "5"},
        {"train.lambda", "10"},
        {"train.learning_rate", "0.0001"},
        {"train.beta1", "0.5"},
        {"train.beta2", "0.9"},
        {"train.epsilon", "1e-08"},
        {"train.num_codes", "3"},
        {"train.width_divisor", "64"},
        {"train.checkpoint_every", "500"},
        {"probe.seed", "1"},
        {"probe.samples_per_code", "100"},
        {"probe.scale", "15"},
        {"eval.scale", "5"},
        {"eval.span", "0.2"},
        {"paths.corpus", "corpus"},
        {"paths.checkpoint", "run/checkpoint.cwgn"},
        {"paths.metrics", "run/metrics.jsonl"},
    };
  }

  static RunConfig parse(std::istream& is, const std::string& where = "config") {
    RunConfig c;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(where + ":" + std::to_string(lineno) + ": expected key=value");
      }
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where + ":" + std::to_string(lineno));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value, const std::string& where = "config") {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    it->second = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
    return d;
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& v = str(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
    }
    return std::stoull(v);
  }

  /// Fully resolved configuration, one key=value per line in key order.
  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  }

  std::string dump() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace ciwagan
