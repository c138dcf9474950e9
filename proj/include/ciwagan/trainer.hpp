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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciwagan/adam.hpp"
#include "ciwagan/config.hpp"
#include "ciwagan/corpus.hpp"
#include "ciwagan/nets.hpp"
#include "ciwagan/physmodel.hpp"
#include "ciwagan/rng.hpp"
#include "json.hpp"

namespace ciwagan {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
  std::size_t total_generator_steps = 20000;
  std::size_t critic_updates_per_generator_step = 5;
  double lambda = 10.0;
  AdamConfig adam;
  Architecture arch;  // num_codes and width_divisor live here
  std::size_t checkpoint_every = 500;
  std::filesystem::path corpus_dir;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;

  void validate() const {
    if (critic_updates_per_generator_step < 1) throw std::invalid_argument("critic_updates_per_generator_step must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    arch.validate();
  }

  static TrainConfig from_run_config(const RunConfig& rc) {
    TrainConfig c;
    c.seed = rc.integer("seed");
    c.batch_size = rc.integer("train.batch_size");
    c.total_generator_steps = rc.integer("train.steps");
    c.critic_updates_per_generator_step = rc.integer("train.critic_updates");
    c.lambda = rc.real("train.lambda");
    c.adam = {rc.real("train.learning_rate"), rc.real("train.beta1"), rc.real("train.beta2"), rc.real("train.epsilon")};
    c.arch.num_codes = rc.integer("train.num_codes");
    c.arch.width_divisor = rc.integer("train.width_divisor");
    c.checkpoint_every = rc.integer("train.checkpoint_every");
    c.corpus_dir = rc.str("paths.corpus");
    c.checkpoint_path = rc.str("paths.checkpoint");
    c.metrics_path = rc.str("paths.metrics");
    c.validate();
    return c;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["batch_size"] = batch_size;
    j["total_generator_steps"] = total_generator_steps;
    j["critic_updates_per_generator_step"] = critic_updates_per_generator_step;
    j["lambda"] = lambda;
    j["learning_rate"] = adam.learning_rate;
    j["beta1"] = adam.beta1;
    j["beta2"] = adam.beta2;
    j["epsilon"] = adam.epsilon;
    j["num_codes"] = arch.num_codes;
    j["width_divisor"] = arch.width_divisor;
    j["checkpoint_every"] = checkpoint_every;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.seed = j.at("seed");
    c.batch_size = j.at("batch_size");
    c.total_generator_steps = j.at("total_generator_steps");
    c.critic_updates_per_generator_step = j.at("critic_updates_per_generator_step");
    c.lambda = j.at("lambda");
    c.adam = {j.at("learning_rate"), j.at("beta1"), j.at("beta2"), j.at("epsilon")};
    c.arch.num_codes = j.at("num_codes");
    c.arch.width_divisor = j.at("width_divisor");
    c.checkpoint_every = j.at("checkpoint_every");
    return c;
  }
};

struct LossReport {
  std::size_t step = 0;
  double critic_loss = 0.0;           // means over the inner updates
  double wasserstein_estimate = 0.0;  // mean D(real) - mean D(fake)
  double gradient_penalty = 0.0;
  double q_loss = 0.0;
  double generator_loss = 0.0;
  double seconds = 0.0;  // wall clock since the run (or resume) started
};

/// Everything a checkpoint must hold to continue training exactly.
struct TrainState {
  TrainConfig config;
  GeneratorParams generator;
  CriticParams critic;
  QParams q;
  AdamState generator_adam, critic_adam, q_adam;
  std::size_t generator_steps = 0;
  std::size_t critic_updates = 0;
  std::size_t q_updates = 0;
  Rng rng;
};

namespace detail {

// Parameters and moments are kept representable in 32 bits so a checkpoint
// captures them exactly; arithmetic stays in double.
inline void round_to_float(std::vector<Tensor>& params, AdamState& s) {
  for (auto& p : params) {
    for (double& v : p.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
  for (auto* moments : {&s.first_moment, &s.second_moment}) {
    for (auto& m : *moments) {
      for (double& v : m) v = static_cast<double>(static_cast<float>(v));
    }
  }
}

inline void update(std::vector<Tensor> params, AdamState& s, const char* loss_name, std::size_t step) {
  try {
    adam_step(params, s);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(loss_name) + " produced a non-finite gradient at step " +
                          std::to_string(step) + " (" + e.what() + ")");
  }
  round_to_float(params, s);
  for (auto& p : params) p.clear_grad();
}

inline double checked(const Tensor& t, const char* name, std::size_t step) {
  const double v = t.item();
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(name) + " is " + (std::isnan(v) ? "NaN" : "infinite") + " at step " +
                          std::to_string(step));
  }
  return v;
}

inline GeneratorParams detached(const GeneratorParams& p) {
  GeneratorParams d = p;
  d.fc_weight = p.fc_weight.detach();
  d.fc_bias = p.fc_bias.detach();
  for (std::size_t i = 0; i < 5; ++i) {
    d.up_kernel[i] = p.up_kernel[i].detach();
    d.up_bias[i] = p.up_bias[i].detach();
  }
  return d;
}

inline std::vector<std::uint64_t> draw_seeds(Rng& rng, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (auto& v : s) v = rng.next_u64();
  return s;
}

}  // namespace detail

inline TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  Rng init = Rng(config.seed).fork(1);
  s.generator = init_generator(config.arch, init);
  s.critic = init_critic(config.arch, init);
  s.q = init_q(config.arch, init);
  s.generator_adam = make_adam_state(s.generator.tensors(), config.adam);
  s.critic_adam = make_adam_state(s.critic.tensors(), config.adam);
  s.q_adam = make_adam_state(s.q.tensors(), config.adam);
  auto g = s.generator.tensors(), d = s.critic.tensors(), q = s.q.tensors();
  detail::round_to_float(g, s.generator_adam);
  detail::round_to_float(d, s.critic_adam);
  detail::round_to_float(q, s.q_adam);
  s.rng = Rng(config.seed).fork(2);
  return s;
}

/// Real training audio: [n x 20480] rows the trainer samples batches from.
struct RealData {
  std::vector<Waveform> waves;

  Tensor batch(Rng& rng, std::size_t n) const {
    if (waves.empty()) throw std::invalid_argument("training corpus is empty");
    std::vector<double> v;
    v.reserve(n * kSamples);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = waves[rng.below(waves.size())].samples;
      v.insert(v.end(), w.begin(), w.end());
    }
    return Tensor({n, kSamples}, std::move(v));
  }
};

/// Generated audio for a latent batch; gradients flow to the Generator only
/// when `track` is set.
inline Tensor generate_audio(const GeneratorParams& g, const LatentBatch& latent, const PhysicalModel& model,
                             std::span<const std::uint64_t> seeds, bool track) {
  const Tensor traj = track ? generator_forward(g, latent.as_tensor())
                            : generator_forward(detail::detached(g), latent.as_tensor());
  return model.synthesize(traj, seeds);
}

/// Five (configurable) critic and Q updates on fresh real/fake batches, then
/// one Generator update.
inline LossReport train_step(TrainState& s, const RealData& data, const PhysicalModel& model) {
  const auto& c = s.config;
  const std::size_t step = s.generator_steps + 1;
  const std::size_t critic_before = s.critic_updates, q_before = s.q_updates;
  const auto g_before = s.generator_adam.step_count;
  LossReport r;
  r.step = step;
  const double inner = static_cast<double>(c.critic_updates_per_generator_step);
  for (std::size_t i = 0; i < c.critic_updates_per_generator_step; ++i) {
    const Tensor real = data.batch(s.rng, c.batch_size);
    const LatentBatch latent = sample_latent(s.rng, c.batch_size, c.arch.num_codes);
    const auto seeds = detail::draw_seeds(s.rng, c.batch_size);
    const Tensor fake = generate_audio(s.generator, latent, model, seeds, false);

    const Tensor real_scores = critic_forward(s.critic, real);
    const Tensor fake_scores = critic_forward(s.critic, fake);
    const Tensor gp = gradient_penalty(s.critic, real, fake, s.rng);
    const Tensor dloss = critic_loss(real_scores, fake_scores, gp, c.lambda);
    r.critic_loss += detail::checked(dloss, "critic_loss", step) / inner;
    r.gradient_penalty += detail::checked(gp, "gradient_penalty", step) / inner;
    r.wasserstein_estimate += (mean(real_scores).item() - mean(fake_scores).item()) / inner;
    backward(dloss);
    detail::update(s.critic.tensors(), s.critic_adam, "critic_loss", step);
    ++s.critic_updates;

    const Tensor qloss = softmax_cross_entropy(q_forward(s.q, fake), latent.codes);
    r.q_loss += detail::checked(qloss, "q_loss", step) / inner;
    backward(qloss);
    detail::update(s.q.tensors(), s.q_adam, "q_loss", step);
    ++s.q_updates;
  }

  const LatentBatch latent = sample_latent(s.rng, c.batch_size, c.arch.num_codes);
  const auto seeds = detail::draw_seeds(s.rng, c.batch_size);
  const Tensor fake = generate_audio(s.generator, latent, model, seeds, true);
  const Tensor gloss = generator_loss(critic_forward(detail::detached(s.critic), fake),
                                      q_forward(detail::detached(s.q), fake), latent.codes);
  r.generator_loss = detail::checked(gloss, "generator_loss", step);
  backward(gloss);
  detail::update(s.generator.tensors(), s.generator_adam, "generator_loss", step);
  ++s.generator_steps;

  if (s.critic_updates - critic_before != c.critic_updates_per_generator_step ||
      s.q_updates - q_before != c.critic_updates_per_generator_step ||
      s.generator_adam.step_count - g_before != 1) {
    throw std::logic_error("update schedule violated at step " + std::to_string(step));
  }
  return r;
}

/// Fraction of fresh generated samples whose code the Q-network recovers.
inline double q_accuracy(const TrainState& s, const PhysicalModel& model, std::size_t samples, std::uint64_t seed,
                         std::size_t chunk = 50) {
  Rng rng(seed);
  std::size_t correct = 0;
  for (std::size_t done = 0; done < samples; done += chunk) {
    const std::size_t n = std::min(chunk, samples - done);
    const LatentBatch latent = sample_latent(rng, n, s.config.arch.num_codes);
    const auto seeds = detail::draw_seeds(rng, n);
    const Tensor logits = q_forward(detail::detached(s.q), generate_audio(s.generator, latent, model, seeds, false));
    const std::size_t k = s.config.arch.num_codes;
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = logits.data().subspan(b * k, k);
      const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += arg == latent.codes[b];
    }
  }
  return samples ? static_cast<double>(correct) / static_cast<double>(samples) : 0.0;
}

inline std::string metrics_line(const LossReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["critic_loss"] = r.critic_loss;
  j["wasserstein_estimate"] = r.wasserstein_estimate;
  j["gradient_penalty"] = r.gradient_penalty;
  j["generator_loss"] = r.generator_loss;
  j["q_loss"] = r.q_loss;
  j["seconds"] = r.seconds;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoint file: "CWGN", u32 version, u32-length JSON header (config,
// counters, rng state), u32 record count, records of
//   u32 name length, name, u32 rank, u64 dims..., f32 LE data
// and a trailing u64 FNV-1a checksum of every preceding byte.

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_le(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t at = 0;
  std::size_t end;

  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    at += sizeof(T);
    return static_cast<T>(v);
  }
  double f32() {
    const auto bits = le<std::uint32_t>();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes.substr(at, n);
    at += n;
    return s;
  }
  void need(std::size_t n) const {
    if (at + n > end) throw CheckpointError("checkpoint truncated at byte " + std::to_string(at));
  }
};

inline std::vector<std::pair<std::string, std::vector<double>*>> moment_records(AdamState& s, const NamedTensors& named,
                                                                                 const std::string& opt) {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t i = 0; i < named.size(); ++i) {
    out.emplace_back("adam." + opt + ".m." + named[i].first, &s.first_moment[i]);
    out.emplace_back("adam." + opt + ".v." + named[i].first, &s.second_moment[i]);
  }
  return out;
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainState& s) {
  nlohmann::ordered_json header;
  header["config"] = s.config.to_json();
  header["generator_steps"] = s.generator_steps;
  header["critic_updates"] = s.critic_updates;
  header["q_updates"] = s.q_updates;
  header["adam_steps"] = {s.generator_adam.step_count, s.critic_adam.step_count, s.q_adam.step_count};
  header["rng"] = {s.rng.key(), s.rng.counter()};
  const std::string h = header.dump();

  NamedTensors tensors = s.generator.named();
  for (auto& nt : s.critic.named()) tensors.push_back(nt);
  for (auto& nt : s.q.named()) tensors.push_back(nt);
  auto& m = const_cast<TrainState&>(s);  // moment_records hands out mutable pointers; only read here
  std::vector<std::pair<std::string, std::vector<double>*>> moments;
  for (auto& r : detail::moment_records(m.generator_adam, s.generator.named(), "generator")) moments.push_back(r);
  for (auto& r : detail::moment_records(m.critic_adam, s.critic.named(), "critic")) moments.push_back(r);
  for (auto& r : detail::moment_records(m.q_adam, s.q.named(), "q")) moments.push_back(r);

  std::string out = "CWGN";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size() + moments.size()));
  auto record = [&](const std::string& name, const Shape& shape, std::span<const double> data) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : data) detail::put_f32(out, v);
  };
  for (const auto& [name, t] : tensors) record(name, t.shape(), t.data());
  for (const auto& [name, v] : moments) record(name, Shape{v->size()}, *v);
  detail::put_le<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

inline TrainState decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "CWGN") != 0) throw CheckpointError("bad checkpoint magic");
  if (bytes.size() < 16) throw CheckpointError("checkpoint truncated");
  detail::Reader tail{bytes, bytes.size() - 8, bytes.size()};
  const auto stored = tail.le<std::uint64_t>();
  detail::Reader r{bytes, 4, bytes.size() - 8};
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored) throw CheckpointError("checkpoint checksum mismatch");
  const auto hlen = r.le<std::uint32_t>();
  const auto header = nlohmann::json::parse(r.raw(hlen));

  TrainState s;
  s.config = TrainConfig::from_json(header.at("config"));
  s.config.validate();
  Rng scratch(0);
  s.generator = init_generator(s.config.arch, scratch, true);
  s.critic = init_critic(s.config.arch, scratch, true);
  s.q = init_q(s.config.arch, scratch, true);
  s.generator_adam = make_adam_state(s.generator.tensors(), s.config.adam);
  s.critic_adam = make_adam_state(s.critic.tensors(), s.config.adam);
  s.q_adam = make_adam_state(s.q.tensors(), s.config.adam);
  s.generator_steps = header.at("generator_steps");
  s.critic_updates = header.at("critic_updates");
  s.q_updates = header.at("q_updates");
  s.generator_adam.step_count = header.at("adam_steps").at(0);
  s.critic_adam.step_count = header.at("adam_steps").at(1);
  s.q_adam.step_count = header.at("adam_steps").at(2);
  s.rng = Rng::from_state(header.at("rng").at(0), header.at("rng").at(1));

  std::map<std::string, std::span<double>> slots;
  for (auto& [n, t] : s.generator.named()) slots[n] = t.mutable_data();
  for (auto& [n, t] : s.critic.named()) slots[n] = t.mutable_data();
  for (auto& [n, t] : s.q.named()) slots[n] = t.mutable_data();
  for (auto& [n, v] : detail::moment_records(s.generator_adam, s.generator.named(), "generator")) slots[n] = *v;
  for (auto& [n, v] : detail::moment_records(s.critic_adam, s.critic.named(), "critic")) slots[n] = *v;
  for (auto& [n, v] : detail::moment_records(s.q_adam, s.q.named(), "q")) slots[n] = *v;

  const auto count = r.le<std::uint32_t>();
  if (count != slots.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " records, expected " +
                          std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.le<std::uint32_t>();
    const std::string name = r.raw(nlen);
    const auto rank = r.le<std::uint32_t>();
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) numel *= r.le<std::uint64_t>();
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected checkpoint record '" + name + "'");
    if (it->second.size() != numel) {
      throw CheckpointError("record '" + name + "' holds " + std::to_string(numel) + " values, expected " +
                            std::to_string(it->second.size()));
    }
    for (double& v : it->second) v = r.f32();
  }
  if (r.at != r.end) throw CheckpointError("trailing bytes before checksum");
  return s;
}

inline void save_checkpoint(const std::filesystem::path& p, const TrainState& s) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string bytes = encode_checkpoint(s);
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, p);
}

inline TrainState load_checkpoint(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Runs train_step until `total_generator_steps`, appending one metrics line
/// per step and checkpointing every `checkpoint_every` steps and at the end.
/// `on_step` may return false to stop early (the state is checkpointed).
inline TrainState train(TrainState s, const RealData& data, const PhysicalModel& model,
                        const std::function<bool(const TrainState&, const LossReport&)>& on_step = {}) {
  const auto& c = s.config;
  const bool fresh = s.generator_steps == 0;
  if (!c.metrics_path.empty() && c.metrics_path.has_parent_path()) {
    std::filesystem::create_directories(c.metrics_path.parent_path());
  }
  std::ofstream metrics;
  if (!c.metrics_path.empty()) {
    metrics.open(c.metrics_path, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write " + c.metrics_path.string());
  }
  if (!c.checkpoint_path.empty()) save_checkpoint(c.checkpoint_path, s);  // also proves the path is writable
  const auto start = std::chrono::steady_clock::now();
  while (s.generator_steps < c.total_generator_steps) {
    LossReport r = train_step(s, data, model);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (metrics.is_open()) metrics << metrics_line(r) << '\n' << std::flush;
    const bool go_on = !on_step || on_step(s, r);
    const bool due = c.checkpoint_every > 0 && s.generator_steps % c.checkpoint_every == 0;
    if (!c.checkpoint_path.empty() && (due || !go_on)) save_checkpoint(c.checkpoint_path, s);
    if (!go_on) return s;
  }
  if (!c.checkpoint_path.empty()) save_checkpoint(c.checkpoint_path, s);
  return s;
}

}  // namespace ciwagan
