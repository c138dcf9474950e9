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

// ciwagan: command-line driver for corpus synthesis, training, generation,
// probing and evaluation. Exit codes: 0 success, 1 invalid input, 2 runtime
// failure; failures print a one-line JSON object on stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ciwagan/articeval.hpp"
#include "ciwagan/config.hpp"
#include "ciwagan/corpus.hpp"
#include "ciwagan/gradsuite.hpp"
#include "ciwagan/lexstats.hpp"
#include "ciwagan/probe.hpp"
#include "ciwagan/svg.hpp"
#include "ciwagan/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ciwagan;

namespace {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream is(path);
  if (!is) throw InputError("cannot read config " + path);
  return RunConfig::parse(is, path);
}

void log_config(const RunConfig& rc) { std::cerr << "# resolved config\n" << rc.dump() << std::flush; }

CorpusSpec corpus_spec(const RunConfig& rc) {
  CorpusSpec s;
  s.corpus_seed = rc.integer("corpus.seed");
  s.tokens_per_word = rc.integer("corpus.tokens_per_word");
  s.num_words = rc.integer("corpus.num_words");
  s.amplitude_jitter = rc.real("corpus.jitter");
  s.time_warp = rc.real("corpus.warp");
  s.validate();
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TrainState read_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw InputError("checkpoint not found: " + p.string());
  return load_checkpoint(p);
}

TranscriptionOracle read_calibration(const fs::path& p) {
  const std::string text = slurp(p);
  try {
    return TranscriptionOracle::from_calibration(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

std::string fmt(const char* pattern, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, i);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthCorpusArgs {
  std::string config;
  std::string out_dir;
};

void synth_corpus(const SynthCorpusArgs& a) {
  const RunConfig rc = load_config(a.config);
  const CorpusSpec spec = corpus_spec(rc);
  log_config(rc);
  const fs::path out = a.out_dir.empty() ? fs::path(rc.str("paths.corpus")) : fs::path(a.out_dir);
  const Corpus corpus = synthesize_corpus(spec);
  TranscriptionOracle oracle(spec.corpus_seed, spec.num_words);
  oracle.calibrate(corpus.tokens);
  write_corpus(corpus, out);
  write_text(out / "calibration.json", oracle.calibration_json().dump(2) + "\n");
  nlohmann::ordered_json j;
  j["out_dir"] = out.string();
  j["tokens"] = corpus.tokens.size();
  j["words"] = spec.num_words;
  j["tau"] = oracle.tau();
  std::cout << j.dump() << '\n';
}

struct TrainArgs {
  std::string config;
  bool resume = false;
};

void check_same(const nlohmann::json& a, const nlohmann::json& b, const char* key) {
  if (a.at(key) != b.at(key)) {
    throw InputError(std::string("config value for ") + key + " differs from the checkpoint (" + a.at(key).dump() +
                     " vs " + b.at(key).dump() + ")");
  }
}

void train_command(const TrainArgs& a) {
  const RunConfig rc = load_config(a.config);
  const TrainConfig cfg = TrainConfig::from_run_config(rc);
  log_config(rc);
  if (!fs::exists(cfg.corpus_dir / "manifest.jsonl")) {
    throw InputError("no corpus manifest in " + cfg.corpus_dir.string() + " (run synth-corpus first)");
  }
  RealData data;
  for (auto& t : load_corpus(cfg.corpus_dir)) data.waves.push_back(std::move(t.waveform));
  if (data.waves.empty()) throw InputError("corpus in " + cfg.corpus_dir.string() + " has no tokens");

  TrainState state;
  if (a.resume) {
    state = read_checkpoint(cfg.checkpoint_path);
    const auto have = state.config.to_json(), want = cfg.to_json();
    for (const char* key : {"seed", "batch_size", "critic_updates_per_generator_step", "lambda", "learning_rate",
                            "beta1", "beta2", "epsilon", "num_codes", "width_divisor"}) {
      check_same(want, have, key);
    }
    if (state.generator_steps > cfg.total_generator_steps) {
      throw InputError("checkpoint is at step " + std::to_string(state.generator_steps) + ", past train.steps=" +
                       std::to_string(cfg.total_generator_steps));
    }
    state.config.total_generator_steps = cfg.total_generator_steps;
    state.config.checkpoint_every = cfg.checkpoint_every;
  } else {
    state = init_train_state(cfg);
  }
  state.config.corpus_dir = cfg.corpus_dir;
  state.config.checkpoint_path = cfg.checkpoint_path;
  state.config.metrics_path = cfg.metrics_path;

  ReferenceSynthesizer model;
  const std::size_t first = state.generator_steps;
  auto progress = [](const TrainState&, const LossReport& r) {
    if (r.step % 100 == 0) std::cerr << metrics_line(r) << '\n';
    return true;
  };
  const TrainState done = train(std::move(state), data, model, progress);
  nlohmann::ordered_json j;
  j["first_step"] = first + 1;
  j["last_step"] = done.generator_steps;
  j["checkpoint"] = cfg.checkpoint_path.string();
  j["metrics"] = cfg.metrics_path.string();
  std::cout << j.dump() << '\n';
}

struct GenerateArgs {
  std::string checkpoint;
  int code = 0;
  double scale = 1.0;
  std::size_t count = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "generated";
};

void generate_command(const GenerateArgs& a) {
  const TrainState s = read_checkpoint(a.checkpoint);
  const std::size_t codes = s.config.arch.num_codes;
  if (a.code < 0 || static_cast<std::size_t>(a.code) >= codes) {
    throw InputError("--code " + std::to_string(a.code) + " outside [0, " + std::to_string(codes) + ")");
  }
  if (!(a.scale > 0.0)) throw InputError("--scale must be positive");
  const fs::path out = a.out_dir;
  std::string manifest;
  if (a.count > 0) {
    Rng rng(a.seed);
    const LatentBatch latent = sample_latent(rng, a.count, codes, a.scale, a.code);
    Rng noise = rng.fork(0x6e6f697365ULL);
    std::vector<std::uint64_t> seeds(a.count);
    for (auto& x : seeds) x = noise.next_u64();
    const Tensor traj = generator_forward(detail::detached(s.generator), latent.as_tensor());
    ReferenceSynthesizer model;
    const Tensor waves = model.synthesize(traj, seeds);
    fs::create_directories(out / "ema");
    fs::create_directories(out / "wav");
    for (std::size_t i = 0; i < a.count; ++i) {
      const std::string ema = fmt("ema/g%04zu.csv", i), wav = fmt("wav/g%04zu.wav", i);
      save_ema_csv(out / ema, trajectory_at(traj, i));
      save_wav(out / wav, waveform_at(waves, i));
      nlohmann::ordered_json j;
      j["index"] = i;
      j["code"] = a.code;
      j["scale"] = a.scale;
      j["noise_seed"] = seeds[i];
      j["ema_path"] = ema;
      j["wav_path"] = wav;
      manifest += j.dump() + "\n";
    }
  }
  write_text(out / "manifest.jsonl", manifest);
  std::cout << nlohmann::ordered_json{{"out_dir", out.string()}, {"count", a.count}}.dump() << '\n';
}

struct ProbeArgs {
  std::string checkpoint;
  std::string config;
  std::string calibration;
  std::string out_dir = "probe";
  int scale = 0;
  bool template_stub = false;
};

void probe_command(const ProbeArgs& a) {
  const RunConfig rc = load_config(a.config);
  ProbeSpec spec;
  spec.seed = rc.integer("probe.seed");
  spec.samples_per_code = rc.integer("probe.samples_per_code");
  spec.code_scale = a.scale ? a.scale : rc.real("probe.scale");
  spec.validate();
  if (a.template_stub == !a.checkpoint.empty()) throw InputError("give exactly one of --checkpoint, --template-stub");
  log_config(rc);
  const fs::path calib =
      a.calibration.empty() ? fs::path(rc.str("paths.corpus")) / "calibration.json" : fs::path(a.calibration);
  const TranscriptionOracle oracle = read_calibration(calib);
  TrajectorySource source;
  std::size_t codes = oracle.num_words();
  if (a.template_stub) {
    source = template_source(oracle.corpus_seed());
  } else {
    const TrainState s = read_checkpoint(a.checkpoint);
    codes = s.config.arch.num_codes;
    source = [g = detail::detached(s.generator)](const LatentBatch& l) { return generator_forward(g, l.as_tensor()); };
  }

  ReferenceSynthesizer model;
  const ProbeResult r = probe_codes(source, codes, spec, model, oracle);

  const fs::path out = a.out_dir;
  write_text(out / "counts.csv", render([&](std::ostream& os) { write_count_table_csv(os, r.table); }));
  std::string lines;
  for (const auto& rec : r.records) lines += probe_record_line(rec, r.table.num_words) + "\n";
  write_text(out / "probe.jsonl", lines);
  nlohmann::ordered_json j;
  j["scale"] = spec.code_scale;
  j["samples_per_code"] = spec.samples_per_code;
  j["seed"] = spec.seed;
  j["z_checksum"] = r.z_checksum;
  j["dominant"] = nlohmann::ordered_json::array();
  for (const auto& d : dominance_report(r.table)) {
    j["dominant"].push_back({{"column", column_label(d.column, r.table.num_words)}, {"count", d.count}});
  }
  write_text(out / "summary.json", j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
}

struct EvalLexArgs {
  std::string counts;
  std::string out_dir = "lex";
};

void eval_lex(const EvalLexArgs& a) {
  std::istringstream is(slurp(a.counts));
  const CountTable table = read_count_table_csv(is);
  const ModelComparison m = compare_models(table);
  const auto probs = fitted_table(m, table);

  const fs::path out = a.out_dir;
  write_text(out / "comparison.json", to_json(m).dump(2) + "\n");
  write_text(out / "probabilities.csv", render([&](std::ostream& os) { write_probability_csv(os, m, table); }));
  std::vector<std::string> labels;
  for (std::size_t c = 0; c <= table.num_words; ++c) labels.push_back(column_label(c, table.num_words));
  for (std::size_t k = 0; k < probs.size(); ++k) {
    write_text(out / fmt("probabilities_code%zu.svg", k),
               svg::bar_chart("fitted probabilities, code " + std::to_string(k), labels, probs[k]));
  }
  std::cout << to_json(m).dump() << '\n';
}

struct EvalEmaArgs {
  std::string generated;
  std::string reference;
  double scale = 5.0;
  double span = 0.2;
  std::string out_dir = "ema_eval";
};

void eval_ema(const EvalEmaArgs& a) {
  if (!(a.span > 0.0 && a.span <= 1.0)) throw InputError("--span must be in (0, 1]");
  if (!std::isfinite(a.scale)) throw InputError("--scale must be finite");
  std::istringstream gs(slurp(a.generated)), rs(slurp(a.reference));
  const Trajectory gen = read_ema_csv(gs, a.generated);
  const Trajectory ref = read_ema_csv(rs, a.reference);
  const ChannelReport report = compare_ema(gen, ref, a.scale, a.span);

  const fs::path out = a.out_dir;
  write_text(out / "table.csv", render([&](std::ostream& os) { write_channel_report_csv(os, report); }));
  std::vector<svg::Path2D> paths(2);
  paths[0].label = "generated (smoothed)";
  paths[1].label = "reference (scaled)";
  paths[1].color = "#d62728";
  std::vector<std::vector<double>> smooth(kEmaChannels), scaled(kEmaChannels);
  for (std::size_t c = 0; c < kEmaChannels; ++c) {
    smooth[c] = loess_smooth(gen.channel(c), a.span);
    scaled[c] = ref.channel(c);
    for (double& v : scaled[c]) v *= a.scale;
    const std::vector<svg::Series> series{{"generated (smoothed)", smooth[c]},
                                          {"reference (scaled)", scaled[c], "#d62728"}};
    write_text(out / (std::string("channel_") + kChannelNames[c] + ".svg"), svg::line_chart(kChannelNames[c], series));
  }
  // Tongue tip in the x/y plane.
  for (std::size_t f = 0; f < kFrames; ++f) {
    paths[0].points.emplace_back(smooth[2][f], smooth[3][f]);
    paths[1].points.emplace_back(scaled[2][f], scaled[3][f]);
  }
  write_text(out / "tongue_tip_path.svg", svg::path_chart("tongue tip", paths));
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : report.channels) {
    nlohmann::ordered_json row;
    row["channel"] = c.name;
    row["dtw"] = c.dtw_distance;
    row["r"] = c.correlation.degenerate ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.correlation.r);
    j.push_back(row);
  }
  std::cout << j.dump() << '\n';
}

void grad_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradient_suites(seed)) {
    nlohmann::ordered_json j;
    j["suite"] = r.name;
    j["max_relative_error"] = r.max_relative_error;
    j["tolerance"] = r.tolerance;
    j["probes"] = r.probes;
    j["worst"] = r.worst;
    j["pass"] = r.passed();
    std::cout << j.dump() << '\n';
    ok = ok && r.passed();
  }
  if (!ok) throw CheckFailed("finite-difference check failed");
}

int report(const std::string& command, const char* kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["kind"] = kind;
  j["error"] = message;
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ciwagan: articulatory GAN with categorical codes (desk scale)"};
  app.footer("Environment: CIWA_THREADS caps internal parallelism (default: hardware concurrency).");
  app.require_subcommand(1);

  SynthCorpusArgs sc;
  auto* c_synth = app.add_subcommand("synth-corpus", "Render the synthetic lexicon corpus and its transcription calibration");
  c_synth->add_option("--config", sc.config, "key=value run config (defaults when omitted)");
  c_synth->add_option("--out-dir", sc.out_dir, "output directory (default: paths.corpus)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train Generator, critic and Q-network; writes checkpoint and metrics");
  c_train->add_option("--config", tr.config, "key=value run config (defaults when omitted)");
  c_train->add_flag("--resume", tr.resume, "continue from paths.checkpoint up to train.steps");

  GenerateArgs ge;
  auto* c_gen = app.add_subcommand("generate", "Generate EMA trajectories and audio for one code");
  c_gen->add_option("--checkpoint", ge.checkpoint, "checkpoint file")->required();
  c_gen->add_option("--code", ge.code, "code index")->required();
  c_gen->add_option("--scale", ge.scale, "code value (one-hot scale)")->capture_default_str();
  c_gen->add_option("--count", ge.count, "number of outputs")->capture_default_str();
  c_gen->add_option("--seed", ge.seed, "latent and noise seed")->capture_default_str();
  c_gen->add_option("--out-dir", ge.out_dir, "output directory")->capture_default_str();

  ProbeArgs pr;
  auto* c_probe = app.add_subcommand("probe", "Transcribe outputs for every code at an extreme code value");
  c_probe->add_option("--checkpoint", pr.checkpoint, "checkpoint file");
  c_probe->add_flag("--template-stub", pr.template_stub,
                    "probe a stand-in generator that emits the word-k template for code k");
  c_probe->add_option("--scale", pr.scale, "code value (default: probe.scale)")->check(CLI::IsMember({1, 15, 20}));
  c_probe->add_option("--config", pr.config, "key=value run config for probe.* and paths.corpus");
  c_probe->add_option("--calibration", pr.calibration, "calibration JSON (default: paths.corpus/calibration.json)");
  c_probe->add_option("--out-dir", pr.out_dir, "output directory")->capture_default_str();

  EvalLexArgs el;
  auto* c_lex = app.add_subcommand("eval-lex", "Multinomial model comparison on a probe count table");
  c_lex->add_option("--counts", el.counts, "count table CSV")->required();
  c_lex->add_option("--out-dir", el.out_dir, "output directory")->capture_default_str();

  EvalEmaArgs ee;
  auto* c_ema = app.add_subcommand("eval-ema", "DTW distance and aligned correlation per EMA channel");
  c_ema->add_option("--generated", ee.generated, "generated EMA CSV")->required();
  c_ema->add_option("--reference", ee.reference, "reference EMA CSV")->required();
  c_ema->add_option("--scale", ee.scale, "reference scale factor")->capture_default_str();
  c_ema->add_option("--span", ee.span, "LOESS span")->capture_default_str();
  c_ema->add_option("--out-dir", ee.out_dir, "output directory")->capture_default_str();

  std::uint64_t gc_seed = 1;
  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference checks of every differentiable component");
  c_grad->add_option("--seed", gc_seed, "probe seed")->capture_default_str();

  std::string command = "ciwagan";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
    return report(command, "validation", e.what(), 1);
  }
  command = app.get_subcommands().front()->get_name();

  try {
    if (*c_synth) synth_corpus(sc);
    if (*c_train) train_command(tr);
    if (*c_gen) generate_command(ge);
    if (*c_probe) probe_command(pr);
    if (*c_lex) eval_lex(el);
    if (*c_ema) eval_ema(ee);
    if (*c_grad) grad_check(gc_seed);
  } catch (const InputError& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const ConfigError& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const FormatError& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const CheckpointError& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const std::invalid_argument& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const std::out_of_range& e) {
    return report(command, "validation", e.what(), 1);
  } catch (const std::exception& e) {
    return report(command, "runtime", e.what(), 2);
  }
  return 0;
}
