#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "prosogen/data.hpp"
#include "prosogen/eval.hpp"
#include "prosogen/model.hpp"

namespace prosogen {

/// One experiment, fully described by a single JSON document. Every field
/// has a default; flags may override file values. The resolved config is
/// echoed into all artifacts for provenance.
struct ExperimentConfig {
  std::uint64_t seed = 1234;
  TaskKind task = TaskKind::prosody;
  ModelKind model = ModelKind::l2;
  SyntheticSpec data;
  // Train decoders on standardized targets (shift/scale from the analytic
  // pooled moments of the synthetic law); predictions are mapped back at the
  // model boundary. Prosody task only.
  bool standardize_targets = false;
  EncoderConfig encoder;  // vocabularies are resolved from `data` and `task`
  RegressionConfig regression;
  FlowConfig flow;
  DiffusionConfig diffusion;
  TrainOptions training;
  struct Sampling {
    std::optional<double> tau;  // family default when absent: flow 0.4, diff 0.8
    int n_draws = 1;
    int threads = 1;
  } sampling;
  HistogramSpec eval;

  /// Temperature used when none is given: the paper-selected per-family
  /// values (flow 0.4, diffusion 0.8); the deterministic head ignores tau.
  double resolved_tau() const {
    if (sampling.tau) return *sampling.tau;
    return model == ModelKind::flow ? 0.4 : 0.8;
  }

  ModelSpec model_spec() const {
    ModelSpec spec;
    spec.task = task;
    spec.kind = model;
    spec.encoder = encoder;
    spec.encoder.phone_vocab = data.n_phonemes;
    spec.encoder.style_vocab = task == TaskKind::prosody ? data.n_styles : data.n_speakers;
    spec.frame_dim = data.frame_dim;
    spec.regression = regression;
    spec.flow = flow;
    spec.diffusion = diffusion;
    if (standardize_targets && task == TaskKind::prosody) {
      const PooledMoments m = oracle_pooled_moments(data);
      spec.target_shift = {m.mean_logf0, m.mean_dur};
      spec.target_scale = {m.std_logf0, m.std_dur};
    }
    spec.finalize();
    return spec;
  }

  TrainOptions train_options() const {
    TrainOptions opt = training;
    opt.seed = seed;
    return opt;
  }

  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);
};

inline nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["task"] = to_string(task);
  j["model"] = to_string(model);
  j["data"] = prosogen::to_json(data);
  j["standardize_targets"] = standardize_targets;
  j["encoder"] = {{"phone_dim", encoder.phone_dim},     {"style_dim", encoder.style_dim},
                  {"context_width", encoder.context_width}, {"hidden", encoder.hidden},
                  {"depth", encoder.depth},             {"out_dim", encoder.out_dim}};
  j["regression"] = {{"hidden", regression.hidden}, {"depth", regression.depth}};
  j["flow"] = {{"n_steps", flow.n_steps},
               {"hidden", flow.hidden},
               {"depth", flow.depth},
               {"s_max", flow.s_max}};
  j["diffusion"] = {{"hidden", diffusion.hidden},
                    {"depth", diffusion.depth},
                    {"time_dim", diffusion.time_dim},
                    {"beta0", diffusion.schedule.beta0},
                    {"beta1", diffusion.schedule.beta1},
                    {"t_min", diffusion.schedule.t_min},
                    {"n_sample_steps", diffusion.schedule.n_sample_steps}};
  j["training"] = {{"steps", training.steps},
                   {"batch_size", training.batch_size},
                   {"lr", training.lr},
                   {"clip_norm", training.clip_norm},
                   {"average_last", training.average_last}};
  nlohmann::ordered_json samp;
  if (sampling.tau) samp["tau"] = *sampling.tau;
  samp["n_draws"] = sampling.n_draws;
  samp["threads"] = sampling.threads;
  j["sampling"] = samp;
  j["eval"] = {{"n_bins", eval.n_bins},
               {"expand", eval.expand},
               {"alpha", eval.alpha},
               {"dur_bin_cap", eval.dur_bin_cap}};
  return j;
}

namespace config_detail {

template <typename T>
void take(const nlohmann::json& j, const char* name, T& dst) {
  if (j.contains(name)) dst = j.at(name).get<T>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ContractError("unknown config key '" + key + "' in " + where);
  }
}

}  // namespace config_detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  using config_detail::check_keys;
  using config_detail::take;
  check_keys(j, {"seed", "task", "model", "data", "standardize_targets", "encoder", "regression",
                 "flow", "diffusion", "training", "sampling", "eval"},
             "config root");
  ExperimentConfig c;
  take(j, "seed", c.seed);
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("model")) c.model = model_from_string(j.at("model").get<std::string>());
  if (j.contains("data")) c.data = synthetic_spec_from_json(j.at("data"));
  take(j, "standardize_targets", c.standardize_targets);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, {"phone_dim", "style_dim", "context_width", "hidden", "depth", "out_dim"},
               "encoder");
    take(e, "phone_dim", c.encoder.phone_dim);
    take(e, "style_dim", c.encoder.style_dim);
    take(e, "context_width", c.encoder.context_width);
    take(e, "hidden", c.encoder.hidden);
    take(e, "depth", c.encoder.depth);
    take(e, "out_dim", c.encoder.out_dim);
  }
  if (j.contains("regression")) {
    const auto& r = j.at("regression");
    check_keys(r, {"hidden", "depth"}, "regression");
    take(r, "hidden", c.regression.hidden);
    take(r, "depth", c.regression.depth);
  }
  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    check_keys(f, {"n_steps", "hidden", "depth", "s_max"}, "flow");
    take(f, "n_steps", c.flow.n_steps);
    take(f, "hidden", c.flow.hidden);
    take(f, "depth", c.flow.depth);
    take(f, "s_max", c.flow.s_max);
  }
  if (j.contains("diffusion")) {
    const auto& d = j.at("diffusion");
    check_keys(d, {"hidden", "depth", "time_dim", "beta0", "beta1", "t_min", "n_sample_steps"},
               "diffusion");
    take(d, "hidden", c.diffusion.hidden);
    take(d, "depth", c.diffusion.depth);
    take(d, "time_dim", c.diffusion.time_dim);
    take(d, "beta0", c.diffusion.schedule.beta0);
    take(d, "beta1", c.diffusion.schedule.beta1);
    take(d, "t_min", c.diffusion.schedule.t_min);
    take(d, "n_sample_steps", c.diffusion.schedule.n_sample_steps);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, {"steps", "batch_size", "lr", "clip_norm", "average_last"}, "training");
    take(t, "steps", c.training.steps);
    take(t, "batch_size", c.training.batch_size);
    take(t, "lr", c.training.lr);
    take(t, "clip_norm", c.training.clip_norm);
    take(t, "average_last", c.training.average_last);
  }
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    check_keys(s, {"tau", "n_draws", "threads"}, "sampling");
    if (s.contains("tau")) c.sampling.tau = s.at("tau").get<double>();
    take(s, "n_draws", c.sampling.n_draws);
    take(s, "threads", c.sampling.threads);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"n_bins", "expand", "alpha", "dur_bin_cap"}, "eval");
    take(e, "n_bins", c.eval.n_bins);
    take(e, "expand", c.eval.expand);
    take(e, "alpha", c.eval.alpha);
    take(e, "dur_bin_cap", c.eval.dur_bin_cap);
  }
  return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Corpus directory layout
// ---------------------------------------------------------------------------
//
// <dir>/manifest.json plus train.jsonl / dev.jsonl / test.jsonl. The manifest
// carries the task, the generation seed, and the resolved config.

struct CorpusManifest {
  TaskKind task = TaskKind::prosody;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config;
};

inline void write_corpus_manifest(const std::filesystem::path& dir, const CorpusManifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "prosogen-corpus";
  j["task"] = to_string(m.task);
  j["seed"] = m.seed;
  j["config"] = m.config;
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << j.dump(2) << '\n';
}

inline CorpusManifest read_corpus_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json", std::ios::binary);
  if (!is) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  CorpusManifest m;
  m.task = task_from_string(j.at("task").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("config")) m.config = j.at("config");
  return m;
}

inline void save_corpus_dir(const std::filesystem::path& dir, const Corpus& corpus,
                            const CorpusManifest& manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string());
  save_jsonl(corpus.train, dir / "train.jsonl");
  save_jsonl(corpus.dev, dir / "dev.jsonl");
  save_jsonl(corpus.test, dir / "test.jsonl");
  write_corpus_manifest(dir, manifest);
}

inline void save_corpus_dir(const std::filesystem::path& dir, const FrameCorpus& corpus,
                            const CorpusManifest& manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string());
  save_jsonl(corpus.train, dir / "train.jsonl");
  save_jsonl(corpus.dev, dir / "dev.jsonl");
  save_jsonl(corpus.test, dir / "test.jsonl");
  write_corpus_manifest(dir, manifest);
}

template <typename Record>
std::vector<Record> load_corpus_split(const std::filesystem::path& dir, const std::string& split) {
  if (split != "train" && split != "dev" && split != "test")
    throw ContractError("unknown split '" + split + "'");
  return load_jsonl<Record>(dir / (split + ".jsonl"));
}

// ---------------------------------------------------------------------------
// Checkpoint metadata
// ---------------------------------------------------------------------------

inline void write_train_meta(const std::filesystem::path& ckpt_dir, const ExperimentConfig& config,
                             const LossCurve& curve) {
  nlohmann::ordered_json j;
  j["format"] = "prosogen-checkpoint";
  j["task"] = to_string(config.task);
  j["model"] = to_string(config.model);
  j["seed"] = config.seed;
  j["config"] = config.to_json();
  j["final_loss"] = curve.points.empty() ? 0.0 : curve.last();
  std::ofstream os(ckpt_dir / "train_meta.json", std::ios::binary);
  if (!os) throw IoError("cannot write " + (ckpt_dir / "train_meta.json").string());
  os << j.dump(2) << '\n';
}

inline ExperimentConfig read_train_meta(const std::filesystem::path& ckpt_dir) {
  std::ifstream is(ckpt_dir / "train_meta.json", std::ios::binary);
  if (!is)
    throw ContractError("checkpoint " + ckpt_dir.string() +
                        " has no train_meta.json; cannot reconstruct the model");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError((ckpt_dir / "train_meta.json").string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j.at("config"));
}

/// Rebuilds the model architecture from checkpoint metadata and loads the
/// trained weights into it.
inline Model load_model(const std::filesystem::path& ckpt_dir) {
  const ExperimentConfig config = read_train_meta(ckpt_dir);
  Model model = build_model(config.model_spec(), config.seed);
  load_checkpoint_into(model.params, ckpt_dir);
  return model;
}

}  // namespace prosogen
