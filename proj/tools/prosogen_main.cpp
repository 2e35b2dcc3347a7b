// prosogen: synthetic prosody-modelling experiments comparing a
// deterministic L2 decoder, a conditional normalizing flow, and a
// score-based diffusion decoder with an informative prior.
//
// Exit codes: 0 success, 2 usage/config, 3 IO, 4 numeric failure,
// 5 data mismatch.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prosogen/config.hpp"
#include "prosogen/eval.hpp"
#include "prosogen/model.hpp"

namespace fs = std::filesystem;
using namespace prosogen;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitMismatch = 5;

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig config = ExperimentConfig::from_file(path);
  if (seed_override) config.seed = *seed_override;
  return config;
}

void write_json_file(const fs::path& path, const nlohmann::ordered_json& j) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  const ExperimentConfig config = load_config(config_path, seed);
  CorpusManifest manifest;
  manifest.task = config.task;
  manifest.seed = config.seed;
  manifest.config = config.to_json();
  if (config.task == TaskKind::prosody) {
    const Corpus corpus = gen_corpus(config.data, config.seed);
    save_corpus_dir(out_dir, corpus, manifest);
    std::printf("wrote %zu/%zu/%zu train/dev/test utterances to %s\n", corpus.train.size(),
                corpus.dev.size(), corpus.test.size(), out_dir.c_str());
  } else {
    const FrameCorpus corpus = gen_frame_corpus(config.data, config.seed);
    save_corpus_dir(out_dir, corpus, manifest);
    std::printf("wrote %zu/%zu/%zu train/dev/test frame-task utterances to %s\n",
                corpus.train.size(), corpus.dev.size(), corpus.test.size(), out_dir.c_str());
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& corpus_dir,
              const std::string& model_name, const std::string& out_ckpt,
              std::optional<std::uint64_t> seed) {
  ExperimentConfig config = load_config(config_path, seed);
  config.model = model_from_string(model_name);
  const CorpusManifest manifest = read_corpus_manifest(corpus_dir);
  config.task = manifest.task;

  Model model = build_model(config.model_spec(), config.seed);
  TrainResult result;
  if (config.task == TaskKind::prosody) {
    const auto train_split = load_corpus_split<UtteranceRecord>(corpus_dir, "train");
    result = train_model(model, train_split, config.train_options());
  } else {
    const auto train_split = load_corpus_split<FrameTaskRecord>(corpus_dir, "train");
    result = train_model(model, train_split, config.train_options());
  }

  std::error_code ec;
  fs::create_directories(out_ckpt, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + out_ckpt);
  save_checkpoint(model.params, out_ckpt);
  write_train_meta(out_ckpt, config, result.curve);
  const std::vector<std::string> components =
      config.model == ModelKind::diff ? std::vector<std::string>{"score_term", "l1_term"}
                                      : std::vector<std::string>{};
  write_loss_csv(result.curve, fs::path(out_ckpt) / "loss.csv", components);
  std::printf("trained %s on %s for %d steps: loss %.6f -> %.6f\n", model_name.c_str(),
              to_string(config.task).c_str(), config.training.steps, result.curve.first(),
              result.curve.last());
  return kExitOk;
}

int cmd_sample(const std::string& ckpt, const std::string& corpus_dir, const std::string& split,
               std::optional<double> tau, int draws, const std::string& out_file,
               std::optional<std::uint64_t> seed, int threads) {
  ExperimentConfig config = read_train_meta(ckpt);
  Model model = load_model(ckpt);
  if (tau && *tau < 0.0) throw ContractError("tau must be >= 0");
  const double tau_value = tau ? *tau : config.resolved_tau();
  const std::uint64_t sample_seed = seed ? *seed : config.seed;

  int n_draws = draws;
  if (model.spec.kind == ModelKind::l2 && draws != 1) {
    std::fprintf(stderr,
                 "warning: the l2 head is deterministic; forcing --draws %d -> 1\n", draws);
    n_draws = 1;
  }
  const auto records = load_corpus_split<UtteranceRecord>(corpus_dir, split);
  const auto samples = sample_prosody(model, records, tau_value, n_draws, sample_seed, threads);
  if (fs::path(out_file).has_parent_path()) {
    std::error_code ec;
    fs::create_directories(fs::path(out_file).parent_path(), ec);
  }
  save_jsonl(samples, out_file);

  nlohmann::ordered_json meta;
  meta["format"] = "prosogen-samples";
  meta["model"] = to_string(model.spec.kind);
  meta["ckpt"] = ckpt;
  meta["corpus"] = corpus_dir;
  meta["split"] = split;
  meta["tau"] = tau_value;
  meta["draws"] = n_draws;
  meta["seed"] = sample_seed;
  meta["config"] = config.to_json();
  write_json_file(out_file + ".meta.json", meta);
  std::printf("sampled %zu records (tau %.3g, %d draw(s)) to %s\n", samples.size(), tau_value,
              n_draws, out_file.c_str());
  return kExitOk;
}

std::string model_name_for(const fs::path& generated_file) {
  std::ifstream is(generated_file.string() + ".meta.json", std::ios::binary);
  if (is) {
    try {
      nlohmann::json j = nlohmann::json::parse(is);
      if (j.contains("model")) return j.at("model").get<std::string>();
    } catch (const nlohmann::json::parse_error&) {
    }
  }
  return generated_file.stem().string();
}

int cmd_eval(const std::string& oracle_dir, const std::vector<std::string>& generated,
             const std::string& split, const std::string& out_report,
             const HistogramSpec* spec_override) {
  const auto oracle = load_corpus_split<UtteranceRecord>(oracle_dir, split);
  const CorpusManifest manifest = read_corpus_manifest(oracle_dir);
  if (manifest.task != TaskKind::prosody)
    throw ContractError("eval compares prosody features; corpus task is " +
                        to_string(manifest.task));

  HistogramSpec spec;
  if (spec_override != nullptr) spec = *spec_override;
  std::map<std::string, std::vector<SampleRecord>> by_model;
  for (const auto& file : generated) {
    std::string name = model_name_for(file);
    while (by_model.count(name)) name += "+";
    by_model.emplace(std::move(name), load_jsonl<SampleRecord>(file));
  }

  EvalReport report = build_report(oracle, by_model, spec);
  report.provenance = nlohmann::ordered_json{{"oracle", oracle_dir},
                                             {"split", split},
                                             {"generated", generated},
                                             {"corpus_seed", manifest.seed}};
  write_json_file(out_report, report.to_json());
  const std::string table = report.to_text_table();
  {
    std::ofstream os(out_report + ".txt", std::ios::binary);
    if (!os) throw IoError("cannot write " + out_report + ".txt");
    os << table;
  }
  std::fputs(table.c_str(), stdout);
  return kExitOk;
}

int cmd_sweep_tau(const std::vector<std::string>& ckpts, const std::string& corpus_dir,
                  const std::string& taus_csv, int draws, const std::string& out_report,
                  std::optional<std::uint64_t> seed) {
  std::vector<double> taus;
  {
    std::string tmp = taus_csv;
    for (char& c : tmp)
      if (c == ',') c = ' ';
    std::istringstream is(tmp);
    double v;
    while (is >> v) taus.push_back(v);
  }
  if (taus.empty()) throw ContractError("no temperatures given");
  for (double t : taus)
    if (t < 0.0) throw ContractError("tau must be >= 0");

  const auto oracle = load_corpus_split<UtteranceRecord>(corpus_dir, "test");
  const FeaturePool oracle_pool = pool_features(oracle);
  HistogramSpec spec;

  nlohmann::ordered_json j;
  j["format"] = "prosogen-tau-sweep";
  j["taus"] = taus;
  j["models"] = nlohmann::ordered_json::object();
  std::string table = "tau sweep (pooled over the test split)\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %6s %10s %10s %10s %10s\n", "model", "tau",
                "std_logf0", "std_dur", "jsd_logf0", "jsd_dur");
  table += line;

  std::map<std::string, double> std_range;
  for (const auto& ckpt : ckpts) {
    const ExperimentConfig config = read_train_meta(ckpt);
    if (config.model == ModelKind::l2)
      throw ContractError("checkpoint " + ckpt +
                          " holds the deterministic l2 head; temperature has no effect");
    Model model = load_model(ckpt);
    const std::string name = to_string(model.spec.kind);
    const std::uint64_t sweep_seed = seed ? *seed : config.seed;

    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (double tau : taus) {
      const auto samples = sample_prosody(model, oracle, tau, draws, sweep_seed);
      const FeaturePool pool = pool_features(samples);
      const double std_f0 = pooled_std(pool.log_f0);
      std::vector<double> dur(pool.duration.begin(), pool.duration.end());
      const double std_dur = pooled_std(dur);
      const double jsd_f0 = jsd(pool.log_f0, oracle_pool.log_f0, spec);
      const double jsd_dur_v = jsd_integer(pool.duration, oracle_pool.duration, spec);
      rows.push_back({{"tau", tau},
                      {"std_logf0", std_f0},
                      {"std_dur", std_dur},
                      {"jsd_logf0", jsd_f0},
                      {"jsd_dur", jsd_dur_v}});
      std::snprintf(line, sizeof line, "%-6s %6.2f %10.4f %10.4f %10.4f %10.4f\n", name.c_str(),
                    tau, std_f0, std_dur, jsd_f0, jsd_dur_v);
      table += line;
      lo = first ? std_f0 : std::min(lo, std_f0);
      hi = first ? std_f0 : std::max(hi, std_f0);
      first = false;
    }
    j["models"][name] = rows;
    std_range[name] = hi - lo;
  }
  nlohmann::ordered_json ranges;
  for (const auto& [name, r] : std_range) ranges[name] = r;
  j["std_logf0_range"] = ranges;

  write_json_file(out_report, j);
  {
    std::ofstream os(out_report + ".txt", std::ios::binary);
    os << table;
  }
  std::fputs(table.c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prosody decoder comparison experiments"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_path, model_name, split = "test";
  std::string ckpt, taus_csv = "0.2,0.4,0.6,0.8";
  std::vector<std::string> ckpts, generated;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  int draws = 1, threads = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--out", out_path, "output corpus directory")->required();
  gen->add_option("--seed", seed, "override the config seed");

  auto* train = app.add_subcommand("train", "train one decoder on a corpus");
  train->add_option("--config", config_path)->required();
  train->add_option("--corpus", corpus_dir)->required();
  train->add_option("--model", model_name, "l2 | flow | diff")->required();
  train->add_option("--out", out_path, "checkpoint directory")->required();
  train->add_option("--seed", seed);

  auto* sample = app.add_subcommand("sample", "draw prosody sequences from a checkpoint");
  sample->add_option("--ckpt", ckpt)->required();
  sample->add_option("--corpus", corpus_dir)->required();
  sample->add_option("--split", split, "train | dev | test");
  sample->add_option("--tau", tau, "temperature (default: family choice)");
  sample->add_option("--draws", draws, "draws per utterance");
  sample->add_option("--out", out_path)->required();
  sample->add_option("--seed", seed);
  sample->add_option("--threads", threads, "parallel sampling threads");

  auto* eval_cmd = app.add_subcommand("eval", "compare generated samples against the oracle");
  eval_cmd->add_option("--oracle", corpus_dir, "oracle corpus directory")->required();
  eval_cmd->add_option("--generated", generated, "sample JSONL files")->required()->expected(-1);
  eval_cmd->add_option("--split", split);
  eval_cmd->add_option("--out", out_path, "report JSON path")->required();

  auto* sweep = app.add_subcommand("sweep-tau", "temperature sweep for generative checkpoints");
  sweep->add_option("--ckpt", ckpts, "flow/diff checkpoint(s)")->required()->expected(-1);
  sweep->add_option("--corpus", corpus_dir)->required();
  sweep->add_option("--taus", taus_csv, "comma-separated temperatures");
  sweep->add_option("--draws", draws);
  sweep->add_option("--out", out_path)->required();
  sweep->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed);
    if (train->parsed()) return cmd_train(config_path, corpus_dir, model_name, out_path, seed);
    if (sample->parsed())
      return cmd_sample(ckpt, corpus_dir, split, tau, draws, out_path, seed, threads);
    if (eval_cmd->parsed()) return cmd_eval(corpus_dir, generated, split, out_path, nullptr);
    if (sweep->parsed())
      return cmd_sweep_tau(ckpts, corpus_dir, taus_csv, draws, out_path, seed);
  } catch (const DataMismatchError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMismatch;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
