#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosogen/data.hpp"
#include "prosogen/errors.hpp"

namespace prosogen {

/// Shared-bin histogram policy for JSD estimates. Both samples are binned on
/// identical edges spanning their joint range (expanded 1%), and every bin
/// receives alpha smoothing mass before normalization.
struct HistogramSpec {
  int n_bins = 64;
  double expand = 0.01;
  double alpha = 1e-6;
  int dur_bin_cap = 64;  // durations: one bin per frame count up to the cap, then overflow

  void validate() const {
    if (n_bins < 2) throw ContractError("histogram needs at least 2 bins");
    if (alpha < 0.0 || expand < 0.0) throw ContractError("histogram spec has negative fields");
    if (dur_bin_cap < 2) throw ContractError("dur_bin_cap must be >= 2");
  }
};

/// Population standard deviation over all values pooled corpus-wide.
inline double pooled_std(const std::vector<double>& values) {
  if (values.size() < 2) throw ContractError("pooled_std needs at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size()));
}

/// Within-utterance first differences, concatenated across utterances and
/// never across their boundaries. Length-1 sequences contribute nothing.
inline std::vector<double> delta_series(const std::vector<std::vector<double>>& sequences) {
  std::vector<double> out;
  for (const auto& seq : sequences)
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) out.push_back(seq[i + 1] - seq[i]);
  return out;
}

struct Histogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<double> mass;   // normalized, n_bins
};

namespace eval_detail {

inline std::vector<double> shared_edges(const std::vector<double>& a, const std::vector<double>& b,
                                        const HistogramSpec& spec) {
  double lo = a.front(), hi = a.front();
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi - lo;
  if (span <= 0.0) span = std::max(1e-9, std::abs(lo) * 1e-9 + 1e-9);
  lo -= 0.5 * spec.expand * span;
  hi += 0.5 * spec.expand * span;
  std::vector<double> edges(static_cast<std::size_t>(spec.n_bins) + 1);
  for (int i = 0; i <= spec.n_bins; ++i)
    edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / spec.n_bins;
  return edges;
}

inline std::vector<double> bin_counts(const std::vector<double>& values,
                                      const std::vector<double>& edges) {
  const int n_bins = static_cast<int>(edges.size()) - 1;
  std::vector<double> counts(static_cast<std::size_t>(n_bins), 0.0);
  const double lo = edges.front(), hi = edges.back();
  for (double v : values) {
    int idx;
    if (v <= lo) {
      idx = 0;
    } else if (v >= hi) {
      idx = n_bins - 1;
    } else {
      idx = static_cast<int>((v - lo) / (hi - lo) * n_bins);
      idx = std::clamp(idx, 0, n_bins - 1);
    }
    counts[static_cast<std::size_t>(idx)] += 1.0;
  }
  return counts;
}

inline std::vector<double> smooth_normalize(std::vector<double> counts, double alpha) {
  double total = 0.0;
  for (double& c : counts) {
    c += alpha;
    total += c;
  }
  for (double& c : counts) c /= total;
  return counts;
}

/// Jensen-Shannon divergence between two probability vectors, natural log.
inline double jsd_from_masses(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, acc);
}

}  // namespace eval_detail

inline Histogram histogram(const std::vector<double>& values, const std::vector<double>& edges,
                           double alpha) {
  Histogram h;
  h.edges = edges;
  h.mass = eval_detail::smooth_normalize(eval_detail::bin_counts(values, edges), alpha);
  return h;
}

/// JSD between two samples on shared histogram edges; symmetric, bounded by
/// ln 2, natural log.
inline double jsd(const std::vector<double>& a, const std::vector<double>& b,
                  const HistogramSpec& spec) {
  spec.validate();
  if (a.empty() || b.empty()) throw ContractError("jsd requires non-empty samples");
  const auto edges = eval_detail::shared_edges(a, b, spec);
  const auto p = eval_detail::smooth_normalize(eval_detail::bin_counts(a, edges), spec.alpha);
  const auto q = eval_detail::smooth_normalize(eval_detail::bin_counts(b, edges), spec.alpha);
  return eval_detail::jsd_from_masses(p, q);
}

/// JSD for integer-valued durations: one bin per frame count in [1, cap]
/// plus an overflow bin, shared by construction.
inline double jsd_integer(const std::vector<int>& a, const std::vector<int>& b,
                          const HistogramSpec& spec) {
  spec.validate();
  if (a.empty() || b.empty()) throw ContractError("jsd requires non-empty samples");
  const int cap = spec.dur_bin_cap;
  auto counts = [&](const std::vector<int>& v) {
    std::vector<double> c(static_cast<std::size_t>(cap) + 1, 0.0);  // [1..cap] + overflow
    for (int x : v) {
      const int idx = x <= cap ? std::max(1, x) - 1 : cap;
      c[static_cast<std::size_t>(idx)] += 1.0;
    }
    return eval_detail::smooth_normalize(std::move(c), spec.alpha);
  };
  return eval_detail::jsd_from_masses(counts(a), counts(b));
}

// ---------------------------------------------------------------------------
// Comparison report
// ---------------------------------------------------------------------------

struct FeaturePool {
  std::vector<double> log_f0;
  std::vector<int> duration;
  std::vector<std::vector<double>> log_f0_sequences;
  std::size_t n_sequences = 0;
};

inline FeaturePool pool_features(const std::vector<UtteranceRecord>& records) {
  FeaturePool pool;
  for (const auto& r : records) {
    pool.log_f0.insert(pool.log_f0.end(), r.log_f0.begin(), r.log_f0.end());
    pool.duration.insert(pool.duration.end(), r.duration.begin(), r.duration.end());
    pool.log_f0_sequences.push_back(r.log_f0);
  }
  pool.n_sequences = records.size();
  return pool;
}

inline FeaturePool pool_features(const std::vector<SampleRecord>& records) {
  FeaturePool pool;
  for (const auto& r : records) {
    pool.log_f0.insert(pool.log_f0.end(), r.log_f0.begin(), r.log_f0.end());
    pool.duration.insert(pool.duration.end(), r.duration.begin(), r.duration.end());
    pool.log_f0_sequences.push_back(r.log_f0);
  }
  pool.n_sequences = records.size();
  return pool;
}

/// One row of the comparison: the three pooled standard deviations and, for
/// generated rows, the JSD against the oracle pool.
struct ModelEval {
  double std_logf0 = 0.0;
  double std_dur = 0.0;
  double std_delta_logf0 = 0.0;
  double jsd_logf0 = -1.0;  // -1 marks "not applicable" (oracle row)
  double jsd_dur = -1.0;
  std::map<int, double> jsd_logf0_by_bins;  // binning sensitivity: 32/64/128
  std::size_t n_values = 0;
  Histogram hist_logf0;
};

struct EvalReport {
  ModelEval oracle;
  std::map<std::string, ModelEval> models;
  HistogramSpec spec;
  nlohmann::ordered_json provenance;  // resolved config + seed echo

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "prosogen-eval-report";
    j["jsd_log_base"] = "natural";  // values bounded by ln 2
    j["n_bins"] = spec.n_bins;
    if (!provenance.is_null()) j["provenance"] = provenance;
    auto row = [](const ModelEval& m, bool with_jsd) {
      nlohmann::ordered_json r;
      r["std_logf0"] = m.std_logf0;
      r["std_dur"] = m.std_dur;
      r["std_delta_logf0"] = m.std_delta_logf0;
      if (with_jsd) {
        r["jsd_logf0"] = m.jsd_logf0;
        r["jsd_dur"] = m.jsd_dur;
        nlohmann::ordered_json sens;
        for (const auto& [bins, v] : m.jsd_logf0_by_bins) sens[std::to_string(bins)] = v;
        r["jsd_logf0_by_bins"] = sens;
      }
      r["n_values"] = m.n_values;
      r["histogram_logf0"] = {{"edges", m.hist_logf0.edges}, {"mass", m.hist_logf0.mass}};
      return r;
    };
    j["oracle"] = row(oracle, false);
    j["models"] = nlohmann::ordered_json::object();
    for (const auto& [name, m] : models) j["models"][name] = row(m, true);
    return j;
  }

  /// Plain-text rendering with one row per system and five numeric columns.
  std::string to_text_table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %8s %8s %10s %10s %8s\n", "system", "logf0",
                  "dur", "dlogf0", "jsd_f0", "jsd_dur");
    out += "STD and JSD per system (JSD in nats, bound ln 2)\n";
    out += line;
    auto render = [&](const std::string& name, const ModelEval& m, bool with_jsd) {
      if (with_jsd)
        std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %10.4f %10.4f %8.4f\n", name.c_str(),
                      m.std_logf0, m.std_dur, m.std_delta_logf0, m.jsd_logf0, m.jsd_dur);
      else
        std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %10.4f %10s %8s\n", name.c_str(),
                      m.std_logf0, m.std_dur, m.std_delta_logf0, "-", "-");
      out += line;
    };
    render("oracle", oracle, false);
    for (const auto& [name, m] : models) render(name, m, true);
    return out;
  }
};

namespace eval_detail {

inline ModelEval eval_pool(const FeaturePool& pool) {
  ModelEval m;
  m.std_logf0 = pooled_std(pool.log_f0);
  std::vector<double> dur(pool.duration.begin(), pool.duration.end());
  m.std_dur = pooled_std(dur);
  const auto deltas = delta_series(pool.log_f0_sequences);
  m.std_delta_logf0 = deltas.size() >= 2 ? pooled_std(deltas) : 0.0;
  m.n_values = pool.log_f0.size();
  return m;
}

inline void check_same_conditioning(const std::set<std::string>& oracle_ids,
                                    const std::vector<SampleRecord>& samples,
                                    const std::string& model_name) {
  std::set<std::string> sample_ids;
  for (const auto& r : samples) sample_ids.insert(r.utt_id);
  std::vector<std::string> only_oracle, only_model;
  std::set_difference(oracle_ids.begin(), oracle_ids.end(), sample_ids.begin(), sample_ids.end(),
                      std::back_inserter(only_oracle));
  std::set_difference(sample_ids.begin(), sample_ids.end(), oracle_ids.begin(), oracle_ids.end(),
                      std::back_inserter(only_model));
  if (only_oracle.empty() && only_model.empty()) return;
  std::string msg = "model '" + model_name + "' was not sampled over the oracle utterance set;";
  auto list = [&](const char* tag, const std::vector<std::string>& ids) {
    msg += std::string(" ") + tag + ": [";
    for (std::size_t i = 0; i < ids.size() && i < 8; ++i) msg += (i ? ", " : "") + ids[i];
    if (ids.size() > 8) msg += ", ...";
    msg += "]";
  };
  list("missing", only_oracle);
  list("unexpected", only_model);
  throw DataMismatchError(msg);
}

}  // namespace eval_detail

/// Comparison report over a shared conditioning set: pooled STD columns per
/// system plus JSD of each generated pool against the oracle pool, and the
/// log-f0 histogram payloads on common edges.
inline EvalReport build_report(const std::vector<UtteranceRecord>& oracle_records,
                               const std::map<std::string, std::vector<SampleRecord>>& model_samples,
                               const HistogramSpec& spec = {}) {
  spec.validate();
  if (oracle_records.empty()) throw ContractError("build_report: empty oracle corpus");
  std::set<std::string> oracle_ids;
  for (const auto& r : oracle_records) oracle_ids.insert(r.utt_id);

  EvalReport report;
  report.spec = spec;
  const FeaturePool oracle_pool = pool_features(oracle_records);
  report.oracle = eval_detail::eval_pool(oracle_pool);

  // Canonical order: sort samples by (utt_id, draw) so parallel generation
  // cannot change the report.
  std::map<std::string, FeaturePool> pools;
  for (const auto& [name, samples] : model_samples) {
    eval_detail::check_same_conditioning(oracle_ids, samples, name);
    std::vector<SampleRecord> sorted = samples;
    std::sort(sorted.begin(), sorted.end(), [](const SampleRecord& a, const SampleRecord& b) {
      return a.utt_id != b.utt_id ? a.utt_id < b.utt_id : a.draw < b.draw;
    });
    pools.emplace(name, pool_features(sorted));
  }

  // Common histogram edges across every system for the plot payloads.
  std::vector<double> all = oracle_pool.log_f0;
  for (const auto& [name, pool] : pools)
    all.insert(all.end(), pool.log_f0.begin(), pool.log_f0.end());
  const auto edges = eval_detail::shared_edges(all, oracle_pool.log_f0, spec);
  report.oracle.hist_logf0 = histogram(oracle_pool.log_f0, edges, spec.alpha);

  for (const auto& [name, pool] : pools) {
    ModelEval m = eval_detail::eval_pool(pool);
    m.jsd_logf0 = jsd(pool.log_f0, oracle_pool.log_f0, spec);
    m.jsd_dur = jsd_integer(pool.duration, oracle_pool.duration, spec);
    for (int bins : {32, 64, 128}) {
      HistogramSpec s = spec;
      s.n_bins = bins;
      m.jsd_logf0_by_bins[bins] = jsd(pool.log_f0, oracle_pool.log_f0, s);
    }
    m.hist_logf0 = histogram(pool.log_f0, edges, spec.alpha);
    report.models.emplace(name, std::move(m));
  }
  return report;
}

}  // namespace prosogen
