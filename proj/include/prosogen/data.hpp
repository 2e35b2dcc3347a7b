#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosogen/errors.hpp"
#include "prosogen/random.hpp"

namespace prosogen {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One utterance of the prosody task: per-phoneme targets x = (log-f0,
/// duration) plus the ids that condition the models.
struct UtteranceRecord {
  std::string utt_id;
  std::vector<int> phonemes;
  int style = 0;
  int speaker = 0;
  std::vector<double> log_f0;   // speaker-mean-normalized log Hz, per phoneme
  std::vector<int> duration;    // frames per phoneme, >= 1

  bool operator==(const UtteranceRecord&) const = default;
};

/// Raw frame-level input for ingestion: f0 in Hz (0 where unvoiced), voicing
/// flags, and a forced alignment giving frames per phoneme.
struct FrameRecord {
  std::string utt_id;
  std::vector<double> frame_f0;
  std::vector<bool> voicing;
  std::vector<int> alignment;
  int speaker = 0;
  int style = 0;
  std::vector<int> phonemes;

  bool operator==(const FrameRecord&) const = default;
};

/// One utterance of the frame-level surrogate task: the D-dimensional frame
/// features stand in for mel-spectrogram frames.
struct FrameTaskRecord {
  std::string utt_id;
  std::vector<int> phonemes;
  int speaker = 0;
  int style = 0;
  std::vector<double> log_f0;                // per phoneme, conditioning input
  std::vector<int> duration;                 // frames per phoneme
  std::vector<std::vector<double>> frame_feats;  // [sum(duration)][frame_dim]

  bool operator==(const FrameTaskRecord&) const = default;
};

/// One sampled draw from a trained model, tied back to its source utterance.
struct SampleRecord {
  std::string utt_id;
  int draw = 0;
  std::vector<double> log_f0;
  std::vector<int> duration;

  bool operator==(const SampleRecord&) const = default;
};

/// Duration leaves the continuous model space only at synthesis boundaries:
/// round half-up with a floor of one frame.
inline int round_duration(double v) {
  const int r = static_cast<int>(std::floor(v + 0.5));
  return r < 1 ? 1 : r;
}

// ---------------------------------------------------------------------------
// Synthetic corpus law
// ---------------------------------------------------------------------------

struct MixtureComponent {
  double weight = 1.0;
  double mean_logf0 = 0.0;
  double std_logf0 = 0.0;
  double mean_dur = 5.0;
  double std_dur = 0.0;
};

/// Two-component Gaussian mixture over (log-f0, duration), diagonal within a
/// component. Both dimensions share the component draw, so they are jointly
/// bimodal.
struct CellLaw {
  std::array<MixtureComponent, 2> comps;

  void validate() const {
    const double wsum = comps[0].weight + comps[1].weight;
    if (std::abs(wsum - 1.0) > 1e-12)
      throw ContractError("cell mixture weights sum to " + std::to_string(wsum) + ", not 1");
    for (const auto& c : comps) {
      if (c.weight < 0.0) throw ContractError("negative mixture weight");
      if (c.std_logf0 < 0.0 || c.std_dur < 0.0) throw ContractError("negative component std");
      if (c.weight > 0.0 && c.mean_dur < 2.0)
        throw ContractError("duration component mean " + std::to_string(c.mean_dur) +
                            " is below 2 frames");
    }
  }
};

/// Synthetic one-to-many corpus description. Cell mixture parameters are a
/// pure function of (law_seed, p, s); fixed_law pins every cell to one
/// explicit law instead (degenerate corpora for tests).
struct SyntheticSpec {
  int n_phonemes = 8;
  int n_styles = 4;
  int n_speakers = 4;
  int n_train = 6000;
  int n_dev = 400;
  int n_test = 400;
  int len_min = 6;
  int len_max = 12;
  int frame_dim = 8;  // frame-task feature dimension
  std::uint64_t law_seed = 7;
  std::optional<CellLaw> fixed_law;

  void validate() const {
    if (n_phonemes < 1 || n_styles < 1 || n_speakers < 1)
      throw ContractError("synthetic spec requires at least one phoneme, style and speaker");
    if (n_train < 1 || n_dev < 0 || n_test < 0)
      throw ContractError("synthetic spec has degenerate split sizes");
    if (len_min < 1 || len_max < len_min)
      throw ContractError("synthetic spec has a degenerate length range");
    if (frame_dim < 1) throw ContractError("frame_dim must be >= 1");
    if (fixed_law) fixed_law->validate();
  }
};

/// Mixture law of cell (p, s). The draws below give every cell a log-f0 mode
/// separation of at least 2x the pooled component std, so the corpus is
/// genuinely one-to-many and mean-collapse is observable.
inline CellLaw cell_law(const SyntheticSpec& spec, int p, int s) {
  if (p < 0 || p >= spec.n_phonemes || s < 0 || s >= spec.n_styles)
    throw ContractError("cell (" + std::to_string(p) + ", " + std::to_string(s) +
                        ") outside the corpus grid");
  if (spec.fixed_law) return *spec.fixed_law;
  RngStream rng = RngStream(spec.law_seed).fork("cell-law").fork(
      static_cast<std::uint64_t>(p) * 7919u + static_cast<std::uint64_t>(s));
  CellLaw law;
  const double w1 = rng.uniform(0.3, 0.7);
  const double center = rng.uniform(-0.25, 0.25);
  const double sep = rng.uniform(0.5, 1.1);
  const double sd1 = rng.uniform(0.06, 0.14);
  const double sd2 = rng.uniform(0.06, 0.14);
  const double dur_base = rng.uniform(4.5, 6.5);
  const double dur_sep = rng.uniform(1.2, 2.2);
  // Component stds stay >= 0.4 so integer rounding adds no visible bias to
  // the cell means.
  const double dsd1 = rng.uniform(0.4, 0.7);
  const double dsd2 = rng.uniform(0.4, 0.7);
  law.comps[0] = {w1, center - sep / 2.0, sd1, dur_base, dsd1};
  law.comps[1] = {1.0 - w1, center + sep / 2.0, sd2, dur_base + dur_sep, dsd2};
  return law;
}

/// Exact draw from the cell mixture; continuous in both dimensions (the
/// corpus generator rounds duration at the record boundary).
inline std::pair<double, double> oracle_sample(int p, int s, const SyntheticSpec& spec,
                                               RngStream& rng) {
  const CellLaw law = cell_law(spec, p, s);
  const int k = rng.uniform() < law.comps[0].weight ? 0 : 1;
  const auto& c = law.comps[k];
  return {rng.normal(c.mean_logf0, c.std_logf0), rng.normal(c.mean_dur, c.std_dur)};
}

/// Mixture mean per dimension: sum_k w_k mu_k.
inline std::array<double, 2> oracle_conditional_mean(int p, int s, const SyntheticSpec& spec) {
  const CellLaw law = cell_law(spec, p, s);
  std::array<double, 2> mean{0.0, 0.0};
  for (const auto& c : law.comps) {
    mean[0] += c.weight * c.mean_logf0;
    mean[1] += c.weight * c.mean_dur;
  }
  return mean;
}

/// Mixture std per dimension via the law of total variance.
inline std::array<double, 2> oracle_cell_std(int p, int s, const SyntheticSpec& spec) {
  const CellLaw law = cell_law(spec, p, s);
  const auto mean = oracle_conditional_mean(p, s, spec);
  std::array<double, 2> second{0.0, 0.0};
  for (const auto& c : law.comps) {
    second[0] += c.weight * (c.std_logf0 * c.std_logf0 + c.mean_logf0 * c.mean_logf0);
    second[1] += c.weight * (c.std_dur * c.std_dur + c.mean_dur * c.mean_dur);
  }
  return {std::sqrt(std::max(0.0, second[0] - mean[0] * mean[0])),
          std::sqrt(std::max(0.0, second[1] - mean[1] * mean[1]))};
}

/// Corpus-level moments of the uniform-over-cells mixture of mixtures.
struct PooledMoments {
  double mean_logf0 = 0.0, std_logf0 = 0.0;
  double mean_dur = 0.0, std_dur = 0.0;
};

inline PooledMoments oracle_pooled_moments(const SyntheticSpec& spec) {
  double m0 = 0.0, s0 = 0.0, m1 = 0.0, s1 = 0.0;
  const double n_cells = static_cast<double>(spec.n_phonemes) * spec.n_styles;
  for (int p = 0; p < spec.n_phonemes; ++p)
    for (int s = 0; s < spec.n_styles; ++s) {
      const auto mean = oracle_conditional_mean(p, s, spec);
      const auto sd = oracle_cell_std(p, s, spec);
      m0 += mean[0];
      m1 += mean[1];
      s0 += sd[0] * sd[0] + mean[0] * mean[0];
      s1 += sd[1] * sd[1] + mean[1] * mean[1];
    }
  PooledMoments out;
  out.mean_logf0 = m0 / n_cells;
  out.mean_dur = m1 / n_cells;
  out.std_logf0 = std::sqrt(std::max(0.0, s0 / n_cells - out.mean_logf0 * out.mean_logf0));
  out.std_dur = std::sqrt(std::max(0.0, s1 / n_cells - out.mean_dur * out.mean_dur));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

struct Corpus {
  std::vector<UtteranceRecord> train, dev, test;
};

struct FrameCorpus {
  std::vector<FrameTaskRecord> train, dev, test;
};

namespace data_detail {

inline std::string utt_name(const char* split, int index) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%s-%06d", split, index);
  return buf;
}

template <typename MakeRecord>
void gen_split(const SyntheticSpec& spec, RngStream& root, const char* split, int count,
               MakeRecord&& make) {
  RngStream srng = root.fork(split);
  for (int u = 0; u < count; ++u) {
    RngStream rng = srng.fork(static_cast<std::uint64_t>(u));
    UtteranceRecord rec;
    rec.utt_id = utt_name(split, u);
    const int len = spec.len_min + rng.uniform_int(spec.len_max - spec.len_min + 1);
    rec.style = rng.uniform_int(spec.n_styles);
    rec.speaker = rng.uniform_int(spec.n_speakers);
    rec.phonemes.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
      const int p = rng.uniform_int(spec.n_phonemes);
      const auto [f, d] = oracle_sample(p, rec.style, spec, rng);
      rec.phonemes.push_back(p);
      rec.log_f0.push_back(f);
      rec.duration.push_back(round_duration(d));
    }
    make(std::move(rec), rng);
  }
}

}  // namespace data_detail

/// Deterministic synthetic prosody corpus: ids uniform, per-phoneme targets
/// drawn independently from the (p, style) cell mixture, splits disjoint by
/// utt_id prefix.
inline Corpus gen_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Corpus out;
  RngStream root(seed);
  data_detail::gen_split(spec, root, "train", spec.n_train,
                         [&](UtteranceRecord r, RngStream&) { out.train.push_back(std::move(r)); });
  data_detail::gen_split(spec, root, "dev", spec.n_dev,
                         [&](UtteranceRecord r, RngStream&) { out.dev.push_back(std::move(r)); });
  data_detail::gen_split(spec, root, "test", spec.n_test,
                         [&](UtteranceRecord r, RngStream&) { out.test.push_back(std::move(r)); });
  return out;
}

/// Frame-task corpus: same conditioning law as the prosody corpus plus toy
/// frame-level features. Per phoneme p and feature k the contour is
/// base + amp * sin(2 pi f_k (j+0.5)/dur + phase) + 0.15 eps, with
/// (base, amp, phase) a pure function of (law_seed, p, k).
inline FrameCorpus gen_frame_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto frame_law = [&](int p, int k) {
    RngStream r = RngStream(spec.law_seed).fork("frame-law").fork(
        static_cast<std::uint64_t>(p) * 131u + static_cast<std::uint64_t>(k));
    struct {
      double base, amp, phase;
    } lw{r.uniform(-0.5, 0.5), r.uniform(0.2, 0.8), r.uniform(0.0, 2.0 * 3.14159265358979323846)};
    return lw;
  };

  FrameCorpus out;
  RngStream root(RngStream(seed).fork("frames").root_seed());
  auto expand = [&](UtteranceRecord base, RngStream& rng, std::vector<FrameTaskRecord>& dst) {
    FrameTaskRecord rec;
    rec.utt_id = std::move(base.utt_id);
    rec.phonemes = std::move(base.phonemes);
    rec.speaker = base.speaker;
    rec.style = base.style;
    rec.log_f0 = std::move(base.log_f0);
    rec.duration = std::move(base.duration);
    for (std::size_t i = 0; i < rec.phonemes.size(); ++i) {
      const int p = rec.phonemes[i];
      const int dur = rec.duration[i];
      for (int j = 0; j < dur; ++j) {
        std::vector<double> feat(static_cast<std::size_t>(spec.frame_dim));
        for (int k = 0; k < spec.frame_dim; ++k) {
          const auto lw = frame_law(p, k);
          const double fk = 1.0 + 0.5 * k;
          const double phase = 2.0 * 3.14159265358979323846 * fk * (j + 0.5) / dur + lw.phase;
          feat[static_cast<std::size_t>(k)] = lw.base + lw.amp * std::sin(phase) + 0.15 * rng.normal();
        }
        rec.frame_feats.push_back(std::move(feat));
      }
    }
    dst.push_back(std::move(rec));
  };
  data_detail::gen_split(spec, root, "train", spec.n_train,
                         [&](UtteranceRecord r, RngStream& rng) { expand(std::move(r), rng, out.train); });
  data_detail::gen_split(spec, root, "dev", spec.n_dev,
                         [&](UtteranceRecord r, RngStream& rng) { expand(std::move(r), rng, out.dev); });
  data_detail::gen_split(spec, root, "test", spec.n_test,
                         [&](UtteranceRecord r, RngStream& rng) { expand(std::move(r), rng, out.test); });
  return out;
}

// ---------------------------------------------------------------------------
// Frame-level f0 pipeline
// ---------------------------------------------------------------------------

/// Frame-level log-f0: log of voiced f0, linear interpolation across unvoiced
/// gaps (edge gaps hold the nearest voiced value), speaker-mean subtraction,
/// then per-phoneme averaging by the alignment. When no speaker mean is
/// supplied, the record's own voiced-frame mean is used.
inline std::vector<double> f0_pipeline(const FrameRecord& fr,
                                       std::optional<double> speaker_mean = std::nullopt) {
  const std::size_t T = fr.frame_f0.size();
  if (fr.voicing.size() != T)
    throw ContractError(fr.utt_id + ": voicing length differs from frame count");
  std::size_t aligned = 0;
  for (int a : fr.alignment) aligned += static_cast<std::size_t>(a > 0 ? a : 0);
  for (int a : fr.alignment)
    if (a <= 0) throw ContractError(fr.utt_id + ": alignment contains a zero-frame phoneme");
  if (aligned != T)
    throw ContractError(fr.utt_id + ": alignment covers " + std::to_string(aligned) +
                        " frames, record has " + std::to_string(T));

  std::vector<double> logf0(T, 0.0);
  std::vector<std::size_t> voiced;
  for (std::size_t t = 0; t < T; ++t) {
    if (fr.voicing[t]) {
      if (fr.frame_f0[t] <= 0.0)
        throw DomainError(fr.utt_id + ": voiced frame " + std::to_string(t) +
                          " has non-positive f0");
      logf0[t] = std::log(fr.frame_f0[t]);
      voiced.push_back(t);
    }
  }
  if (voiced.empty()) throw PipelineError(fr.utt_id + ": utterance has no voiced frames");

  // Edge gaps: hold the nearest voiced value constant.
  for (std::size_t t = 0; t < voiced.front(); ++t) logf0[t] = logf0[voiced.front()];
  for (std::size_t t = voiced.back() + 1; t < T; ++t) logf0[t] = logf0[voiced.back()];
  // Interior gaps: linear in the frame index.
  for (std::size_t vi = 0; vi + 1 < voiced.size(); ++vi) {
    const std::size_t a = voiced[vi], b = voiced[vi + 1];
    for (std::size_t t = a + 1; t < b; ++t) {
      const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
      logf0[t] = (1.0 - w) * logf0[a] + w * logf0[b];
    }
  }

  double mean;
  if (speaker_mean) {
    mean = *speaker_mean;
  } else {
    double acc = 0.0;
    for (std::size_t t : voiced) acc += logf0[t];
    mean = acc / static_cast<double>(voiced.size());
  }
  for (double& v : logf0) v -= mean;

  std::vector<double> out;
  out.reserve(fr.alignment.size());
  std::size_t t = 0;
  for (int a : fr.alignment) {
    double acc = 0.0;
    for (int j = 0; j < a; ++j) acc += logf0[t++];
    out.push_back(acc / static_cast<double>(a));
  }
  return out;
}

/// Per-speaker mean of voiced-frame log-f0 over a training set.
inline std::map<int, double> speaker_mean_logf0(const std::vector<FrameRecord>& training) {
  std::map<int, double> acc;
  std::map<int, std::size_t> n;
  for (const auto& fr : training) {
    for (std::size_t t = 0; t < fr.frame_f0.size(); ++t) {
      if (!fr.voicing[t]) continue;
      if (fr.frame_f0[t] <= 0.0)
        throw DomainError(fr.utt_id + ": voiced frame " + std::to_string(t) +
                          " has non-positive f0");
      acc[fr.speaker] += std::log(fr.frame_f0[t]);
      n[fr.speaker] += 1;
    }
  }
  std::map<int, double> out;
  for (const auto& [spk, total] : acc) out[spk] = total / static_cast<double>(n[spk]);
  return out;
}

/// Durations are the alignment frame counts, verified.
inline std::vector<int> duration_from_alignment(const FrameRecord& fr) {
  if (fr.alignment.size() != fr.phonemes.size())
    throw ContractError(fr.utt_id + ": alignment and phoneme counts differ");
  std::size_t total = 0;
  for (int a : fr.alignment) {
    if (a <= 0) throw ContractError(fr.utt_id + ": alignment contains a zero-frame phoneme");
    total += static_cast<std::size_t>(a);
  }
  if (total != fr.frame_f0.size())
    throw ContractError(fr.utt_id + ": alignment does not cover the frame count");
  return fr.alignment;
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------
//
// One record object per line, field names exactly as in the record types,
// floats written with 17 significant digits so binary64 values roundtrip
// exactly.

namespace jsonl_detail {

inline void append_escaped(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

inline void append_double(std::string& out, double v) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize a non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void append_doubles(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_double(out, v[i]);
  }
  out += ']';
}

inline void append_ints(std::string& out, const std::vector<int>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  out += ']';
}

inline std::string to_line(const UtteranceRecord& r) {
  std::string s = "{\"utt_id\":";
  append_escaped(s, r.utt_id);
  s += ",\"phonemes\":";
  append_ints(s, r.phonemes);
  s += ",\"style\":" + std::to_string(r.style);
  s += ",\"speaker\":" + std::to_string(r.speaker);
  s += ",\"log_f0\":";
  append_doubles(s, r.log_f0);
  s += ",\"duration\":";
  append_ints(s, r.duration);
  s += '}';
  return s;
}

inline std::string to_line(const FrameRecord& r) {
  std::string s = "{\"utt_id\":";
  append_escaped(s, r.utt_id);
  s += ",\"frame_f0\":";
  append_doubles(s, r.frame_f0);
  s += ",\"voicing\":[";
  for (std::size_t i = 0; i < r.voicing.size(); ++i) {
    if (i) s += ',';
    s += r.voicing[i] ? "true" : "false";
  }
  s += "],\"alignment\":";
  append_ints(s, r.alignment);
  s += ",\"speaker\":" + std::to_string(r.speaker);
  s += ",\"style\":" + std::to_string(r.style);
  s += ",\"phonemes\":";
  append_ints(s, r.phonemes);
  s += '}';
  return s;
}

inline std::string to_line(const FrameTaskRecord& r) {
  std::string s = "{\"utt_id\":";
  append_escaped(s, r.utt_id);
  s += ",\"phonemes\":";
  append_ints(s, r.phonemes);
  s += ",\"speaker\":" + std::to_string(r.speaker);
  s += ",\"style\":" + std::to_string(r.style);
  s += ",\"log_f0\":";
  append_doubles(s, r.log_f0);
  s += ",\"duration\":";
  append_ints(s, r.duration);
  s += ",\"frame_feats\":[";
  for (std::size_t i = 0; i < r.frame_feats.size(); ++i) {
    if (i) s += ',';
    append_doubles(s, r.frame_feats[i]);
  }
  s += "]}";
  return s;
}

inline std::string to_line(const SampleRecord& r) {
  std::string s = "{\"utt_id\":";
  append_escaped(s, r.utt_id);
  s += ",\"draw\":" + std::to_string(r.draw);
  s += ",\"log_f0\":";
  append_doubles(s, r.log_f0);
  s += ",\"duration\":";
  append_ints(s, r.duration);
  s += '}';
  return s;
}

inline nlohmann::json parse_line(const std::string& line, const std::string& file,
                                 std::size_t line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file + " line " + std::to_string(line_no) + ": " + e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* name, const std::string& file, std::size_t line_no) {
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file + " line " + std::to_string(line_no) + ": field '" + name + "': " +
                     e.what());
  }
}

inline void from_json_line(const nlohmann::json& j, UtteranceRecord& r, const std::string& file,
                           std::size_t ln) {
  r.utt_id = field<std::string>(j, "utt_id", file, ln);
  r.phonemes = field<std::vector<int>>(j, "phonemes", file, ln);
  r.style = field<int>(j, "style", file, ln);
  r.speaker = field<int>(j, "speaker", file, ln);
  r.log_f0 = field<std::vector<double>>(j, "log_f0", file, ln);
  r.duration = field<std::vector<int>>(j, "duration", file, ln);
}

inline void from_json_line(const nlohmann::json& j, FrameRecord& r, const std::string& file,
                           std::size_t ln) {
  r.utt_id = field<std::string>(j, "utt_id", file, ln);
  r.frame_f0 = field<std::vector<double>>(j, "frame_f0", file, ln);
  r.voicing = field<std::vector<bool>>(j, "voicing", file, ln);
  r.alignment = field<std::vector<int>>(j, "alignment", file, ln);
  r.speaker = field<int>(j, "speaker", file, ln);
  r.style = field<int>(j, "style", file, ln);
  r.phonemes = field<std::vector<int>>(j, "phonemes", file, ln);
}

inline void from_json_line(const nlohmann::json& j, FrameTaskRecord& r, const std::string& file,
                           std::size_t ln) {
  r.utt_id = field<std::string>(j, "utt_id", file, ln);
  r.phonemes = field<std::vector<int>>(j, "phonemes", file, ln);
  r.speaker = field<int>(j, "speaker", file, ln);
  r.style = field<int>(j, "style", file, ln);
  r.log_f0 = field<std::vector<double>>(j, "log_f0", file, ln);
  r.duration = field<std::vector<int>>(j, "duration", file, ln);
  r.frame_feats = field<std::vector<std::vector<double>>>(j, "frame_feats", file, ln);
}

inline void from_json_line(const nlohmann::json& j, SampleRecord& r, const std::string& file,
                           std::size_t ln) {
  r.utt_id = field<std::string>(j, "utt_id", file, ln);
  r.draw = field<int>(j, "draw", file, ln);
  r.log_f0 = field<std::vector<double>>(j, "log_f0", file, ln);
  r.duration = field<std::vector<int>>(j, "duration", file, ln);
}

}  // namespace jsonl_detail

template <typename Record>
void save_jsonl(const std::vector<Record>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) os << jsonl_detail::to_line(r) << '\n';
  if (!os) throw IoError("write failed on " + path.string());
}

template <typename Record>
std::vector<Record> load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json j = jsonl_detail::parse_line(line, path.string(), line_no);
    Record r;
    jsonl_detail::from_json_line(j, r, path.string(), line_no);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SyntheticSpec JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j{{"n_phonemes", s.n_phonemes}, {"n_styles", s.n_styles},
                           {"n_speakers", s.n_speakers}, {"n_train", s.n_train},
                           {"n_dev", s.n_dev},           {"n_test", s.n_test},
                           {"len_min", s.len_min},       {"len_max", s.len_max},
                           {"frame_dim", s.frame_dim},   {"law_seed", s.law_seed}};
  if (s.fixed_law) {
    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (const auto& c : s.fixed_law->comps)
      comps.push_back({{"weight", c.weight},
                       {"mean_logf0", c.mean_logf0},
                       {"std_logf0", c.std_logf0},
                       {"mean_dur", c.mean_dur},
                       {"std_dur", c.std_dur}});
    j["fixed_law"] = std::move(comps);
  }
  return j;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  auto take = [&](const char* name, auto& dst) {
    if (j.contains(name)) dst = j.at(name).get<std::decay_t<decltype(dst)>>();
  };
  take("n_phonemes", s.n_phonemes);
  take("n_styles", s.n_styles);
  take("n_speakers", s.n_speakers);
  take("n_train", s.n_train);
  take("n_dev", s.n_dev);
  take("n_test", s.n_test);
  take("len_min", s.len_min);
  take("len_max", s.len_max);
  take("frame_dim", s.frame_dim);
  take("law_seed", s.law_seed);
  if (j.contains("fixed_law")) {
    CellLaw law;
    const auto& comps = j.at("fixed_law");
    if (!comps.is_array() || comps.size() != 2)
      throw ParseError("fixed_law must be an array of two components");
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& c = comps[i];
      law.comps[i] = {c.at("weight").get<double>(), c.at("mean_logf0").get<double>(),
                      c.at("std_logf0").get<double>(), c.at("mean_dur").get<double>(),
                      c.at("std_dur").get<double>()};
    }
    s.fixed_law = law;
  }
  s.validate();
  return s;
}

}  // namespace prosogen
