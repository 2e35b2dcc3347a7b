#include "prosogen/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

using namespace prosogen;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& tag) {
  return fs::temp_directory_path() / ("prosogen_data_" + tag + "_" + std::to_string(::getpid()));
}

SyntheticSpec degenerate_spec(double logf0, double dur) {
  SyntheticSpec spec;
  spec.n_phonemes = 1;
  spec.n_styles = 1;
  spec.n_speakers = 1;
  spec.n_train = 20;
  spec.n_dev = 2;
  spec.n_test = 2;
  spec.len_min = 3;
  spec.len_max = 5;
  CellLaw law;
  law.comps[0] = {1.0, logf0, 0.0, dur, 0.0};
  law.comps[1] = {0.0, 0.0, 0.0, 5.0, 0.0};
  spec.fixed_law = law;
  return spec;
}

// Independent reimplementation of the f0 pipeline using explicit index
// arithmetic; deliberately structured differently from the library version.
std::vector<double> f0_pipeline_reference(const FrameRecord& fr, double speaker_mean) {
  const int T = static_cast<int>(fr.frame_f0.size());
  auto voiced_log = [&](int t) { return std::log(fr.frame_f0[static_cast<std::size_t>(t)]); };
  std::vector<double> interp(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    if (fr.voicing[static_cast<std::size_t>(t)]) {
      interp[static_cast<std::size_t>(t)] = voiced_log(t);
      continue;
    }
    int prev = t - 1;
    while (prev >= 0 && !fr.voicing[static_cast<std::size_t>(prev)]) --prev;
    int next = t + 1;
    while (next < T && !fr.voicing[static_cast<std::size_t>(next)]) ++next;
    if (prev < 0) {
      interp[static_cast<std::size_t>(t)] = voiced_log(next);
    } else if (next >= T) {
      interp[static_cast<std::size_t>(t)] = voiced_log(prev);
    } else {
      const double w = static_cast<double>(t - prev) / static_cast<double>(next - prev);
      interp[static_cast<std::size_t>(t)] = (1.0 - w) * voiced_log(prev) + w * voiced_log(next);
    }
  }
  std::vector<double> out;
  int t = 0;
  for (int a : fr.alignment) {
    double acc = 0.0;
    for (int j = 0; j < a; ++j) acc += interp[static_cast<std::size_t>(t++)] - speaker_mean;
    out.push_back(acc / a);
  }
  return out;
}

}  // namespace

TEST(CellLaw, ValidationCatchesBadLaws) {
  CellLaw law;
  law.comps[0] = {0.6, 0.0, 0.1, 5.0, 0.5};
  law.comps[1] = {0.5, 0.0, 0.1, 5.0, 0.5};  // weights sum to 1.1
  EXPECT_THROW(law.validate(), ContractError);
  law.comps[1].weight = 0.4;
  law.validate();
  law.comps[1].mean_dur = 1.0;  // below the 2-frame floor
  EXPECT_THROW(law.validate(), ContractError);
}

TEST(CellLaw, PureFunctionOfSeedAndCell) {
  SyntheticSpec spec;
  const CellLaw a = cell_law(spec, 3, 2);
  const CellLaw b = cell_law(spec, 3, 2);
  EXPECT_EQ(a.comps[0].mean_logf0, b.comps[0].mean_logf0);
  EXPECT_EQ(a.comps[1].std_dur, b.comps[1].std_dur);
  const CellLaw c = cell_law(spec, 3, 3);
  EXPECT_NE(a.comps[0].mean_logf0, c.comps[0].mean_logf0);
}

TEST(CellLaw, EveryCellIsBimodalInLogF0) {
  SyntheticSpec spec;
  int bimodal = 0, total = 0;
  for (int p = 0; p < spec.n_phonemes; ++p)
    for (int s = 0; s < spec.n_styles; ++s) {
      const CellLaw law = cell_law(spec, p, s);
      const double sep = std::abs(law.comps[1].mean_logf0 - law.comps[0].mean_logf0);
      const double pooled = std::sqrt(law.comps[0].weight * law.comps[0].std_logf0 * law.comps[0].std_logf0 +
                                      law.comps[1].weight * law.comps[1].std_logf0 * law.comps[1].std_logf0);
      ++total;
      if (sep >= 2.0 * pooled) ++bimodal;
    }
  EXPECT_EQ(bimodal, total);                  // the generator guarantees it everywhere
  EXPECT_GE(bimodal * 4, total);              // the contract only requires 25%
}

TEST(Oracle, SingleComponentMoments) {
  SyntheticSpec spec = degenerate_spec(0.3, 5.0);
  spec.fixed_law->comps[0].std_logf0 = 0.2;
  spec.fixed_law->comps[0].std_dur = 1.0;
  const auto mean = oracle_conditional_mean(0, 0, spec);
  const auto sd = oracle_cell_std(0, 0, spec);
  EXPECT_DOUBLE_EQ(mean[0], 0.3);
  EXPECT_DOUBLE_EQ(mean[1], 5.0);
  EXPECT_DOUBLE_EQ(sd[0], 0.2);
  EXPECT_DOUBLE_EQ(sd[1], 1.0);
}

TEST(Oracle, SymmetricTwoPointMixture) {
  SyntheticSpec spec;
  spec.n_phonemes = spec.n_styles = spec.n_speakers = 1;
  CellLaw law;
  law.comps[0] = {0.5, -1.0, 0.0, 4.0, 0.0};
  law.comps[1] = {0.5, 1.0, 0.0, 6.0, 0.0};
  spec.fixed_law = law;
  const auto mean = oracle_conditional_mean(0, 0, spec);
  const auto sd = oracle_cell_std(0, 0, spec);
  EXPECT_DOUBLE_EQ(mean[0], 0.0);
  EXPECT_DOUBLE_EQ(sd[0], 1.0);
  EXPECT_DOUBLE_EQ(mean[1], 5.0);
  EXPECT_DOUBLE_EQ(sd[1], 1.0);
}

TEST(Oracle, MomentsMatchMonteCarlo) {
  SyntheticSpec spec;
  RngStream rng(404);
  const int p = 5, s = 1;
  const int n = 1000000;
  double m0 = 0, m1 = 0, q0 = 0, q1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto [f, d] = oracle_sample(p, s, spec, rng);
    m0 += f;
    m1 += d;
    q0 += f * f;
    q1 += d * d;
  }
  m0 /= n;
  m1 /= n;
  const double sd0 = std::sqrt(q0 / n - m0 * m0);
  const double sd1 = std::sqrt(q1 / n - m1 * m1);
  const auto mean = oracle_conditional_mean(p, s, spec);
  const auto sd = oracle_cell_std(p, s, spec);
  EXPECT_NEAR(m0, mean[0], 0.01 * std::max(1.0, std::abs(mean[0])));
  EXPECT_NEAR(m1, mean[1], 0.01 * std::abs(mean[1]));
  EXPECT_NEAR(sd0, sd[0], 0.01 * sd[0]);
  EXPECT_NEAR(sd1, sd[1], 0.01 * sd[1]);
}

TEST(GenCorpus, DegenerateMixtureIsConstant) {
  SyntheticSpec spec = degenerate_spec(0.3, 5.0);
  Corpus c = gen_corpus(spec, 1);
  ASSERT_EQ(c.train.size(), 20u);
  for (const auto& rec : c.train) {
    for (double f : rec.log_f0) EXPECT_DOUBLE_EQ(f, 0.3);
    for (int d : rec.duration) EXPECT_EQ(d, 5);
  }
}

TEST(GenCorpus, PooledStdMatchesAnalyticWithinTwoPercent) {
  SyntheticSpec spec;
  spec.n_train = 10000;
  spec.n_dev = 0;
  spec.n_test = 0;
  Corpus c = gen_corpus(spec, 9);
  double m = 0, q = 0;
  std::size_t n = 0;
  for (const auto& rec : c.train)
    for (double f : rec.log_f0) {
      m += f;
      q += f * f;
      ++n;
    }
  m /= static_cast<double>(n);
  const double sd = std::sqrt(q / static_cast<double>(n) - m * m);
  const PooledMoments pm = oracle_pooled_moments(spec);
  EXPECT_NEAR(sd, pm.std_logf0, 0.02 * pm.std_logf0);
}

TEST(GenCorpus, DeterministicAndDisjoint) {
  SyntheticSpec spec;
  spec.n_train = 50;
  spec.n_dev = 10;
  spec.n_test = 10;
  Corpus a = gen_corpus(spec, 123);
  Corpus b = gen_corpus(spec, 123);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);

  std::set<std::string> ids;
  for (const auto& r : a.train) ids.insert(r.utt_id);
  for (const auto& r : a.dev) ids.insert(r.utt_id);
  for (const auto& r : a.test) ids.insert(r.utt_id);
  EXPECT_EQ(ids.size(), a.train.size() + a.dev.size() + a.test.size());

  Corpus c = gen_corpus(spec, 124);
  EXPECT_NE(a.train, c.train);
}

TEST(GenCorpus, DurationsAreAtLeastOne) {
  SyntheticSpec spec;
  spec.n_train = 200;
  Corpus c = gen_corpus(spec, 3);
  for (const auto& rec : c.train) {
    ASSERT_EQ(rec.log_f0.size(), rec.phonemes.size());
    ASSERT_EQ(rec.duration.size(), rec.phonemes.size());
    for (int d : rec.duration) EXPECT_GE(d, 1);
    EXPECT_GE(static_cast<int>(rec.phonemes.size()), spec.len_min);
    EXPECT_LE(static_cast<int>(rec.phonemes.size()), spec.len_max);
  }
}

TEST(GenFrameCorpus, ShapesAndDeterminism) {
  SyntheticSpec spec;
  spec.n_train = 10;
  spec.n_dev = 2;
  spec.n_test = 2;
  FrameCorpus a = gen_frame_corpus(spec, 5);
  FrameCorpus b = gen_frame_corpus(spec, 5);
  EXPECT_EQ(a.train, b.train);
  for (const auto& rec : a.train) {
    std::size_t total = 0;
    for (int d : rec.duration) total += static_cast<std::size_t>(d);
    ASSERT_EQ(rec.frame_feats.size(), total);
    for (const auto& f : rec.frame_feats) ASSERT_EQ(f.size(), static_cast<std::size_t>(spec.frame_dim));
  }
}

TEST(F0Pipeline, ConstantVoicedAtSpeakerMeanIsZero) {
  FrameRecord fr;
  fr.utt_id = "u";
  const double hz = 130.0;
  fr.frame_f0 = {hz, hz, hz, hz};
  fr.voicing = {true, true, true, true};
  fr.alignment = {2, 2};
  fr.phonemes = {0, 1};
  const auto out = f0_pipeline(fr, std::log(hz));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  // Same when the mean is recomputed from the record itself.
  const auto self = f0_pipeline(fr);
  EXPECT_DOUBLE_EQ(self[0], 0.0);
}

TEST(F0Pipeline, LinearMidpointInterpolation) {
  FrameRecord fr;
  fr.utt_id = "u";
  fr.frame_f0 = {std::exp(1.0), 0.0, std::exp(2.0)};
  fr.voicing = {true, false, true};
  fr.alignment = {1, 1, 1};
  fr.phonemes = {0, 1, 2};
  const auto out = f0_pipeline(fr, 0.0);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 1.5, 1e-12);
  EXPECT_NEAR(out[2], 2.0, 1e-12);
  // Bitwise agreement with the arithmetic the contract describes.
  const double la = std::log(fr.frame_f0[0]), lb = std::log(fr.frame_f0[2]);
  EXPECT_EQ(out[1], 0.5 * la + 0.5 * lb);
}

TEST(F0Pipeline, EdgeGapsHoldNearestVoicedValue) {
  FrameRecord fr;
  fr.utt_id = "u";
  fr.frame_f0 = {0.0, 100.0, 0.0, 0.0};
  fr.voicing = {false, true, false, false};
  fr.alignment = {1, 1, 1, 1};
  fr.phonemes = {0, 1, 2, 3};
  const auto out = f0_pipeline(fr, 0.0);
  for (double v : out) EXPECT_DOUBLE_EQ(v, std::log(100.0));
}

TEST(F0Pipeline, MatchesIndependentReimplementation) {
  RngStream rng(88);
  for (int trial = 0; trial < 50; ++trial) {
    FrameRecord fr;
    fr.utt_id = "t" + std::to_string(trial);
    const int n_phon = 2 + rng.uniform_int(5);
    int total = 0;
    for (int i = 0; i < n_phon; ++i) {
      const int a = 1 + rng.uniform_int(5);
      fr.alignment.push_back(a);
      fr.phonemes.push_back(i);
      total += a;
    }
    bool any_voiced = false;
    for (int t = 0; t < total; ++t) {
      const bool v = rng.uniform() < 0.6;
      fr.voicing.push_back(v);
      fr.frame_f0.push_back(v ? rng.uniform(80.0, 300.0) : 0.0);
      any_voiced = any_voiced || v;
    }
    if (!any_voiced) {
      fr.voicing[0] = true;
      fr.frame_f0[0] = 120.0;
    }
    const double mean = rng.uniform(4.0, 6.0);
    const auto got = f0_pipeline(fr, mean);
    const auto want = f0_pipeline_reference(fr, mean);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(F0Pipeline, GlobalScalingInvariance) {
  // Scaling all voiced f0 by k adds log k everywhere, which the recomputed
  // speaker mean removes exactly.
  RngStream rng(31);
  FrameRecord fr;
  fr.utt_id = "scale";
  fr.alignment = {3, 2, 4};
  fr.phonemes = {0, 1, 2};
  for (int t = 0; t < 9; ++t) {
    const bool v = t % 3 != 1;
    fr.voicing.push_back(v);
    fr.frame_f0.push_back(v ? rng.uniform(90.0, 250.0) : 0.0);
  }
  FrameRecord scaled = fr;
  const double k = 1.7;
  for (std::size_t t = 0; t < scaled.frame_f0.size(); ++t)
    if (scaled.voicing[t]) scaled.frame_f0[t] *= k;
  const auto a = f0_pipeline(fr);
  const auto b = f0_pipeline(scaled);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(F0Pipeline, AllUnvoicedIsPipelineError) {
  FrameRecord fr;
  fr.utt_id = "silent";
  fr.frame_f0 = {0.0, 0.0};
  fr.voicing = {false, false};
  fr.alignment = {2};
  fr.phonemes = {0};
  EXPECT_THROW(f0_pipeline(fr), PipelineError);
}

TEST(DurationFromAlignment, CopiesAndValidates) {
  FrameRecord fr;
  fr.utt_id = "u";
  fr.alignment = {3, 5};
  fr.phonemes = {0, 1};
  fr.frame_f0.assign(8, 100.0);
  fr.voicing.assign(8, true);
  const auto d = duration_from_alignment(fr);
  EXPECT_EQ(d, (std::vector<int>{3, 5}));
  int total = 0;
  for (int x : d) total += x;
  EXPECT_EQ(total, 8);

  fr.alignment = {3, 0};
  fr.frame_f0.assign(3, 100.0);
  fr.voicing.assign(3, true);
  EXPECT_THROW(duration_from_alignment(fr), ContractError);
}

TEST(SpeakerMean, VoicedFramesOnly) {
  FrameRecord a;
  a.utt_id = "a";
  a.speaker = 0;
  a.frame_f0 = {100.0, 0.0, 200.0};
  a.voicing = {true, false, true};
  a.alignment = {3};
  a.phonemes = {0};
  const auto means = speaker_mean_logf0({a});
  EXPECT_NEAR(means.at(0), 0.5 * (std::log(100.0) + std::log(200.0)), 1e-15);
}

TEST(Jsonl, EmptyRoundtrip) {
  const fs::path p = temp_file("empty.jsonl");
  save_jsonl(std::vector<UtteranceRecord>{}, p);
  const auto back = load_jsonl<UtteranceRecord>(p);
  EXPECT_TRUE(back.empty());
  fs::remove(p);
}

TEST(Jsonl, RoundtripPreservesFloatBitPatterns) {
  const fs::path p = temp_file("round.jsonl");
  SyntheticSpec spec;
  spec.n_train = 30;
  spec.n_dev = 0;
  spec.n_test = 0;
  Corpus c = gen_corpus(spec, 77);
  // Inject awkward magnitudes to stress the float formatting.
  c.train[0].log_f0[0] = 0.1;
  c.train[0].log_f0[1] = -1.0 / 3.0;
  c.train[1].log_f0[0] = 1e-17;
  c.train[1].log_f0[1] = 123456.78901234567;
  save_jsonl(c.train, p);
  const auto back = load_jsonl<UtteranceRecord>(p);
  ASSERT_EQ(back.size(), c.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    ASSERT_EQ(back[i], c.train[i]) << "record " << i;
    for (std::size_t j = 0; j < back[i].log_f0.size(); ++j) {
      EXPECT_EQ(std::memcmp(&back[i].log_f0[j], &c.train[i].log_f0[j], sizeof(double)), 0);
    }
  }
  fs::remove(p);
}

TEST(Jsonl, SaveIsByteDeterministic) {
  SyntheticSpec spec;
  spec.n_train = 10;
  spec.n_dev = 0;
  spec.n_test = 0;
  Corpus c = gen_corpus(spec, 1);
  const fs::path p1 = temp_file("det1.jsonl"), p2 = temp_file("det2.jsonl");
  save_jsonl(c.train, p1);
  save_jsonl(c.train, p2);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Jsonl, TruncatedLineNamesTheLine) {
  const fs::path p = temp_file("bad.jsonl");
  {
    std::ofstream os(p);
    os << R"({"utt_id":"a","phonemes":[0],"style":0,"speaker":0,"log_f0":[0.1],"duration":[3]})"
       << '\n';
    os << R"({"utt_id":"b","phonemes":[0],)" << '\n';
  }
  try {
    load_jsonl<UtteranceRecord>(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  fs::remove(p);
}

TEST(Jsonl, FrameAndSampleRecordsRoundtrip) {
  FrameRecord fr;
  fr.utt_id = "fr-0";
  fr.frame_f0 = {100.5, 0.0, 210.25};
  fr.voicing = {true, false, true};
  fr.alignment = {2, 1};
  fr.speaker = 3;
  fr.style = 1;
  fr.phonemes = {4, 2};
  const fs::path p = temp_file("frame.jsonl");
  save_jsonl(std::vector<FrameRecord>{fr}, p);
  const auto back = load_jsonl<FrameRecord>(p);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], fr);
  fs::remove(p);

  SampleRecord sr{"test-000001", 2, {0.25, -0.5}, {4, 7}};
  const fs::path ps = temp_file("sample.jsonl");
  save_jsonl(std::vector<SampleRecord>{sr}, ps);
  const auto sback = load_jsonl<SampleRecord>(ps);
  ASSERT_EQ(sback.size(), 1u);
  EXPECT_EQ(sback[0], sr);
  fs::remove(ps);
}

TEST(SpecJson, RoundtripIncludingFixedLaw) {
  SyntheticSpec spec = degenerate_spec(0.3, 5.0);
  const auto j = to_json(spec);
  const SyntheticSpec back = synthetic_spec_from_json(j);
  EXPECT_EQ(back.n_phonemes, spec.n_phonemes);
  ASSERT_TRUE(back.fixed_law.has_value());
  EXPECT_DOUBLE_EQ(back.fixed_law->comps[0].mean_logf0, 0.3);
}
