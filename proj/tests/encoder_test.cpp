#include "prosogen/encoder.hpp"

#include <gtest/gtest.h>

#include "prosogen/random.hpp"
#include "test_util.hpp"

using namespace prosogen;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.phone_vocab = 10;
  cfg.style_vocab = 4;
  cfg.phone_dim = 6;
  cfg.style_dim = 4;
  cfg.context_width = 5;
  cfg.hidden = 16;
  cfg.depth = 1;
  cfg.out_dim = 8;
  return cfg;
}

ParameterStore make_params(const EncoderConfig& cfg, std::uint64_t seed) {
  ParameterStore ps;
  add_encoder_params(ps, "encoder", cfg, seed);
  return ps;
}

}  // namespace

TEST(Encoder, SinglePhonemeGivesOneRow) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 1);
  ParamSource p(ps);
  const auto c = encode(p, "encoder", cfg, {3}, 2);
  EXPECT_EQ(c.length, 1);
  EXPECT_EQ(c.values.shape(), (Shape{1, cfg.out_dim}));
}

TEST(Encoder, LengthPreserving) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 1);
  ParamSource p(ps);
  for (int n : {1, 2, 7, 13}) {
    std::vector<int> phonemes;
    for (int i = 0; i < n; ++i) phonemes.push_back(i % cfg.phone_vocab);
    EXPECT_EQ(encode(p, "encoder", cfg, phonemes, 0).values.dim(0), n);
  }
}

TEST(Encoder, StyleChangesConditioning) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 7);
  ParamSource p(ps);
  const std::vector<int> phonemes{1, 4, 2, 8};
  const auto a = encode(p, "encoder", cfg, phonemes, 0);
  const auto b = encode(p, "encoder", cfg, phonemes, 3);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a.values.data()[i] - b.values.data()[i]));
  EXPECT_GT(max_diff, 1e-6);
}

TEST(Encoder, LocalityOutsideContextWindow) {
  // context_width 5 => position 0 depends on phonemes 0..2 only. Permuting
  // later phonemes must leave row 0 bitwise unchanged.
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 3);
  ParamSource p(ps);
  const std::vector<int> a{1, 2, 3, 4, 5, 6, 7};
  const std::vector<int> b{1, 2, 3, 7, 6, 5, 4};  // permuted beyond the window of position 0
  const auto ca = encode(p, "encoder", cfg, a, 1);
  const auto cb = encode(p, "encoder", cfg, b, 1);
  for (int j = 0; j < cfg.out_dim; ++j) EXPECT_EQ(ca.values.at(0, j), cb.values.at(0, j));
  // Sanity: a position inside the changed window does differ.
  double diff = 0.0;
  for (int j = 0; j < cfg.out_dim; ++j)
    diff = std::max(diff, std::abs(ca.values.at(5, j) - cb.values.at(5, j)));
  EXPECT_GT(diff, 1e-9);
}

TEST(Encoder, DeterministicGivenInputsAndParams) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 11);
  ParamSource p(ps);
  const std::vector<int> phonemes{0, 9, 5};
  const auto a = encode(p, "encoder", cfg, phonemes, 2);
  const auto b = encode(p, "encoder", cfg, phonemes, 2);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    EXPECT_EQ(a.values.data()[i], b.values.data()[i]);
}

TEST(Encoder, OutOfRangeIdsRejected) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 1);
  ParamSource p(ps);
  EXPECT_THROW(encode(p, "encoder", cfg, {cfg.phone_vocab}, 0), IndexError);
  EXPECT_THROW(encode(p, "encoder", cfg, {0}, cfg.style_vocab), IndexError);
}

TEST(Encoder, GradientsFlowIntoEmbeddings) {
  const EncoderConfig cfg = small_config();
  ParameterStore ps = make_params(cfg, 5);
  const double err = testutil::param_gradcheck(ps, [&](ParamSource& p) {
    const auto c = encode(p, "encoder", cfg, {1, 2, 3}, 1);
    return mean(mul(c.values, c.values));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(WindowFeatures, ZeroPaddedEdges) {
  Tensor emb = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor w = window_features(emb, 3);
  ASSERT_EQ(w.shape(), (Shape{2, 6}));
  // Row 0: [left-neighbor = 0 0, self = 1 2, right-neighbor = 3 4]
  EXPECT_DOUBLE_EQ(w.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(w.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(w.at(0, 2), 1.0);
  EXPECT_DOUBLE_EQ(w.at(0, 3), 2.0);
  EXPECT_DOUBLE_EQ(w.at(0, 4), 3.0);
  EXPECT_DOUBLE_EQ(w.at(0, 5), 4.0);
  // Row 1: [left = 1 2, self = 3 4, right = 0 0]
  EXPECT_DOUBLE_EQ(w.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(w.at(1, 3), 4.0);
  EXPECT_DOUBLE_EQ(w.at(1, 5), 0.0);
}

TEST(LengthRegulate, AllOnesIsIdentity) {
  RngStream rng(2);
  std::vector<double> d(12);
  for (double& x : d) x = rng.uniform(-1, 1);
  Tensor c = Tensor::matrix(4, 3, d);
  Tensor out = length_regulate(c, {1, 1, 1, 1});
  ASSERT_EQ(out.shape(), c.shape());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], c.data()[i]);
}

TEST(LengthRegulate, RepeatsRowsInOrder) {
  Tensor c = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor out = length_regulate(c, {2, 3});
  ASSERT_EQ(out.shape(), (Shape{5, 2}));
  const double expected[5][2] = {{1, 2}, {1, 2}, {3, 4}, {3, 4}, {3, 4}};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(out.at(i, j), expected[i][j]);
}

TEST(LengthRegulate, RandomBlocksMatchLoopOracle) {
  RngStream rng(17);
  const int n = 6, d = 4;
  std::vector<double> data(n * d);
  for (double& x : data) x = rng.uniform(-2, 2);
  Tensor c = Tensor::matrix(n, d, data);
  std::vector<int> durations;
  int total = 0;
  for (int i = 0; i < n; ++i) {
    durations.push_back(1 + rng.uniform_int(4));
    total += durations.back();
  }
  Tensor out = length_regulate(c, durations);
  ASSERT_EQ(out.dim(0), total);
  int row = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < durations[static_cast<std::size_t>(i)]; ++j, ++row)
      for (int k = 0; k < d; ++k) EXPECT_DOUBLE_EQ(out.at(row, k), c.at(i, k));
}

TEST(LengthRegulate, RejectsBadDurations) {
  Tensor c = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_THROW(length_regulate(c, {0, 2}), ContractError);
  EXPECT_THROW(length_regulate(c, {-1, 2}), ContractError);
  EXPECT_THROW(length_regulate(c, {1}), ContractError);
}

TEST(LengthRegulate, GradientSumsOverRepeats) {
  GradientTape tape;
  Tensor c = tape.watch(Tensor::matrix(2, 1, {1.0, 2.0}));
  Tensor out = length_regulate(c, {2, 3});
  auto grads = tape.backward(sum(out));
  Tensor g = grads.grad_of(c);
  EXPECT_DOUBLE_EQ(g.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.at(1, 0), 3.0);
}
