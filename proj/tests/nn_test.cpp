#include "prosogen/nn.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "prosogen/random.hpp"
#include "test_util.hpp"

using namespace prosogen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("prosogen_nn_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (double& x : d) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(d));
}

}  // namespace

TEST(Linear, IdentityWeightsPassThrough) {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor w = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor y = linear(x, w, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Linear, HandComputedCase) {
  Tensor y = linear(Tensor::matrix(1, 2, {1, 1}), Tensor::matrix(2, 1, {1, 1}), Tensor::vec({1}));
  EXPECT_DOUBLE_EQ(y.value(), 3.0);
}

TEST(Linear, MatchesMatmulPlusBiasComposition) {
  RngStream rng(21);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y = linear(x, w, b);
  Tensor ref = add(matmul(x, w), repeat_rows(b, 3));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], ref.data()[i]);
}

TEST(Embedding, GatherAndScatter) {
  Tensor table = Tensor::matrix(2, 3, {1, 2, 3, 10, 20, 30});
  Tensor row0 = embedding_lookup(table, {0});
  EXPECT_EQ(row0.shape(), (Shape{1, 3}));
  EXPECT_DOUBLE_EQ(row0.at(0, 2), 3.0);

  GradientTape tape;
  Tensor t = tape.watch(table);
  Tensor rows = embedding_lookup(t, {1, 1});
  EXPECT_DOUBLE_EQ(rows.at(0, 0), 10.0);
  EXPECT_DOUBLE_EQ(rows.at(1, 0), 10.0);
  auto grads = tape.backward(sum(rows));
  Tensor g = grads.grad_of(t);
  // Row 1 is looked up twice, so both contributions accumulate; row 0 is untouched.
  for (int j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(g.at(0, j), 0.0);
    EXPECT_DOUBLE_EQ(g.at(1, j), 2.0);
  }
}

TEST(Embedding, MatchesRowCopyLoop) {
  RngStream rng(5);
  Tensor table = random_tensor({7, 4}, rng);
  std::vector<int> ids = {3, 0, 6, 3, 1};
  Tensor out = embedding_lookup(table, ids);
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (int j = 0; j < 4; ++j)
      EXPECT_DOUBLE_EQ(out.at(static_cast<int>(r), j), table.at(ids[r], j));
}

TEST(Embedding, OutOfRangeIdNamesIdAndVocab) {
  Tensor table = Tensor::zeros({5, 2});
  try {
    embedding_lookup(table, {0, 7});
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5"), std::string::npos) << msg;
  }
}

TEST(ResidualMlp, ZeroWeightsAreIdentity) {
  ParameterStore ps;
  MlpConfig cfg{2, 8};
  add_residual_mlp_params(ps, "mlp", 3, cfg, 1);
  for (const auto& name : ps.names()) ps.set(name, Tensor::zeros(ps.get(name).shape()));
  ParamSource p(ps);
  RngStream rng(2);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = residual_mlp(p, "mlp", x, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(ResidualMlp, DepthOneMatchesHandFormula) {
  // Scalar case: y = x + w2 * tanh(w1 * x + b1) + b2.
  ParameterStore ps;
  MlpConfig cfg{1, 1};
  add_residual_mlp_params(ps, "m", 1, cfg, 1);
  ps.set("m.block0.w1", Tensor::matrix(1, 1, {0.7}));
  ps.set("m.block0.b1", Tensor::vec({-0.2}));
  ps.set("m.block0.w2", Tensor::matrix(1, 1, {1.3}));
  ps.set("m.block0.b2", Tensor::vec({0.4}));
  ParamSource p(ps);
  const double x = 0.9;
  Tensor y = residual_mlp(p, "m", Tensor::matrix(1, 1, {x}), cfg);
  const double ref = x + 1.3 * std::tanh(0.7 * x - 0.2) + 0.4;
  EXPECT_NEAR(y.value(), ref, 1e-15);
}

TEST(ResidualMlp, GradcheckAtRandomParams) {
  ParameterStore ps;
  MlpConfig cfg{2, 5};
  add_residual_mlp_params(ps, "m", 3, cfg, 77);
  RngStream rng(8);
  Tensor x = random_tensor({2, 3}, rng);
  const double err = testutil::param_gradcheck(ps, [&](ParamSource& p) {
    Tensor y = residual_mlp(p, "m", x, cfg);
    return mean(mul(y, y));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Adam, ZeroGradientIsNoOp) {
  ParameterStore ps;
  ps.add("w", Tensor::vec({1.0, -2.0, 3.0}));
  AdamState st = AdamState::init(ps);
  std::map<std::string, Tensor> grads;
  grads.emplace("w", Tensor::zeros({3}));
  for (int i = 0; i < 5; ++i) adam_step(ps, grads, st);
  EXPECT_DOUBLE_EQ(ps.get("w").at(0), 1.0);
  EXPECT_DOUBLE_EQ(ps.get("w").at(1), -2.0);
  EXPECT_DOUBLE_EQ(ps.get("w").at(2), 3.0);
  EXPECT_EQ(st.t, 5);
}

TEST(Adam, SingleStepMatchesHandExecutedUpdate) {
  ParameterStore ps;
  ps.add("p", Tensor::scalar(0.0));
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamState st = AdamState::init(ps, cfg);
  std::map<std::string, Tensor> grads;
  grads.emplace("p", Tensor::scalar(1.0));
  adam_step(ps, grads, st);
  // m = 0.1, v = 0.001; mhat = 1, vhat = 1; p = -0.1 * 1 / (1 + 1e-8).
  const double expected = -0.1 / (1.0 + 1e-8);
  EXPECT_NEAR(ps.get("p").value(), expected, 1e-15);
  EXPECT_NEAR(ps.get("p").value(), -0.0999999999, 1e-9);
}

TEST(Adam, MissingGradientIsContractError) {
  ParameterStore ps;
  ps.add("a", Tensor::scalar(0.0));
  ps.add("b", Tensor::scalar(0.0));
  AdamState st = AdamState::init(ps);
  std::map<std::string, Tensor> grads;
  grads.emplace("a", Tensor::scalar(1.0));
  EXPECT_THROW(adam_step(ps, grads, st), ContractError);
}

TEST(Adam, SameSeedRunsAreBitwiseIdentical) {
  auto run = [] {
    ParameterStore ps;
    ps.add("w", init_weight(4, 3, 9, "w"));
    AdamState st = AdamState::init(ps);
    RngStream rng(31);
    for (int step = 0; step < 100; ++step) {
      GradientTape tape;
      ParamSource p(ps, tape);
      Tensor x = random_tensor({2, 4}, rng);
      Tensor loss = mean(mul(matmul(x, p("w")), matmul(x, p("w"))));
      auto grads = p.collect(tape.backward(loss));
      adam_step(ps, grads, st);
    }
    return ps.get("w").data();
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Init, PureFunctionOfSeedAndName) {
  Tensor a = init_weight(6, 4, 123, "enc.w");
  Tensor b = init_weight(6, 4, 123, "enc.w");
  Tensor c = init_weight(6, 4, 124, "enc.w");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a.data()[i] != c.data()[i];
  EXPECT_TRUE(any_diff);
}

TEST(Checkpoint, RoundtripIsBitwiseExact) {
  const fs::path dir = temp_dir("roundtrip");
  ParameterStore ps;
  ps.add("z.w", init_weight(5, 3, 1, "z.w"));
  ps.add("a.b", init_weight(2, 2, 1, "a.b"));  // insertion order differs from lexicographic
  AdamState st = AdamState::init(ps);
  st.t = 17;
  RngStream rng(4);
  for (auto& [k, v] : st.m)
    for (double& x : v) x = rng.uniform(-1, 1);
  for (auto& [k, v] : st.v)
    for (double& x : v) x = rng.uniform(0, 1);

  save_checkpoint(ps, dir, &st);
  AdamState loaded_state;
  ParameterStore loaded = load_checkpoint(dir, &loaded_state);

  ASSERT_EQ(loaded.names(), ps.names());
  for (const auto& name : ps.names()) {
    const auto& x = ps.get(name).data();
    const auto& y = loaded.get(name).data();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  }
  EXPECT_EQ(loaded_state.t, 17);
  for (const auto& name : ps.names()) {
    for (std::size_t i = 0; i < st.m[name].size(); ++i) {
      EXPECT_EQ(st.m[name][i], loaded_state.m[name][i]);
      EXPECT_EQ(st.v[name][i], loaded_state.v[name][i]);
    }
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, SaveIsByteDeterministic) {
  const fs::path d1 = temp_dir("bytes1"), d2 = temp_dir("bytes2");
  ParameterStore ps;
  ps.add("w", init_weight(8, 8, 2, "w"));
  save_checkpoint(ps, d1);
  save_checkpoint(ps, d2);
  for (const char* f : {"manifest.json", "weights.bin"}) {
    std::ifstream a(d1 / f, std::ios::binary), b(d2 / f, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    EXPECT_EQ(sa, sb) << f;
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Checkpoint, EditedShapeFailsLoad) {
  const fs::path dir = temp_dir("badshape");
  ParameterStore ps;
  ps.add("w", init_weight(3, 3, 1, "w"));
  save_checkpoint(ps, dir);
  // Corrupt the manifest: claim a different shape.
  std::ifstream is(dir / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  auto pos = text.find("[3,3]");
  if (pos == std::string::npos) {
    auto j = nlohmann::json::parse(text);
    j["params"][0]["shape"] = {4, 3};
    text = j.dump();
  } else {
    text.replace(pos, 5, "[4,3]");
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << text;
  os.close();
  EXPECT_THROW(load_checkpoint(dir), ContractError);
  fs::remove_all(dir);
}

TEST(Checkpoint, MalformedManifestIsParseErrorWithOffset) {
  const fs::path dir = temp_dir("malformed");
  std::ofstream os(dir / "manifest.json");
  os << "{\"version\": 1, \"dtype\": ";
  os.close();
  std::ofstream ws(dir / "weights.bin", std::ios::binary);
  ws.close();
  try {
    load_checkpoint(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, WrongModelListsMissingAndExtraKeys) {
  const fs::path dir = temp_dir("mismatch");
  ParameterStore flow;
  flow.add("flow.step0.w", Tensor::zeros({2, 2}));
  flow.add("shared.w", Tensor::zeros({2, 2}));
  save_checkpoint(flow, dir);

  ParameterStore diff;
  diff.add("diff.proj.w", Tensor::zeros({2, 2}));
  diff.add("shared.w", Tensor::zeros({2, 2}));
  try {
    load_checkpoint_into(diff, dir);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("diff.proj.w"), std::string::npos) << msg;
    EXPECT_NE(msg.find("flow.step0.w"), std::string::npos) << msg;
  }
  fs::remove_all(dir);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  std::map<std::string, Tensor> grads;
  grads.emplace("a", Tensor::vec({3.0, 4.0}));  // norm 5
  double norm = clip_global_norm(grads, 10.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_DOUBLE_EQ(grads.at("a").at(0), 3.0);

  norm = clip_global_norm(grads, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(grads.at("a").at(0), 0.6, 1e-15);
  EXPECT_NEAR(grads.at("a").at(1), 0.8, 1e-15);
}
