#include "prosogen/regression.hpp"

#include <gtest/gtest.h>

#include "prosogen/random.hpp"
#include "test_util.hpp"

using namespace prosogen;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (double& x : d) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(d));
}

RegressionConfig small_config() {
  RegressionConfig cfg;
  cfg.cond_dim = 6;
  cfg.target_dim = 2;
  cfg.hidden = 8;
  cfg.depth = 1;
  return cfg;
}

}  // namespace

TEST(Predict, ZeroInitializedHeadIsZeroFunction) {
  const RegressionConfig cfg = small_config();
  ParameterStore ps;
  add_regression_params(ps, "l2", cfg, 3);
  ParamSource p(ps);
  RngStream rng(1);
  Tensor cond = random_tensor({5, cfg.cond_dim}, rng);
  Tensor out = predict(p, "l2", cond, cfg);
  EXPECT_EQ(out.shape(), (Shape{5, 2}));
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Predict, RowCountPreserved) {
  const RegressionConfig cfg = small_config();
  ParameterStore ps;
  add_regression_params(ps, "l2", cfg, 3);
  testutil::perturb_params(ps, 4);
  ParamSource p(ps);
  RngStream rng(2);
  for (int n : {1, 3, 9}) EXPECT_EQ(predict(p, "l2", random_tensor({n, cfg.cond_dim}, rng), cfg).dim(0), n);
}

TEST(Predict, CondDimMismatchRejected) {
  const RegressionConfig cfg = small_config();
  ParameterStore ps;
  add_regression_params(ps, "l2", cfg, 3);
  ParamSource p(ps);
  EXPECT_THROW(predict(p, "l2", Tensor::zeros({2, cfg.cond_dim + 1}), cfg), ContractError);
}

TEST(LossL2, KnownValues) {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor mask = Tensor::full({2}, 1.0);
  EXPECT_DOUBLE_EQ(loss_l2(x, x, mask).value(), 0.0);
  Tensor shifted = add_scalar(x, 1.0);
  EXPECT_DOUBLE_EQ(loss_l2(shifted, x, mask).value(), 1.0);
}

TEST(LossL1, KnownValues) {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor mask = Tensor::full({2}, 1.0);
  EXPECT_DOUBLE_EQ(loss_l1(x, x, mask).value(), 0.0);
  Tensor shifted = add_scalar(x, -2.0);
  EXPECT_DOUBLE_EQ(loss_l1(shifted, x, mask).value(), 2.0);
}

TEST(Loss, MatchesNaiveDoubleLoop) {
  RngStream rng(9);
  Tensor pred = random_tensor({4, 3}, rng);
  Tensor target = random_tensor({4, 3}, rng);
  std::vector<double> mask_values{1.0, 0.0, 1.0, 1.0};
  Tensor mask = Tensor::vec(std::vector<double>(mask_values));

  double l2 = 0.0, l1 = 0.0;
  double count = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (mask_values[static_cast<std::size_t>(i)] == 0.0) continue;
    for (int j = 0; j < 3; ++j) {
      const double d = pred.at(i, j) - target.at(i, j);
      l2 += d * d;
      l1 += std::abs(d);
      count += 1.0;
    }
  }
  EXPECT_NEAR(loss_l2(pred, target, mask).value(), l2 / count, 1e-14);
  EXPECT_NEAR(loss_l1(pred, target, mask).value(), l1 / count, 1e-14);
}

TEST(Loss, EmptyMaskRejected) {
  Tensor x = Tensor::zeros({2, 2});
  EXPECT_THROW(loss_l2(x, x, Tensor::zeros({2})), ContractError);
  EXPECT_THROW(loss_l1(x, x, Tensor::zeros({2})), ContractError);
}

TEST(Loss, GradcheckThroughFullHead) {
  const RegressionConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParameterStore ps;
    add_regression_params(ps, "l2", cfg, seed);
    testutil::perturb_params(ps, seed + 100);
    RngStream rng(seed);
    // Odd row count: L1 sign sums over rows cannot cancel to an exact zero
    // gradient, which would turn finite-difference noise into a false alarm.
    Tensor cond = random_tensor({5, cfg.cond_dim}, rng);
    Tensor mask = Tensor::full({5}, 1.0);

    // Targets a safe margin away from the center-point prediction, so the
    // L1 kink cannot sit inside the finite-difference probe interval.
    ParamSource center(ps);
    Tensor target = testutil::offset_from(predict(center, "l2", cond, cfg), rng, 0.3, 1.0);

    const double err_l2 = testutil::param_gradcheck(ps, [&](ParamSource& p) {
      return loss_l2(predict(p, "l2", cond, cfg), target, mask);
    });
    EXPECT_LT(err_l2, 1e-4) << "l2 seed " << seed;

    const double err_l1 = testutil::param_gradcheck(ps, [&](ParamSource& p) {
      return loss_l1(predict(p, "l2", cond, cfg), target, mask);
    });
    EXPECT_LT(err_l1, 1e-4) << "l1 seed " << seed;
  }
}
