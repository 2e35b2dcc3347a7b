#pragma once

#include <string>

#include "prosogen/nn.hpp"
#include "prosogen/tensor.hpp"

namespace prosogen {

/// Deterministic decoder head: residual trunk plus a final projection to the
/// target dimension. The projection starts at zero so the initial prediction
/// is exactly the zero function.
struct RegressionConfig {
  int cond_dim = 32;
  int target_dim = 2;
  int hidden = 64;
  int depth = 2;

  StackConfig stack() const {
    StackConfig s;
    s.in_dim = cond_dim;
    s.out_dim = target_dim;
    s.mlp = MlpConfig{depth, hidden};
    s.zero_out = true;
    return s;
  }
};

inline void add_regression_params(ParameterStore& ps, const std::string& prefix,
                                  const RegressionConfig& cfg, std::uint64_t seed) {
  add_stack_params(ps, prefix, cfg.stack(), seed);
}

/// Per-position prediction x~ from packed conditioning rows; no sampling.
inline Tensor predict(ParamSource& p, const std::string& prefix, const Tensor& cond,
                      const RegressionConfig& cfg) {
  if (cond.rank() != 2 || cond.dim(1) != cfg.cond_dim)
    throw ContractError("predict: conditioning shape " + shape_str(cond.shape()) +
                        " does not match cond_dim " + std::to_string(cfg.cond_dim));
  return mlp_stack(p, prefix, cond, cfg.stack());
}

namespace loss_detail {

inline double masked_count(const Tensor& mask) {
  if (mask.rank() != 1) throw ContractError("mask must be a [n] tensor of 0/1 values");
  double count = 0.0;
  for (double m : mask.data()) count += m;
  if (count <= 0.0) throw ContractError("loss over an empty mask");
  return count;
}

inline void check_loss_shapes(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape())
    throw DimensionError("loss: prediction shape " + shape_str(pred.shape()) +
                         " != target shape " + shape_str(target.shape()));
  if (pred.rank() != 2 || mask.rank() != 1 || mask.dim(0) != pred.dim(0))
    throw ContractError("loss: mask shape " + shape_str(mask.shape()) +
                        " does not cover prediction rows");
}

}  // namespace loss_detail

/// Mean over valid positions and dimensions of the squared error.
inline Tensor loss_l2(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  loss_detail::check_loss_shapes(pred, target, mask);
  const double count = loss_detail::masked_count(mask) * pred.dim(1);
  Tensor diff = sub(pred, target);
  Tensor sq = mul(diff, diff);
  Tensor masked = mul(sq, repeat_cols(mask, pred.dim(1)));
  return scale(sum(masked), 1.0 / count);
}

/// Mean over valid positions and dimensions of the absolute error.
inline Tensor loss_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  loss_detail::check_loss_shapes(pred, target, mask);
  const double count = loss_detail::masked_count(mask) * pred.dim(1);
  Tensor masked = mul(abs(sub(pred, target)), repeat_cols(mask, pred.dim(1)));
  return scale(sum(masked), 1.0 / count);
}

}  // namespace prosogen
