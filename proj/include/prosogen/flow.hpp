#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "prosogen/nn.hpp"
#include "prosogen/random.hpp"
#include "prosogen/tensor.hpp"

namespace prosogen {

/// Conditional normalizing flow built from affine coupling steps under a
/// N(0,1) prior. Consecutive steps swap which feature half is transformed.
/// The coupling nets' output layers start at zero, so the whole flow is the
/// identity map at initialization.
struct FlowConfig {
  int n_steps = 8;  // even recommended so both halves transform equally often
  int cond_dim = 32;
  int target_dim = 2;  // D >= 2; for D = 2 the halves are 1-dim each
  int hidden = 64;
  int depth = 1;
  double s_max = 3.0;  // log-scale cap via s_max * tanh(raw / s_max)

  void validate() const {
    if (n_steps < 2) throw ContractError("flow needs at least 2 coupling steps");
    if (target_dim < 2) throw ContractError("affine coupling needs target_dim >= 2");
    if (cond_dim < 1 || hidden < 1 || depth < 1) throw ContractError("flow dims must be >= 1");
    if (s_max <= 0.0) throw ContractError("s_max must be positive");
  }

  int dim_a() const { return target_dim / 2; }
  int dim_b() const { return target_dim - target_dim / 2; }

  /// Identity/transformed half sizes of step k (halves swap between steps).
  std::pair<int, int> step_dims(int k) const {
    return k % 2 == 0 ? std::pair{dim_a(), dim_b()} : std::pair{dim_b(), dim_a()};
  }

  StackConfig step_stack(int k) const {
    const auto [id_dim, tr_dim] = step_dims(k);
    StackConfig s;
    s.in_dim = id_dim + cond_dim;
    s.out_dim = 2 * tr_dim;
    s.mlp = MlpConfig{depth, hidden};
    s.zero_out = true;
    return s;
  }
};

inline void add_flow_params(ParameterStore& ps, const std::string& prefix, const FlowConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  for (int k = 0; k < cfg.n_steps; ++k)
    add_stack_params(ps, prefix + ".step" + std::to_string(k), cfg.step_stack(k), seed);
}

/// Latent and accumulated log-determinant of one utterance batch.
struct FlowLatent {
  Tensor z;          // [n, D]
  Tensor log_det;    // scalar, summed over valid positions
};

namespace flow_detail {

struct CouplingNet {
  Tensor log_scale;  // [n, tr_dim], capped
  Tensor shift;      // [n, tr_dim]
};

/// Evaluates the coupling net of step k on [identity-half || c] and returns
/// the capped log-scale and shift.
inline CouplingNet coupling_net(ParamSource& p, const std::string& prefix, int k,
                                const Tensor& identity_half, const Tensor& cond,
                                const FlowConfig& cfg) {
  const auto [id_dim, tr_dim] = cfg.step_dims(k);
  Tensor net_in = concat({identity_half, cond}, 1);
  Tensor out = mlp_stack(p, prefix + ".step" + std::to_string(k), net_in, cfg.step_stack(k));
  auto parts = split(out, 1, {tr_dim, tr_dim});
  Tensor capped = scale(tanh(scale(parts[0], 1.0 / cfg.s_max)), cfg.s_max);
  return {capped, parts[1]};
}

inline Tensor masked_sum(const Tensor& values, const Tensor& mask) {
  return sum(mul(values, repeat_cols(mask, values.dim(1))));
}

}  // namespace flow_detail

/// One affine coupling step: the identity half passes through, the other is
/// scaled and shifted by the coupling net. log_det is the masked sum of log
/// scales.
inline std::pair<Tensor, Tensor> coupling_forward(const Tensor& h, const Tensor& cond,
                                                  ParamSource& p, const std::string& prefix,
                                                  int k, const FlowConfig& cfg,
                                                  const Tensor& mask) {
  const auto [id_dim, tr_dim] = cfg.step_dims(k);
  auto halves = split(h, 1, k % 2 == 0 ? std::vector<int>{id_dim, tr_dim}
                                       : std::vector<int>{tr_dim, id_dim});
  const Tensor& identity_half = k % 2 == 0 ? halves[0] : halves[1];
  const Tensor& transform_half = k % 2 == 0 ? halves[1] : halves[0];
  auto net = flow_detail::coupling_net(p, prefix, k, identity_half, cond, cfg);
  Tensor transformed = add(mul(transform_half, exp(net.log_scale)), net.shift);
  Tensor out = k % 2 == 0 ? concat({identity_half, transformed}, 1)
                          : concat({transformed, identity_half}, 1);
  return {out, flow_detail::masked_sum(net.log_scale, mask)};
}

/// Exact inverse of coupling_forward; its log_det is the negated forward one.
inline std::pair<Tensor, Tensor> coupling_inverse(const Tensor& h, const Tensor& cond,
                                                  ParamSource& p, const std::string& prefix,
                                                  int k, const FlowConfig& cfg,
                                                  const Tensor& mask) {
  const auto [id_dim, tr_dim] = cfg.step_dims(k);
  auto halves = split(h, 1, k % 2 == 0 ? std::vector<int>{id_dim, tr_dim}
                                       : std::vector<int>{tr_dim, id_dim});
  const Tensor& identity_half = k % 2 == 0 ? halves[0] : halves[1];
  const Tensor& transform_half = k % 2 == 0 ? halves[1] : halves[0];
  auto net = flow_detail::coupling_net(p, prefix, k, identity_half, cond, cfg);
  Tensor restored = mul(sub(transform_half, net.shift), exp(scale(net.log_scale, -1.0)));
  Tensor out = k % 2 == 0 ? concat({identity_half, restored}, 1)
                          : concat({restored, identity_half}, 1);
  return {out, scale(flow_detail::masked_sum(net.log_scale, mask), -1.0)};
}

/// Full forward pass x -> z with accumulated log-determinant.
inline FlowLatent flow_forward(const Tensor& x, const Tensor& cond, ParamSource& p,
                               const std::string& prefix, const FlowConfig& cfg,
                               const Tensor& mask) {
  cfg.validate();
  if (x.rank() != 2 || x.dim(1) != cfg.target_dim)
    throw ContractError("flow_forward: input shape " + shape_str(x.shape()) +
                        " does not match target_dim " + std::to_string(cfg.target_dim));
  Tensor h = x;
  Tensor log_det = Tensor::scalar(0.0);
  for (int k = 0; k < cfg.n_steps; ++k) {
    auto [next, ld] = coupling_forward(h, cond, p, prefix, k, cfg, mask);
    h = next;
    log_det = add(log_det, ld);
  }
  return {h, log_det};
}

/// Full inverse pass z -> x (steps applied in reverse order).
inline FlowLatent flow_inverse(const Tensor& z, const Tensor& cond, ParamSource& p,
                               const std::string& prefix, const FlowConfig& cfg,
                               const Tensor& mask) {
  Tensor h = z;
  Tensor log_det = Tensor::scalar(0.0);
  for (int k = cfg.n_steps - 1; k >= 0; --k) {
    auto [next, ld] = coupling_inverse(h, cond, p, prefix, k, cfg, mask);
    h = next;
    log_det = add(log_det, ld);
  }
  return {h, log_det};
}

/// Exact negative log-likelihood under the N(0,1) prior, averaged per valid
/// position and dimension:
///   [ sum_valid (z^2/2 + ln(2 pi)/2) - log_det ] / (#valid * D).
inline Tensor flow_nll(const Tensor& x, const Tensor& cond, ParamSource& p,
                       const std::string& prefix, const FlowConfig& cfg, const Tensor& mask) {
  const double count = [&] {
    double c = 0.0;
    for (double m : mask.data()) c += m;
    if (c <= 0.0) throw ContractError("flow_nll over an empty mask");
    return c;
  }();
  FlowLatent latent = flow_forward(x, cond, p, prefix, cfg, mask);
  constexpr double half_ln_2pi = 0.9189385332046727;
  Tensor per_entry = add_scalar(scale(mul(latent.z, latent.z), 0.5), half_ln_2pi);
  Tensor total = flow_detail::masked_sum(per_entry, mask);
  return scale(sub(total, latent.log_det), 1.0 / (count * cfg.target_dim));
}

/// Temperature sampling: z ~ N(0, tau^2 I) per position, mapped back through
/// the inverse flow. tau = 0 degenerates to the modal inverse image of z = 0.
inline Tensor flow_sample(const Tensor& cond, ParamSource& p, const std::string& prefix,
                          const FlowConfig& cfg, double tau, RngStream& rng) {
  if (tau < 0.0) throw ContractError("flow_sample requires tau >= 0");
  const int n = cond.dim(0);
  std::vector<double> zdata(static_cast<std::size_t>(n) * static_cast<std::size_t>(cfg.target_dim));
  for (double& v : zdata) v = tau * rng.normal();
  Tensor z({n, cfg.target_dim}, std::move(zdata));
  Tensor mask = Tensor::full({n}, 1.0);
  return flow_inverse(z, cond, p, prefix, cfg, mask).z;
}

}  // namespace prosogen
