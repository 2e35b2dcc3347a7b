#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "prosogen/nn.hpp"
#include "prosogen/random.hpp"
#include "prosogen/tensor.hpp"

namespace prosogen {

/// Linear-in-t noise schedule beta(t) = beta0 + (beta1 - beta0) t with the
/// closed-form forward marginal of the variance-preserving SDE:
///   x_t ~ N(mu + (x0 - mu) e^{-B(t)/2}, (1 - e^{-B(t)}) I),
/// B(t) = beta0 t + (beta1 - beta0) t^2 / 2.
struct DiffusionSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;
  double t_min = 1e-4;
  int n_sample_steps = 100;

  void validate() const {
    if (beta0 <= 0.0 || beta1 < beta0)
      throw ContractError("schedule requires 0 < beta0 <= beta1");
    if (t_min <= 0.0 || t_min >= 1.0) throw ContractError("t_min must lie in (0, 1)");
    if (n_sample_steps < 1) throw ContractError("n_sample_steps must be >= 1");
  }

  double beta(double t) const { return beta0 + (beta1 - beta0) * t; }
  double integral(double t) const { return beta0 * t + 0.5 * (beta1 - beta0) * t * t; }
};

struct MarginalStats {
  double shrink = 1.0;  // e^{-B(t)/2}
  double lam = 0.0;     // 1 - e^{-B(t)}
};

inline MarginalStats marginal_stats(double t, const DiffusionSchedule& s) {
  if (t < 0.0 || t > 1.0)
    throw ContractError("marginal_stats: t = " + std::to_string(t) + " outside [0, 1]");
  const double b = s.integral(t);
  return {std::exp(-0.5 * b), -std::expm1(-b)};
}

/// x_t = mu + (x0 - mu) shrink + sqrt(lam) eps for one shared t.
inline Tensor forward_sample(const Tensor& x0, const Tensor& mu, double t, const Tensor& eps,
                             const DiffusionSchedule& schedule) {
  if (x0.shape() != mu.shape() || x0.shape() != eps.shape())
    throw DimensionError("forward_sample: x0 " + shape_str(x0.shape()) + ", mu " +
                         shape_str(mu.shape()) + ", eps " + shape_str(eps.shape()) +
                         " must agree");
  const MarginalStats st = marginal_stats(t, schedule);
  return add(add(scale(mu, 1.0 - st.shrink), scale(x0, st.shrink)),
             scale(eps, std::sqrt(st.lam)));
}

/// Sinusoidal features [sin(t w_k), cos(t w_k)] with w_k geometric in
/// [1, 1000].
inline std::vector<double> time_embed(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ContractError("time_embed needs an even dim >= 2");
  const int n_freq = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < n_freq; ++k) {
    const double w =
        n_freq == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(k) / (n_freq - 1));
    out[static_cast<std::size_t>(2 * k)] = std::sin(t * w);
    out[static_cast<std::size_t>(2 * k + 1)] = std::cos(t * w);
  }
  return out;
}

/// Score decoder: a projector predicts the informative prior mean mu from c,
/// and a residual score network conditioned on [x_t || c || time_embed(t)]
/// estimates the marginal score. The network predicts the injected noise and
/// is rescaled by -1/sqrt(lam(t)), so its training target stays O(1) across
/// t while s_theta keeps score semantics.
struct DiffusionConfig {
  int cond_dim = 32;
  int target_dim = 2;
  int hidden = 96;
  int depth = 2;
  int time_dim = 16;
  DiffusionSchedule schedule;

  void validate() const {
    schedule.validate();
    if (cond_dim < 1 || target_dim < 1 || hidden < 1 || depth < 1)
      throw ContractError("diffusion dims must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0) throw ContractError("time_dim must be even and >= 2");
  }

  StackConfig score_stack() const {
    StackConfig s;
    s.in_dim = target_dim + cond_dim + time_dim;
    s.out_dim = target_dim;
    s.mlp = MlpConfig{depth, hidden};
    s.zero_out = true;
    return s;
  }
};

inline void add_diffusion_params(ParameterStore& ps, const std::string& prefix,
                                 const DiffusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  // The projector starts at zero: mu is the zero function until trained.
  ps.add(prefix + ".proj.w", Tensor::zeros({cfg.cond_dim, cfg.target_dim}));
  ps.add(prefix + ".proj.b", Tensor::zeros({cfg.target_dim}));
  add_stack_params(ps, prefix + ".score", cfg.score_stack(), seed);
}

/// Informative prior mean mu = projector(c).
inline Tensor project_mu(ParamSource& p, const std::string& prefix, const Tensor& cond,
                         const DiffusionConfig& cfg) {
  return linear(cond, p(prefix + ".proj.w"), p(prefix + ".proj.b"));
}

namespace diffusion_detail {

inline Tensor time_rows(const std::vector<double>& t_per_row, int dim) {
  const int n = static_cast<int>(t_per_row.size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(dim));
  for (double t : t_per_row) {
    const auto row = time_embed(t, dim);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n, dim}, std::move(data));
}

/// Score net evaluation with a per-row lambda (training uses one t per
/// utterance, sampling one t for all rows).
inline Tensor score_rows(ParamSource& p, const std::string& prefix, const Tensor& x_t,
                         const Tensor& cond, const std::vector<double>& t_per_row,
                         const std::vector<double>& lam_per_row, const DiffusionConfig& cfg) {
  Tensor net_in = concat({x_t, cond, time_rows(t_per_row, cfg.time_dim)}, 1);
  Tensor raw = mlp_stack(p, prefix + ".score", net_in, cfg.score_stack());
  std::vector<double> neg_inv_sqrt(lam_per_row.size());
  for (std::size_t i = 0; i < lam_per_row.size(); ++i)
    neg_inv_sqrt[i] = -1.0 / std::sqrt(lam_per_row[i]);
  return mul(raw, repeat_cols(Tensor::vec(std::move(neg_inv_sqrt)), cfg.target_dim));
}

}  // namespace diffusion_detail

/// s_theta(x_t, c, t) for one shared diffusion time.
inline Tensor score_eval(ParamSource& p, const std::string& prefix, const Tensor& x_t,
                         const Tensor& cond, double t, const DiffusionConfig& cfg) {
  const MarginalStats st = marginal_stats(t, cfg.schedule);
  const std::vector<double> ts(static_cast<std::size_t>(x_t.dim(0)), t);
  const std::vector<double> lams(static_cast<std::size_t>(x_t.dim(0)), st.lam);
  return diffusion_detail::score_rows(p, prefix, x_t, cond, ts, lams, cfg);
}

struct DiffusionLossParts {
  Tensor total;
  double score_term = 0.0;
  double l1_term = 0.0;
};

/// Weighted score-matching plus L1-on-mu loss at fixed draws (t per
/// utterance, eps per position):
///   mean_valid[ lam * || s_theta(x_t, c, t) + eps / sqrt(lam) ||^2 ]
/// + mean_valid[ | mu(c) - x0 | ].
/// The score target -eps/sqrt(lam) equals -(x_t - mean_t)/lam, the score of
/// the closed-form forward marginal.
inline DiffusionLossParts diffusion_loss_at(const Tensor& x0, const Tensor& cond,
                                            const std::vector<int>& offsets,
                                            const std::vector<double>& t_per_utt,
                                            const Tensor& eps, ParamSource& p,
                                            const std::string& prefix, const DiffusionConfig& cfg,
                                            const Tensor& mask) {
  cfg.validate();
  const int n = x0.dim(0);
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != n)
    throw ContractError("diffusion loss: utterance offsets do not cover the batch");
  if (t_per_utt.size() + 1 != offsets.size())
    throw ContractError("diffusion loss: one t per utterance required");
  double count = 0.0;
  for (double m : mask.data()) count += m;
  if (count <= 0.0) throw ContractError("diffusion loss over an empty mask");

  std::vector<double> t_rows(static_cast<std::size_t>(n));
  std::vector<double> lam_rows(static_cast<std::size_t>(n));
  std::vector<double> shrink_rows(static_cast<std::size_t>(n));
  for (std::size_t u = 0; u + 1 < offsets.size(); ++u) {
    const MarginalStats st = marginal_stats(t_per_utt[u], cfg.schedule);
    for (int i = offsets[u]; i < offsets[u + 1]; ++i) {
      t_rows[static_cast<std::size_t>(i)] = t_per_utt[u];
      lam_rows[static_cast<std::size_t>(i)] = st.lam;
      shrink_rows[static_cast<std::size_t>(i)] = st.shrink;
    }
  }

  const int d = cfg.target_dim;
  Tensor mu = project_mu(p, prefix, cond, cfg);
  Tensor shrink_mat = repeat_cols(Tensor::vec(std::vector<double>(shrink_rows)), d);
  Tensor one_minus_shrink = repeat_cols(
      [&] {
        std::vector<double> v(shrink_rows.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - shrink_rows[i];
        return Tensor::vec(std::move(v));
      }(),
      d);
  std::vector<double> sqrt_lam(lam_rows.size());
  for (std::size_t i = 0; i < sqrt_lam.size(); ++i) sqrt_lam[i] = std::sqrt(lam_rows[i]);
  Tensor noise = mul(eps, repeat_cols(Tensor::vec(std::vector<double>(sqrt_lam)), d));
  Tensor x_t = add(add(mul(mu, one_minus_shrink), mul(x0, shrink_mat)), noise);

  Tensor score = diffusion_detail::score_rows(p, prefix, x_t, cond, t_rows, lam_rows, cfg);
  Tensor target_resid = [&] {
    std::vector<double> inv(sqrt_lam.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / sqrt_lam[i];
    return add(score, mul(eps, repeat_cols(Tensor::vec(std::move(inv)), d)));
  }();
  Tensor row_sq = sum(mul(target_resid, target_resid), 1);                       // [n]
  Tensor weighted = mul(row_sq, mul(Tensor::vec(std::vector<double>(lam_rows)), mask));
  Tensor score_term = scale(sum(weighted), 1.0 / count);

  Tensor l1_masked = mul(abs(sub(mu, x0)), repeat_cols(mask, d));
  Tensor l1_term = scale(sum(l1_masked), 1.0 / (count * d));

  DiffusionLossParts parts;
  parts.total = add(score_term, l1_term);
  parts.score_term = score_term.value();
  parts.l1_term = l1_term.value();
  return parts;
}

/// Training loss with its own draws: t ~ Uniform(t_min, 1) per utterance,
/// eps ~ N(0, I) per position.
inline DiffusionLossParts diffusion_loss(const Tensor& x0, const Tensor& cond,
                                         const std::vector<int>& offsets, ParamSource& p,
                                         const std::string& prefix, const DiffusionConfig& cfg,
                                         RngStream& rng, const Tensor& mask) {
  std::vector<double> t_per_utt(offsets.size() - 1);
  for (double& t : t_per_utt) t = rng.uniform(cfg.schedule.t_min, 1.0);
  std::vector<double> eps(x0.size());
  for (double& e : eps) e = rng.normal();
  return diffusion_loss_at(x0, cond, offsets, t_per_utt, Tensor(x0.shape(), std::move(eps)), p,
                           prefix, cfg, mask);
}

/// Euler integrator of the reverse-time SDE from an explicit initial state.
/// Reversing the forward SDE dx = 1/2 beta (mu - x) dt + sqrt(beta) dW and
/// stepping backward in time gives
///   x <- x + h beta(t) (1/2 (x - mu) + s(x, t)) + tau sqrt(h beta(t)) xi;
/// near t = 1 the score term dominates the expansive drift, so the pair
/// contracts exactly when s estimates the true marginal score. Temperature
/// scales both the terminal draw (made by the caller) and the per-step
/// injected noise, so tau = 0 is fully deterministic.
inline Tensor reverse_sde(const Tensor& x_init, const Tensor& mu,
                          const std::function<Tensor(const Tensor&, double)>& score_fn,
                          const DiffusionSchedule& schedule, double tau, int n_steps,
                          RngStream& rng) {
  schedule.validate();
  if (n_steps < 1) throw ContractError("reverse_sde requires n_steps >= 1");
  if (tau < 0.0) throw ContractError("reverse_sde requires tau >= 0");
  const double h = (1.0 - schedule.t_min) / n_steps;
  Tensor x = x_init;
  for (int k = 0; k < n_steps; ++k) {
    const double t = 1.0 - k * h;
    try {
      const double beta_t = schedule.beta(t);
      Tensor s = score_fn(x, t);
      Tensor drift = scale(add(scale(sub(x, mu), 0.5), s), h * beta_t);
      Tensor next = add(x, drift);
      if (tau > 0.0) {
        std::vector<double> xi(x.size());
        for (double& v : xi) v = rng.normal();
        next = add(next, scale(Tensor(x.shape(), std::move(xi)), tau * std::sqrt(h * beta_t)));
      }
      x = next;
    } catch (const NumericError& e) {
      throw NumericError("reverse_sde diverged at step " + std::to_string(k) + " (t = " +
                         std::to_string(t) + "): " + e.what());
    }
  }
  return x;
}

/// Sampling entry point: x_1 ~ N(mu, tau^2 I), then the reverse SDE under
/// the trained score.
inline Tensor reverse_sample(const Tensor& cond, ParamSource& p, const std::string& prefix,
                             const DiffusionConfig& cfg, double tau, int n_steps,
                             RngStream& rng) {
  cfg.validate();
  Tensor mu = project_mu(p, prefix, cond, cfg);
  std::vector<double> init(mu.size());
  for (double& v : init) v = tau * rng.normal();
  Tensor x_init = add(mu, Tensor(mu.shape(), std::move(init)));
  auto score_fn = [&](const Tensor& x, double t) {
    return score_eval(p, prefix, x, cond, t, cfg);
  };
  return reverse_sde(x_init, mu, score_fn, cfg.schedule, tau, n_steps, rng);
}

}  // namespace prosogen
