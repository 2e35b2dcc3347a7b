#pragma once

#include <string>
#include <vector>

#include "prosogen/nn.hpp"
#include "prosogen/tensor.hpp"

namespace prosogen {

/// Shared conditioning encoder. Each position sees a centered window of
/// neighboring phoneme embeddings (zero-padded at the edges) concatenated
/// with the utterance-level style/speaker embedding, then a residual trunk
/// maps to the conditioning dimension.
struct EncoderConfig {
  int phone_vocab = 0;
  int style_vocab = 0;  // style for the prosody task, speaker for the frame task
  int phone_dim = 16;
  int style_dim = 8;
  int context_width = 5;  // odd, centered
  int hidden = 64;
  int depth = 2;
  int out_dim = 32;

  void validate() const {
    if (phone_vocab < 1 || style_vocab < 1)
      throw ContractError("encoder vocabularies must be >= 1");
    if (phone_dim < 1 || style_dim < 1 || hidden < 1 || depth < 1 || out_dim < 1)
      throw ContractError("encoder dimensions must be >= 1");
    if (context_width < 1 || context_width % 2 == 0)
      throw ContractError("context_width must be odd so the window is centered");
  }

  int input_dim() const { return context_width * phone_dim + style_dim; }
};

/// Per-phoneme conditioning c for one utterance.
struct ConditioningSequence {
  Tensor values;  // [n_phonemes, out_dim]
  int length = 0;
};

inline void add_encoder_params(ParameterStore& ps, const std::string& prefix,
                               const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ps.add(prefix + ".phone_emb", init_embedding(cfg.phone_vocab, cfg.phone_dim, seed,
                                               prefix + ".phone_emb"));
  ps.add(prefix + ".style_emb", init_embedding(cfg.style_vocab, cfg.style_dim, seed,
                                               prefix + ".style_emb"));
  StackConfig stack;
  stack.in_dim = cfg.input_dim();
  stack.out_dim = cfg.out_dim;
  stack.mlp = MlpConfig{cfg.depth, cfg.hidden};
  add_stack_params(ps, prefix + ".trunk", stack, seed);
}

/// Window features for one utterance: position i holds the embeddings of
/// phonemes i-r .. i+r (slot order left neighbors first), zero outside the
/// utterance. One op; the gradient scatters each slot back to its source row.
inline Tensor window_features(const Tensor& emb, int context_width) {
  if (emb.rank() != 2) throw DimensionError("window_features expects [n, d] embeddings");
  if (context_width < 1 || context_width % 2 == 0)
    throw ContractError("context width must be odd");
  const int n = emb.dim(0), d = emb.dim(1), r = context_width / 2;
  const int w = context_width;
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(w) *
                              static_cast<std::size_t>(d),
                          0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < w; ++k) {
      const int src = i + k - r;
      if (src < 0 || src >= n) continue;
      std::copy_n(emb.data().data() + static_cast<std::size_t>(src) * d, d,
                  out.data() + (static_cast<std::size_t>(i) * w + k) * d);
    }
  const int ne = tensor_detail::live_node(emb);
  return tensor_detail::finish_op("window_features", {n, w * d}, std::move(out), ne >= 0,
                                  [&](const Tensor&) {
    return [ne, n, d, w, r](const std::vector<double>& g,
                            std::vector<std::vector<double>>& grads) {
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < w; ++k) {
          const int src = i + k - r;
          if (src < 0 || src >= n) continue;
          const double* gp = g.data() + (static_cast<std::size_t>(i) * w + k) * d;
          double* dst = grads[ne].data() + static_cast<std::size_t>(src) * d;
          for (int j = 0; j < d; ++j) dst[j] += gp[j];
        }
    };
  });
}

/// Pre-trunk feature rows for one utterance: windowed phoneme embeddings
/// with the style embedding appended at every position.
inline Tensor encode_features(ParamSource& p, const std::string& prefix, const EncoderConfig& cfg,
                              const std::vector<int>& phonemes, int style) {
  cfg.validate();
  if (phonemes.empty()) throw ContractError("encode requires at least one phoneme");
  const int n = static_cast<int>(phonemes.size());
  Tensor emb = embedding_lookup(p(prefix + ".phone_emb"), phonemes);
  Tensor windowed = window_features(emb, cfg.context_width);
  Tensor style_row = embedding_lookup(p(prefix + ".style_emb"), {style});
  return concat({windowed, repeat_rows(style_row, n)}, 1);
}

/// Shared trunk over (possibly batched) feature rows.
inline Tensor encode_trunk(ParamSource& p, const std::string& prefix, const EncoderConfig& cfg,
                           const Tensor& features) {
  StackConfig stack;
  stack.in_dim = cfg.input_dim();
  stack.out_dim = cfg.out_dim;
  stack.mlp = MlpConfig{cfg.depth, cfg.hidden};
  return mlp_stack(p, prefix + ".trunk", features, stack);
}

/// Encodes one utterance into its conditioning sequence. Length-preserving:
/// one output row per phoneme.
inline ConditioningSequence encode(ParamSource& p, const std::string& prefix,
                                   const EncoderConfig& cfg, const std::vector<int>& phonemes,
                                   int style) {
  Tensor features = encode_features(p, prefix, cfg, phonemes, style);
  return ConditioningSequence{encode_trunk(p, prefix, cfg, features), features.dim(0)};
}

/// Frame-level upsampling: row i of c is repeated durations[i] times, order
/// preserved. Implemented as a selection-matrix product so gradients flow.
inline Tensor length_regulate(const Tensor& c, const std::vector<int>& durations) {
  if (c.rank() != 2) throw ContractError("length_regulate expects a [n, d] conditioning tensor");
  if (static_cast<int>(durations.size()) != c.dim(0))
    throw ContractError("length_regulate: " + std::to_string(durations.size()) +
                        " durations for " + std::to_string(c.dim(0)) + " rows");
  long total = 0;
  for (int d : durations) {
    if (d < 1)
      throw ContractError("length_regulate: durations must be >= 1, got " + std::to_string(d));
    total += d;
  }
  const int n = c.dim(0);
  std::vector<double> sel(static_cast<std::size_t>(total) * static_cast<std::size_t>(n), 0.0);
  long row = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < durations[static_cast<std::size_t>(i)]; ++j, ++row)
      sel[static_cast<std::size_t>(row) * static_cast<std::size_t>(n) +
          static_cast<std::size_t>(i)] = 1.0;
  return matmul(Tensor({static_cast<int>(total), n}, std::move(sel)), c);
}

}  // namespace prosogen
