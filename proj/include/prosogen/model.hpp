#pragma once

#include <string>
#include <thread>
#include <vector>

#include "prosogen/data.hpp"
#include "prosogen/diffusion.hpp"
#include "prosogen/encoder.hpp"
#include "prosogen/flow.hpp"
#include "prosogen/nn.hpp"
#include "prosogen/regression.hpp"

namespace prosogen {

enum class TaskKind { prosody, frames };
enum class ModelKind { l2, flow, diff };

inline std::string to_string(TaskKind t) { return t == TaskKind::prosody ? "prosody" : "frames"; }
inline std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::l2: return "l2";
    case ModelKind::flow: return "flow";
    default: return "diff";
  }
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "prosody") return TaskKind::prosody;
  if (s == "frames") return TaskKind::frames;
  throw ContractError("unknown task '" + s + "' (expected prosody or frames)");
}

inline ModelKind model_from_string(const std::string& s) {
  if (s == "l2") return ModelKind::l2;
  if (s == "flow") return ModelKind::flow;
  if (s == "diff") return ModelKind::diff;
  throw ContractError("unknown model '" + s + "' (expected l2, flow or diff)");
}

/// Complete architecture description of one experiment's model. The frame
/// task conditions the decoder on [encoder output || phoneme-level log-f0]
/// upsampled to frame level; the prosody task conditions on the encoder
/// output directly.
struct ModelSpec {
  TaskKind task = TaskKind::prosody;
  ModelKind kind = ModelKind::l2;
  EncoderConfig encoder;
  int frame_dim = 8;
  RegressionConfig regression;
  FlowConfig flow;
  DiffusionConfig diffusion;
  // Optional fixed target affine: decoders train on (x - shift)/scale and
  // predictions map back through it before leaving the model. Tames scale
  // imbalance between log-f0 and raw frame counts; empty means identity.
  std::vector<double> target_shift;
  std::vector<double> target_scale;

  int target_dim() const { return task == TaskKind::prosody ? 2 : frame_dim; }
  int cond_dim() const { return encoder.out_dim + (task == TaskKind::frames ? 1 : 0); }

  bool standardized() const { return !target_shift.empty(); }

  /// Propagates the derived dimensions into the decoder configs.
  void finalize() {
    encoder.validate();
    if (target_shift.size() != target_scale.size())
      throw ContractError("target_shift and target_scale must have equal lengths");
    if (!target_shift.empty()) {
      if (static_cast<int>(target_shift.size()) != target_dim())
        throw ContractError("target affine length must equal the target dimension");
      for (double s : target_scale)
        if (s <= 0.0) throw ContractError("target_scale entries must be positive");
    }
    regression.cond_dim = cond_dim();
    regression.target_dim = target_dim();
    flow.cond_dim = cond_dim();
    flow.target_dim = target_dim();
    diffusion.cond_dim = cond_dim();
    diffusion.target_dim = target_dim();
    switch (kind) {
      case ModelKind::l2: break;
      case ModelKind::flow: flow.validate(); break;
      case ModelKind::diff: diffusion.validate(); break;
    }
  }

  std::string head_prefix() const { return to_string(kind); }
};

struct Model {
  ModelSpec spec;
  ParameterStore params;
};

/// Parameters are a pure function of (spec, seed).
inline Model build_model(ModelSpec spec, std::uint64_t seed) {
  spec.finalize();
  Model m;
  m.spec = spec;
  add_encoder_params(m.params, "encoder", spec.encoder, seed);
  switch (spec.kind) {
    case ModelKind::l2:
      add_regression_params(m.params, spec.head_prefix(), spec.regression, seed);
      break;
    case ModelKind::flow:
      add_flow_params(m.params, spec.head_prefix(), spec.flow, seed);
      break;
    case ModelKind::diff:
      add_diffusion_params(m.params, spec.head_prefix(), spec.diffusion, seed);
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

/// Positions of several utterances packed into one matrix (no padding, so
/// the validity mask is all ones); offsets mark utterance boundaries.
struct Batch {
  Tensor cond;               // [N, cond_dim]
  Tensor targets;            // [N, target_dim]
  Tensor mask;               // [N]
  std::vector<int> offsets;  // n_utts + 1
};

/// Conditioning rows for one prosody utterance.
inline Tensor conditioning_rows(ParamSource& p, const ModelSpec& spec,
                                const UtteranceRecord& rec) {
  return encode(p, "encoder", spec.encoder, rec.phonemes, rec.style).values;
}

/// Conditioning rows for one frame-task utterance: encoder over (phonemes,
/// speaker), phoneme-level log-f0 appended, upsampled by the durations.
inline Tensor conditioning_rows(ParamSource& p, const ModelSpec& spec,
                                const FrameTaskRecord& rec) {
  Tensor c = encode(p, "encoder", spec.encoder, rec.phonemes, rec.speaker).values;
  Tensor f0_col = Tensor({static_cast<int>(rec.log_f0.size()), 1}, rec.log_f0);
  return length_regulate(concat({c, f0_col}, 1), rec.duration);
}

namespace model_detail {

inline Tensor apply_target_affine(const ModelSpec& spec, Tensor raw) {
  if (!spec.standardized()) return raw;
  std::vector<double> data = raw.data();
  const int d = raw.dim(1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t j = i % static_cast<std::size_t>(d);
    data[i] = (data[i] - spec.target_shift[j]) / spec.target_scale[j];
  }
  return Tensor(raw.shape(), std::move(data));
}

/// Maps model-space predictions back to feature units (tape-free path).
inline Tensor invert_target_affine(const ModelSpec& spec, Tensor pred) {
  if (!spec.standardized()) return pred;
  std::vector<double> data = pred.data();
  const int d = pred.dim(1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t j = i % static_cast<std::size_t>(d);
    data[i] = data[i] * spec.target_scale[j] + spec.target_shift[j];
  }
  return Tensor(pred.shape(), std::move(data));
}

}  // namespace model_detail

inline Tensor target_rows(const ModelSpec& spec, const UtteranceRecord& rec) {
  const int n = static_cast<int>(rec.phonemes.size());
  std::vector<double> data(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    data[static_cast<std::size_t>(i) * 2] = rec.log_f0[static_cast<std::size_t>(i)];
    data[static_cast<std::size_t>(i) * 2 + 1] =
        static_cast<double>(rec.duration[static_cast<std::size_t>(i)]);
  }
  return model_detail::apply_target_affine(spec, Tensor({n, 2}, std::move(data)));
}

inline Tensor target_rows(const ModelSpec& spec, const FrameTaskRecord& rec) {
  const int n = static_cast<int>(rec.frame_feats.size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(spec.frame_dim));
  for (const auto& row : rec.frame_feats) {
    if (static_cast<int>(row.size()) != spec.frame_dim)
      throw ContractError(rec.utt_id + ": frame feature dim " + std::to_string(row.size()) +
                          " != configured frame_dim " + std::to_string(spec.frame_dim));
    data.insert(data.end(), row.begin(), row.end());
  }
  return model_detail::apply_target_affine(spec, Tensor({n, spec.frame_dim}, std::move(data)));
}

/// Packs a minibatch. The encoder trunk runs once over all positions of all
/// utterances; only the per-utterance pieces (windowing, frame upsampling)
/// are assembled individually.
template <typename Record>
Batch assemble_batch(ParamSource& p, const ModelSpec& spec, const std::vector<Record>& records,
                     const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("assemble_batch over an empty index set");
  std::vector<Tensor> feature_parts, target_parts;
  std::vector<int> lengths;
  for (int idx : indices) {
    const Record& rec = records.at(static_cast<std::size_t>(idx));
    const int speaker_or_style =
        spec.task == TaskKind::prosody ? rec.style : rec.speaker;
    Tensor features = encode_features(p, "encoder", spec.encoder, rec.phonemes, speaker_or_style);
    lengths.push_back(features.dim(0));
    feature_parts.push_back(std::move(features));
    target_parts.push_back(target_rows(spec, rec));
  }
  Tensor encoded = encode_trunk(p, "encoder", spec.encoder, concat(feature_parts, 0));

  Batch batch;
  batch.offsets.push_back(0);
  if (spec.task == TaskKind::prosody) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      if (target_parts[i].dim(0) != lengths[i])
        throw ContractError("conditioning rows != target rows in batch");
      batch.offsets.push_back(batch.offsets.back() + lengths[i]);
    }
    batch.cond = encoded;
  } else {
    auto per_utt = split(encoded, 0, lengths);
    std::vector<Tensor> cond_parts;
    for (std::size_t i = 0; i < per_utt.size(); ++i) {
      const Record& rec = records.at(static_cast<std::size_t>(indices[i]));
      Tensor f0_col = Tensor({lengths[i], 1}, rec.log_f0);
      Tensor up = length_regulate(concat({per_utt[i], f0_col}, 1), rec.duration);
      if (target_parts[i].dim(0) != up.dim(0))
        throw ContractError(rec.utt_id + ": conditioning rows != target rows");
      batch.offsets.push_back(batch.offsets.back() + up.dim(0));
      cond_parts.push_back(std::move(up));
    }
    batch.cond = concat(cond_parts, 0);
  }
  batch.targets = concat(target_parts, 0);
  batch.mask = Tensor::full({batch.cond.dim(0)}, 1.0);
  return batch;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  LossCurve curve;
};

namespace model_detail {

template <typename Record>
std::vector<int> draw_batch(RngStream& rng, const std::vector<Record>& records, int batch_size) {
  if (records.empty()) throw ContractError("training requires a non-empty corpus");
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  for (int& i : idx) i = rng.uniform_int(static_cast<int>(records.size()));
  return idx;
}

}  // namespace model_detail

/// L2 loss on the prosody task, L1 on the frame task, per the task wiring.
template <typename Record>
TrainResult train_regression(Model& model, const std::vector<Record>& train_records,
                             const TrainOptions& opt) {
  if (model.spec.kind != ModelKind::l2)
    throw ContractError("train_regression called on a " + to_string(model.spec.kind) + " model");
  const bool use_l1 = model.spec.task == TaskKind::frames;
  TrainResult result;
  result.curve = train_loop(model.params, opt, [&](ParamSource& p, RngStream& rng, int,
                                                   std::vector<double>&) {
    const auto idx = model_detail::draw_batch(rng, train_records, opt.batch_size);
    Batch batch = assemble_batch(p, model.spec, train_records, idx);
    Tensor pred = predict(p, model.spec.head_prefix(), batch.cond, model.spec.regression);
    return use_l1 ? loss_l1(pred, batch.targets, batch.mask)
                  : loss_l2(pred, batch.targets, batch.mask);
  });
  return result;
}

template <typename Record>
TrainResult train_flow(Model& model, const std::vector<Record>& train_records,
                       const TrainOptions& opt) {
  if (model.spec.kind != ModelKind::flow)
    throw ContractError("train_flow called on a " + to_string(model.spec.kind) + " model");
  TrainResult result;
  result.curve = train_loop(model.params, opt, [&](ParamSource& p, RngStream& rng, int,
                                                   std::vector<double>&) {
    const auto idx = model_detail::draw_batch(rng, train_records, opt.batch_size);
    Batch batch = assemble_batch(p, model.spec, train_records, idx);
    return flow_nll(batch.targets, batch.cond, p, model.spec.head_prefix(), model.spec.flow,
                    batch.mask);
  });
  return result;
}

template <typename Record>
TrainResult train_diffusion(Model& model, const std::vector<Record>& train_records,
                            const TrainOptions& opt) {
  if (model.spec.kind != ModelKind::diff)
    throw ContractError("train_diffusion called on a " + to_string(model.spec.kind) + " model");
  TrainResult result;
  result.curve = train_loop(model.params, opt, [&](ParamSource& p, RngStream& rng, int,
                                                   std::vector<double>& components) {
    const auto idx = model_detail::draw_batch(rng, train_records, opt.batch_size);
    Batch batch = assemble_batch(p, model.spec, train_records, idx);
    auto parts = diffusion_loss(batch.targets, batch.cond, batch.offsets, p,
                                model.spec.head_prefix(), model.spec.diffusion, rng, batch.mask);
    components = {parts.score_term, parts.l1_term};
    return parts.total;
  });
  return result;
}

template <typename Record>
TrainResult train_model(Model& model, const std::vector<Record>& train_records,
                        const TrainOptions& opt) {
  switch (model.spec.kind) {
    case ModelKind::l2: return train_regression(model, train_records, opt);
    case ModelKind::flow: return train_flow(model, train_records, opt);
    default: return train_diffusion(model, train_records, opt);
  }
}

// ---------------------------------------------------------------------------
// Sampling (prosody task)
// ---------------------------------------------------------------------------

/// Continuous per-position prediction of the deterministic head; durations
/// stay unrounded here.
inline Tensor predict_rows(const Model& model, const UtteranceRecord& rec) {
  if (model.spec.kind != ModelKind::l2)
    throw ContractError("predict_rows requires the deterministic l2 head");
  ParamSource p(model.params);
  Tensor cond = conditioning_rows(p, model.spec, rec);
  return model_detail::invert_target_affine(
      model.spec, predict(p, model.spec.head_prefix(), cond, model.spec.regression));
}

/// K draws per test utterance. The per-utterance rng stream depends only on
/// (seed, utterance index, draw), so thread count does not change results.
/// Durations are rounded half-up with a floor of 1 at this boundary.
inline std::vector<SampleRecord> sample_prosody(const Model& model,
                                                const std::vector<UtteranceRecord>& records,
                                                double tau, int draws, std::uint64_t seed,
                                                int threads = 1) {
  if (model.spec.task != TaskKind::prosody)
    throw ContractError("sampling emits prosody records; the checkpoint is a frames-task model");
  if (tau < 0.0) throw ContractError("sampling requires tau >= 0");
  if (draws < 1) throw ContractError("sampling requires at least one draw");
  if (model.spec.kind == ModelKind::l2 && draws != 1)
    throw ContractError("the l2 head is deterministic; draws must be 1");

  std::vector<SampleRecord> out(records.size() * static_cast<std::size_t>(draws));
  RngStream root = RngStream(seed).fork("sample");

  auto run_range = [&](std::size_t begin, std::size_t end) {
    ParamSource p(model.params);
    for (std::size_t i = begin; i < end; ++i) {
      const UtteranceRecord& rec = records[i];
      Tensor cond = conditioning_rows(p, model.spec, rec);
      for (int k = 0; k < draws; ++k) {
        RngStream rng = root.fork(i).fork(static_cast<std::uint64_t>(k));
        Tensor x;
        switch (model.spec.kind) {
          case ModelKind::l2:
            x = predict(p, model.spec.head_prefix(), cond, model.spec.regression);
            break;
          case ModelKind::flow:
            x = flow_sample(cond, p, model.spec.head_prefix(), model.spec.flow, tau, rng);
            break;
          case ModelKind::diff:
            x = reverse_sample(cond, p, model.spec.head_prefix(), model.spec.diffusion, tau,
                               model.spec.diffusion.schedule.n_sample_steps, rng);
            break;
        }
        x = model_detail::invert_target_affine(model.spec, x);
        SampleRecord s;
        s.utt_id = rec.utt_id;
        s.draw = k;
        const int n = x.dim(0);
        s.log_f0.reserve(static_cast<std::size_t>(n));
        s.duration.reserve(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) {
          s.log_f0.push_back(x.at(r, 0));
          s.duration.push_back(round_duration(x.at(r, 1)));
        }
        out[i * static_cast<std::size_t>(draws) + static_cast<std::size_t>(k)] = std::move(s);
      }
    }
  };

  if (threads <= 1 || records.size() < 2) {
    run_range(0, records.size());
  } else {
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                        records.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (records.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(records.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace prosogen
