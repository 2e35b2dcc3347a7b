#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosogen/random.hpp"
#include "prosogen/tensor.hpp"

namespace prosogen {

/// Ordered collection of named parameters. Iteration order is insertion
/// order and defines the checkpoint serialization order.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (values_.count(name))
      throw ContractError("parameter '" + name + "' already exists");
    order_.push_back(name);
    values_.emplace(name, std::move(value));
  }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Tensor value) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
    if (value.shape() != it->second.shape())
      throw ContractError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                          ", refusing to assign shape " + shape_str(value.shape()));
    it->second = std::move(value);
  }

  const std::vector<std::string>& names() const { return order_; }

  std::size_t count() const { return order_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += values_.at(name).size();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> values_;
};

/// Access point used by forward passes. When constructed with a tape it
/// hands out watched views (one tape node per parameter per step, cached);
/// without a tape it hands out the raw tensors for inference.
class ParamSource {
 public:
  explicit ParamSource(const ParameterStore& store) : store_(&store) {}
  ParamSource(const ParameterStore& store, GradientTape& tape) : store_(&store), tape_(&tape) {}

  /// Source backed by explicit tensors (possibly already tracked); used by
  /// gradient-check harnesses that route parameters through tensor ops.
  static ParamSource overrides(std::map<std::string, Tensor> values) {
    ParamSource p;
    p.overrides_ = std::move(values);
    return p;
  }

  Tensor operator()(const std::string& name) {
    if (!overrides_.empty()) {
      auto it = overrides_.find(name);
      if (it == overrides_.end()) throw ContractError("no override for parameter '" + name + "'");
      return it->second;
    }
    if (tape_ == nullptr) return store_->get(name);
    auto it = watched_.find(name);
    if (it != watched_.end()) return it->second;
    Tensor w = tape_->watch(store_->get(name));
    watched_.emplace(name, w);
    return w;
  }

  /// Gradients for every parameter touched this step, keyed by name.
  std::map<std::string, Tensor> collect(const GradientTape::Gradients& grads) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, w] : watched_) out.emplace(name, grads.grad_of(w));
    return out;
  }

 private:
  ParamSource() = default;

  const ParameterStore* store_ = nullptr;
  GradientTape* tape_ = nullptr;
  std::unordered_map<std::string, Tensor> watched_;
  std::map<std::string, Tensor> overrides_;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform in +-sqrt(1/d_in), drawn from a stream keyed by (seed, name) so
/// initialization is a pure function of seed and architecture.
inline Tensor init_weight(int d_in, int d_out, std::uint64_t seed, const std::string& name) {
  RngStream rng = RngStream(seed).fork(name);
  const double lim = std::sqrt(1.0 / static_cast<double>(d_in));
  std::vector<double> d(static_cast<std::size_t>(d_in) * static_cast<std::size_t>(d_out));
  for (double& x : d) x = rng.uniform(-lim, lim);
  return Tensor({d_in, d_out}, std::move(d));
}

inline Tensor init_embedding(int vocab, int dim, std::uint64_t seed, const std::string& name) {
  RngStream rng = RngStream(seed).fork(name);
  const double lim = std::sqrt(1.0 / static_cast<double>(dim));
  std::vector<double> d(static_cast<std::size_t>(vocab) * static_cast<std::size_t>(dim));
  for (double& x : d) x = rng.uniform(-lim, lim);
  return Tensor({vocab, dim}, std::move(d));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// x W + b with the bias expanded explicitly over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw DimensionError("linear expects x[n,d_in], W[d_in,d_out], b[d_out]");
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
    throw DimensionError("linear shapes disagree: x" + shape_str(x.shape()) + " W" +
                         shape_str(w.shape()) + " b" + shape_str(b.shape()));
  return add(matmul(x, w), repeat_rows(b, x.dim(0)));
}

/// Row gather from an embedding table; the gradient scatters back into the
/// looked-up rows only.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
  const int vocab = table.dim(0), dim = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(vocab) + ")");
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw ContractError("embedding_lookup with no ids");
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(dim));
  for (int r = 0; r < n; ++r)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * dim, dim,
                out.data() + static_cast<std::size_t>(r) * dim);
  const int nt = tensor_detail::live_node(table);
  return tensor_detail::finish_op("embedding_lookup", {n, dim}, std::move(out), nt >= 0,
                                  [&](const Tensor&) {
    return [nt, ids, dim](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (int j = 0; j < dim; ++j)
          grads[nt][static_cast<std::size_t>(ids[r]) * dim + j] += g[r * dim + j];
    };
  });
}

// ---------------------------------------------------------------------------
// Residual MLP and projection stacks
// ---------------------------------------------------------------------------

struct MlpConfig {
  int depth = 2;
  int hidden = 64;
};

inline void add_residual_mlp_params(ParameterStore& ps, const std::string& prefix, int d,
                                    const MlpConfig& cfg, std::uint64_t seed) {
  if (cfg.depth < 1) throw ContractError("residual MLP depth must be >= 1");
  for (int k = 0; k < cfg.depth; ++k) {
    const std::string base = prefix + ".block" + std::to_string(k);
    ps.add(base + ".w1", init_weight(d, cfg.hidden, seed, base + ".w1"));
    ps.add(base + ".b1", Tensor::zeros({cfg.hidden}));
    ps.add(base + ".w2", init_weight(cfg.hidden, d, seed, base + ".w2"));
    ps.add(base + ".b2", Tensor::zeros({d}));
  }
}

/// depth blocks of x + W2 tanh(W1 x + b1) + b2; dimension preserved.
inline Tensor residual_mlp(ParamSource& p, const std::string& prefix, const Tensor& x,
                           const MlpConfig& cfg) {
  Tensor h = x;
  for (int k = 0; k < cfg.depth; ++k) {
    const std::string base = prefix + ".block" + std::to_string(k);
    Tensor inner = tanh(linear(h, p(base + ".w1"), p(base + ".b1")));
    h = add(h, linear(inner, p(base + ".w2"), p(base + ".b2")));
  }
  return h;
}

/// Input projection -> residual trunk -> output projection. Heads that must
/// start as the zero function set zero_out.
struct StackConfig {
  int in_dim = 0;
  int out_dim = 0;
  MlpConfig mlp;
  bool zero_out = false;
};

inline void add_stack_params(ParameterStore& ps, const std::string& prefix, const StackConfig& cfg,
                             std::uint64_t seed) {
  ps.add(prefix + ".in.w", init_weight(cfg.in_dim, cfg.mlp.hidden, seed, prefix + ".in.w"));
  ps.add(prefix + ".in.b", Tensor::zeros({cfg.mlp.hidden}));
  add_residual_mlp_params(ps, prefix, cfg.mlp.hidden, cfg.mlp, seed);
  ps.add(prefix + ".out.w", cfg.zero_out
                                ? Tensor::zeros({cfg.mlp.hidden, cfg.out_dim})
                                : init_weight(cfg.mlp.hidden, cfg.out_dim, seed, prefix + ".out.w"));
  ps.add(prefix + ".out.b", Tensor::zeros({cfg.out_dim}));
}

inline Tensor mlp_stack(ParamSource& p, const std::string& prefix, const Tensor& x,
                        const StackConfig& cfg) {
  Tensor h = tanh(linear(x, p(prefix + ".in.w"), p(prefix + ".in.b")));
  h = residual_mlp(p, prefix, h, cfg.mlp);
  return linear(h, p(prefix + ".out.w"), p(prefix + ".out.b"));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::map<std::string, std::vector<double>> m, v;

  static AdamState init(const ParameterStore& params, AdamConfig cfg = {}) {
    AdamState st;
    st.config = cfg;
    for (const auto& name : params.names()) {
      st.m[name].assign(params.get(name).size(), 0.0);
      st.v[name].assign(params.get(name).size(), 0.0);
    }
    return st;
  }
};

/// One Adam update with bias correction. Every parameter must come with a
/// gradient; a missing entry is a wiring bug, not a soft condition.
inline void adam_step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
                      AdamState& st) {
  for (const auto& name : params.names())
    if (!grads.count(name))
      throw ContractError("adam_step: no gradient for parameter '" + name + "'");
  st.t += 1;
  const AdamConfig& c = st.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (const auto& name : params.names()) {
    const Tensor& p = params.get(name);
    const std::vector<double>& g = grads.at(name).data();
    if (grads.at(name).shape() != p.shape())
      throw ContractError("adam_step: gradient shape mismatch for '" + name + "'");
    std::vector<double>& m = st.m[name];
    std::vector<double>& v = st.v[name];
    std::vector<double> next = p.data();
    for (std::size_t i = 0; i < next.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      next[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
    params.set(name, Tensor(p.shape(), std::move(next)));
  }
}

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) g = scale(g, s);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// A checkpoint is a directory holding
//   manifest.json  - {"version":1, "dtype":"f64le", "params":[{name, shape}...]}
//                    plus {"adam":{"t":N}} when optimizer state is saved
//   weights.bin    - row-major little-endian binary64, concatenated in
//                    manifest order
//   adam_m.bin / adam_v.bin - same layout, present with optimizer state
// The roundtrip is bitwise exact.

namespace nn_detail {

inline void write_f64le(std::ofstream& os, const std::vector<double>& v) {
  for (double x : v) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
  }
}

inline std::vector<double> read_f64le(std::ifstream& is, std::size_t n, const std::string& file) {
  std::vector<double> out(n);
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw ParseError(file + ": truncated at byte offset " + std::to_string(is.gcount()));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | buf[i * 8 + static_cast<std::size_t>(b)];
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline void write_blob(const std::filesystem::path& path,
                       const ParameterStore& params_order_src,
                       const std::map<std::string, std::vector<double>>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& name : params_order_src.names()) write_f64le(os, values.at(name));
  if (!os) throw IoError("write failed on " + path.string());
}

}  // namespace nn_detail

inline void save_checkpoint(const ParameterStore& params, const std::filesystem::path& dir,
                            const AdamState* adam = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "f64le";
  manifest["params"] = nlohmann::ordered_json::array();
  for (const auto& name : params.names()) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = params.get(name).shape();
    manifest["params"].push_back(entry);
  }
  if (adam != nullptr) manifest["adam"] = {{"t", adam->t}};

  {
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "weights.bin").string());
    for (const auto& name : params.names()) nn_detail::write_f64le(os, params.get(name).data());
  }
  if (adam != nullptr) {
    nn_detail::write_blob(dir / "adam_m.bin", params, adam->m);
    nn_detail::write_blob(dir / "adam_v.bin", params, adam->v);
  }
}

namespace nn_detail {

struct ManifestEntry {
  std::string name;
  Shape shape;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  bool has_adam = false;
  std::int64_t adam_t = 0;
};

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what() + " (byte offset " +
                     std::to_string(e.byte) + ")");
  }
  if (!j.contains("version") || j["version"] != 1)
    throw ParseError(path.string() + ": unsupported or missing version");
  if (!j.contains("dtype") || j["dtype"] != "f64le")
    throw ParseError(path.string() + ": unsupported dtype");
  Manifest m;
  for (const auto& entry : j.at("params")) {
    ManifestEntry e;
    e.name = entry.at("name").get<std::string>();
    e.shape = entry.at("shape").get<Shape>();
    m.entries.push_back(std::move(e));
  }
  if (j.contains("adam")) {
    m.has_adam = true;
    m.adam_t = j["adam"].at("t").get<std::int64_t>();
  }
  return m;
}

}  // namespace nn_detail

inline ParameterStore load_checkpoint(const std::filesystem::path& dir, AdamState* adam = nullptr) {
  const auto manifest = nn_detail::read_manifest(dir);

  std::size_t total = 0;
  for (const auto& e : manifest.entries) total += shape_numel(e.shape);
  const auto wpath = dir / "weights.bin";
  if (std::filesystem::file_size(wpath) != total * 8)
    throw ContractError(wpath.string() + " holds " +
                        std::to_string(std::filesystem::file_size(wpath)) +
                        " bytes but the manifest shapes require " + std::to_string(total * 8));

  std::ifstream is(wpath, std::ios::binary);
  if (!is) throw IoError("cannot open " + wpath.string());
  ParameterStore ps;
  for (const auto& e : manifest.entries)
    ps.add(e.name, Tensor(e.shape, nn_detail::read_f64le(is, shape_numel(e.shape), wpath.string())));

  if (adam != nullptr) {
    if (!manifest.has_adam)
      throw ContractError(dir.string() + " holds no optimizer state");
    *adam = AdamState::init(ps);
    adam->t = manifest.adam_t;
    std::ifstream ms(dir / "adam_m.bin", std::ios::binary);
    std::ifstream vs(dir / "adam_v.bin", std::ios::binary);
    if (!ms || !vs) throw IoError("cannot open optimizer state in " + dir.string());
    for (const auto& e : manifest.entries) {
      adam->m[e.name] =
          nn_detail::read_f64le(ms, shape_numel(e.shape), (dir / "adam_m.bin").string());
      adam->v[e.name] =
          nn_detail::read_f64le(vs, shape_numel(e.shape), (dir / "adam_v.bin").string());
    }
  }
  return ps;
}

/// Loads checkpoint values into an existing model's store. Names must match
/// exactly; mismatches report the missing and extra keys.
inline void load_checkpoint_into(ParameterStore& params, const std::filesystem::path& dir) {
  ParameterStore loaded = load_checkpoint(dir);
  std::vector<std::string> missing, extra;
  for (const auto& name : params.names())
    if (!loaded.has(name)) missing.push_back(name);
  for (const auto& name : loaded.names())
    if (!params.has(name)) extra.push_back(name);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "checkpoint " + dir.string() + " does not match the model; missing: [";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
    msg += "], extra: [";
    for (std::size_t i = 0; i < extra.size(); ++i) msg += (i ? ", " : "") + extra[i];
    msg += "]";
    throw ContractError(msg);
  }
  for (const auto& name : params.names()) {
    if (loaded.get(name).shape() != params.get(name).shape())
      throw ContractError("parameter '" + name + "': checkpoint shape " +
                          shape_str(loaded.get(name).shape()) + " != model shape " +
                          shape_str(params.get(name).shape()));
    params.set(name, loaded.get(name));
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  int steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  // When > 0, the final parameters are the average of the last `average_last`
  // iterates (tail averaging). Suppresses the stationary minibatch noise of a
  // constant learning rate without a schedule.
  int average_last = 0;
};

struct LossCurve {
  struct Point {
    int step = 0;
    double loss = 0.0;
    std::vector<double> components;
  };
  std::vector<Point> points;

  double first() const { return points.front().loss; }
  double last() const { return points.back().loss; }
};

/// Minibatch Adam driver shared by all trainers. `make_loss` builds the
/// forward pass for one step under the active tape and may report loss
/// components for logging. Deterministic given TrainOptions::seed.
template <typename MakeLoss>
LossCurve train_loop(ParameterStore& params, const TrainOptions& opt, MakeLoss&& make_loss) {
  if (opt.steps < 1) throw ContractError("train_loop requires steps >= 1");
  if (opt.average_last < 0 || opt.average_last > opt.steps)
    throw ContractError("average_last must lie in [0, steps]");
  AdamConfig acfg;
  acfg.lr = opt.lr;
  AdamState adam = AdamState::init(params, acfg);
  RngStream root(opt.seed);
  LossCurve curve;
  curve.points.reserve(static_cast<std::size_t>(opt.steps));
  std::map<std::string, std::vector<double>> tail_sum;
  int tail_count = 0;
  for (int step = 0; step < opt.steps; ++step) {
    RngStream step_rng = root.fork("step").fork(static_cast<std::uint64_t>(step));
    LossCurve::Point point;
    point.step = step;
    try {
      GradientTape tape;
      ParamSource p(params, tape);
      Tensor loss = make_loss(p, step_rng, step, point.components);
      point.loss = loss.value();
      auto grads = p.collect(tape.backward(loss));
      clip_global_norm(grads, opt.clip_norm);
      adam_step(params, grads, adam);
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    curve.points.push_back(std::move(point));
    if (opt.average_last > 0 && step >= opt.steps - opt.average_last) {
      for (const auto& name : params.names()) {
        auto [it, inserted] = tail_sum.try_emplace(name, params.get(name).size(), 0.0);
        const auto& v = params.get(name).data();
        for (std::size_t i = 0; i < v.size(); ++i) it->second[i] += v[i];
      }
      ++tail_count;
    }
  }
  if (tail_count > 0) {
    for (const auto& name : params.names()) {
      std::vector<double> avg = tail_sum.at(name);
      for (double& x : avg) x /= tail_count;
      params.set(name, Tensor(params.get(name).shape(), std::move(avg)));
    }
  }
  return curve;
}

inline void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path,
                           const std::vector<std::string>& component_names = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "step,loss";
  for (const auto& n : component_names) os << ',' << n;
  os << '\n';
  char buf[64];
  for (const auto& p : curve.points) {
    os << p.step;
    std::snprintf(buf, sizeof buf, "%.17g", p.loss);
    os << ',' << buf;
    for (double c : p.components) {
      std::snprintf(buf, sizeof buf, "%.17g", c);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace prosogen
