#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "prosogen/errors.hpp"

namespace prosogen {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0)
      throw DimensionError("shape " + shape_str(s) + " has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

class GradientTape;

namespace tensor_detail {
class OpAccess;
}

/// Dense tensor of 64-bit floats, row-major, immutable once built. A tensor
/// optionally carries a node handle into the gradient tape that was active
/// when it was produced.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw DimensionError("shape " + shape_str(shape_) + " does not match a buffer of " +
                           std::to_string(data_.size()) + " values");
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, double value) {
    std::vector<double> d(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor vec(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(int rows, int cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }

  /// Value of a scalar (single-element) tensor.
  double value() const {
    if (data_.size() != 1)
      throw ContractError("value() called on a non-scalar tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  double at(int i) const { return data_.at(static_cast<std::size_t>(i)); }
  double at(int i, int j) const {
    if (rank() != 2) throw DimensionError("2-d access on tensor of shape " + shape_str(shape_));
    return data_[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(j)];
  }

  int node() const { return node_; }
  std::uint64_t tape_epoch() const { return tape_epoch_; }

 private:
  friend class GradientTape;
  friend class tensor_detail::OpAccess;

  Shape shape_{};
  std::vector<double> data_{};
  int node_ = -1;
  std::uint64_t tape_epoch_ = 0;
};

/// Records operations for one training step. Single-use: build a forward
/// pass under an active tape, call backward() once, then drop the tape.
/// Only one tape may be active per thread.
class GradientTape {
 public:
  using PullFn = std::function<void(const std::vector<double>& out_grad,
                                    std::vector<std::vector<double>>& grads)>;

  GradientTape() {
    if (active_ != nullptr)
      throw ContractError("a GradientTape is already active on this thread");
    epoch_ = ++epoch_counter_;
    active_ = this;
  }

  ~GradientTape() { active_ = nullptr; }

  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* active() { return active_; }

  std::uint64_t epoch() const { return epoch_; }

  /// Registers `t` as a differentiable leaf and returns the tracked view.
  Tensor watch(const Tensor& t) {
    Tensor out = t;
    out.node_ = record(t.shape(), PullFn{});
    out.tape_epoch_ = epoch_;
    return out;
  }

  int record(const Shape& shape, PullFn pull) {
    nodes_.push_back(Node{shape, std::move(pull)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Gradients of one backward pass, addressable by tracked tensor.
  class Gradients {
   public:
    Tensor grad_of(const Tensor& t) const {
      if (t.node() < 0 || t.tape_epoch() != epoch_)
        throw ContractError("grad_of: tensor was not recorded on this tape");
      const auto idx = static_cast<std::size_t>(t.node());
      return Tensor(shapes_[idx], grads_[idx]);
    }

   private:
    friend class GradientTape;
    std::uint64_t epoch_ = 0;
    std::vector<Shape> shapes_;
    std::vector<std::vector<double>> grads_;
  };

  /// Reverse accumulation from a scalar loss. Every node recorded on the
  /// tape receives a gradient buffer of its own shape.
  Gradients backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (loss.node() < 0 || loss.tape_epoch() != epoch_)
      throw ContractError("backward: loss was not recorded on this tape");

    std::vector<std::vector<double>> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      grads[i].assign(shape_numel(nodes_[i].shape), 0.0);
    grads[static_cast<std::size_t>(loss.node())][0] = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].pull) nodes_[i].pull(grads[i], grads);
    }

    Gradients out;
    out.epoch_ = epoch_;
    out.shapes_.reserve(nodes_.size());
    for (const auto& n : nodes_) out.shapes_.push_back(n.shape);
    out.grads_ = std::move(grads);
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    PullFn pull;
  };

  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 0;

  inline static thread_local GradientTape* active_ = nullptr;
  inline static thread_local std::uint64_t epoch_counter_ = 0;
};

namespace tensor_detail {

class OpAccess {
 public:
  static Tensor with_node(Tensor t, int node, std::uint64_t epoch) {
    t.node_ = node;
    t.tape_epoch_ = epoch;
    return t;
  }
};

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + " produced a non-finite value");
}

/// Node id of `t` on the currently active tape, or -1 when untracked.
inline int live_node(const Tensor& t) {
  GradientTape* tape = GradientTape::active();
  if (tape != nullptr && t.node() >= 0 && t.tape_epoch() == tape->epoch()) return t.node();
  return -1;
}

/// Finalizes an op: finiteness gate, then tape registration when any input
/// is tracked. `make_pull` is only invoked when recording happens; it
/// receives the finished output tensor so rules may capture forward values.
template <typename MakePull>
Tensor finish_op(const char* op, Shape shape, std::vector<double> data, bool any_tracked,
                 MakePull&& make_pull) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  GradientTape* tape = GradientTape::active();
  if (tape == nullptr || !any_tracked) return out;
  const int node = tape->record(out.shape(), make_pull(out));
  return OpAccess::with_node(std::move(out), node, tape->epoch());
}

inline void accumulate(std::vector<double>& dst, const std::vector<double>& src, double sign = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += sign * src[i];
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

}  // namespace tensor_detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  tensor_detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const int na = tensor_detail::live_node(a), nb = tensor_detail::live_node(b);
  return tensor_detail::finish_op("add", a.shape(), std::move(out), na >= 0 || nb >= 0, [&](const Tensor&) {
    return [na, nb](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      if (na >= 0) tensor_detail::accumulate(grads[na], g);
      if (nb >= 0) tensor_detail::accumulate(grads[nb], g);
    };
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  tensor_detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  const int na = tensor_detail::live_node(a), nb = tensor_detail::live_node(b);
  return tensor_detail::finish_op("sub", a.shape(), std::move(out), na >= 0 || nb >= 0, [&](const Tensor&) {
    return [na, nb](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      if (na >= 0) tensor_detail::accumulate(grads[na], g);
      if (nb >= 0) tensor_detail::accumulate(grads[nb], g, -1.0);
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  tensor_detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const int na = tensor_detail::live_node(a), nb = tensor_detail::live_node(b);
  return tensor_detail::finish_op("mul", a.shape(), std::move(out), na >= 0 || nb >= 0, [&](const Tensor&) {
    return [na, nb, av = a.data(), bv = b.data()](const std::vector<double>& g,
                                                  std::vector<std::vector<double>>& grads) {
      if (na >= 0)
        for (std::size_t i = 0; i < g.size(); ++i) grads[na][i] += g[i] * bv[i];
      if (nb >= 0)
        for (std::size_t i = 0; i < g.size(); ++i) grads[nb][i] += g[i] * av[i];
    };
  });
}

inline Tensor scale(const Tensor& a, double alpha) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * a.data()[i];
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("scale", a.shape(), std::move(out), na >= 0, [&](const Tensor&) {
    return [na, alpha](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[na][i] += alpha * g[i];
    };
  });
}

inline Tensor add_scalar(const Tensor& a, double beta) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + beta;
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("add_scalar", a.shape(), std::move(out), na >= 0, [&](const Tensor&) {
    return [na](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      tensor_detail::accumulate(grads[na], g);
    };
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("exp", a.shape(), std::move(out), na >= 0, [&](const Tensor& y) {
    return [na, yv = y.data()](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[na][i] += g[i] * yv[i];
    };
  });
}

inline Tensor log(const Tensor& a) {
  for (double x : a.data())
    if (x <= 0.0) throw DomainError("log of non-positive value " + std::to_string(x));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("log", a.shape(), std::move(out), na >= 0, [&](const Tensor&) {
    return [na, xv = a.data()](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[na][i] += g[i] / xv[i];
    };
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("tanh", a.shape(), std::move(out), na >= 0, [&](const Tensor& y) {
    return [na, yv = y.data()](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[na][i] += g[i] * (1.0 - yv[i] * yv[i]);
    };
  });
}

inline Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("softplus", a.shape(), std::move(out), na >= 0, [&](const Tensor&) {
    return [na, xv = a.data()](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i)
        grads[na][i] += g[i] / (1.0 + std::exp(-xv[i]));
    };
  });
}

inline Tensor abs(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data()[i]);
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("abs", a.shape(), std::move(out), na >= 0, [&](const Tensor&) {
    return [na, xv = a.data()](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        grads[na][i] += g[i] * s;
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul requires rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
  {
    using namespace tensor_detail;
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  }
  const int na = tensor_detail::live_node(a), nb = tensor_detail::live_node(b);
  return tensor_detail::finish_op("matmul", {m, n}, std::move(out), na >= 0 || nb >= 0, [&](const Tensor&) {
    return [na, nb, m, k, n, av = a.data(), bv = b.data()](
               const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      using namespace tensor_detail;
      ConstMap G(g.data(), m, n);
      if (na >= 0) MutMap(grads[na].data(), m, k) += G * ConstMap(bv.data(), k, n).transpose();
      if (nb >= 0) MutMap(grads[nb].data(), k, n) += ConstMap(av.data(), m, k).transpose() * G;
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace tensor_detail {

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit axis_split(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  AxisSplit r{1, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
    r.inner *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  return r;
}

inline Tensor reduce_impl(const char* op, const Tensor& a, double denom) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  total /= denom;
  const int na = live_node(a);
  return finish_op(op, {1}, {total}, na >= 0, [&](const Tensor&) {
    return [na, n = a.size(), denom](const std::vector<double>& g,
                                     std::vector<std::vector<double>>& grads) {
      const double gv = g[0] / denom;
      for (std::size_t i = 0; i < n; ++i) grads[na][i] += gv;
    };
  });
}

inline Tensor reduce_axis_impl(const char* op, const Tensor& a, int axis, double denom) {
  const AxisSplit ax = axis_split(a.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(ax.outer * ax.inner, 0.0);
  for (std::size_t o = 0; o < ax.outer; ++o)
    for (std::size_t l = 0; l < ax.len; ++l)
      for (std::size_t i = 0; i < ax.inner; ++i)
        out[o * ax.inner + i] += a.data()[(o * ax.len + l) * ax.inner + i];
  if (denom != 1.0)
    for (double& x : out) x /= denom;
  const int na = live_node(a);
  return finish_op(op, std::move(out_shape), std::move(out), na >= 0, [&](const Tensor&) {
    return [na, ax, denom](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (std::size_t o = 0; o < ax.outer; ++o)
        for (std::size_t l = 0; l < ax.len; ++l)
          for (std::size_t i = 0; i < ax.inner; ++i)
            grads[na][(o * ax.len + l) * ax.inner + i] += g[o * ax.inner + i] / denom;
    };
  });
}

}  // namespace tensor_detail

/// Full reduction to a scalar.
inline Tensor sum(const Tensor& a) { return tensor_detail::reduce_impl("sum", a, 1.0); }

inline Tensor mean(const Tensor& a) {
  return tensor_detail::reduce_impl("mean", a, static_cast<double>(a.size()));
}

/// Reduction over one axis; the axis is removed from the shape.
inline Tensor sum(const Tensor& a, int axis) {
  return tensor_detail::reduce_axis_impl("sum", a, axis, 1.0);
}

inline Tensor mean(const Tensor& a, int axis) {
  tensor_detail::axis_split(a.shape(), axis);  // validate before dereferencing the axis
  return tensor_detail::reduce_axis_impl("mean", a, axis,
                                         static_cast<double>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// Concatenation / splitting
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Tensor& first = parts.front();
  if (axis < 0 || axis >= first.rank())
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(first.shape()));
  int axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank())
      throw DimensionError("concat parts have different ranks");
    for (int i = 0; i < first.rank(); ++i)
      if (i != axis && p.dim(i) != first.dim(i))
        throw DimensionError("concat parts disagree on non-axis dimension: " +
                             shape_str(p.shape()) + " vs " + shape_str(first.shape()));
    axis_total += p.dim(axis);
  }
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  const auto out_ax = tensor_detail::axis_split(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<int> nodes(parts.size());
  std::vector<std::size_t> lens(parts.size());
  bool any = false;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& p = parts[pi];
    nodes[pi] = tensor_detail::live_node(p);
    any = any || nodes[pi] >= 0;
    const std::size_t plen = static_cast<std::size_t>(p.dim(axis));
    lens[pi] = plen;
    for (std::size_t o = 0; o < out_ax.outer; ++o)
      std::copy_n(p.data().data() + o * plen * out_ax.inner, plen * out_ax.inner,
                  out.data() + (o * out_ax.len + offset) * out_ax.inner);
    offset += plen;
  }

  return tensor_detail::finish_op("concat", std::move(out_shape), std::move(out), any, [&](const Tensor&) {
    return [nodes, lens, out_ax](const std::vector<double>& g,
                                 std::vector<std::vector<double>>& grads) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        if (nodes[pi] >= 0) {
          for (std::size_t o = 0; o < out_ax.outer; ++o) {
            const double* src = g.data() + (o * out_ax.len + off) * out_ax.inner;
            double* dst = grads[nodes[pi]].data() + o * lens[pi] * out_ax.inner;
            for (std::size_t i = 0; i < lens[pi] * out_ax.inner; ++i) dst[i] += src[i];
          }
        }
        off += lens[pi];
      }
    };
  });
}

inline Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::vector<Tensor>(parts), axis);
}

/// Inverse of concat: cuts `a` along `axis` into parts of the given sizes.
inline std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<int>& sizes) {
  if (axis < 0 || axis >= a.rank())
    throw DimensionError("split axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(a.shape()));
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) throw DimensionError("split sizes must be positive");
    total += s;
  }
  if (total != a.dim(axis))
    throw DimensionError("split sizes sum to " + std::to_string(total) + " but axis has length " +
                         std::to_string(a.dim(axis)));

  const auto ax = tensor_detail::axis_split(a.shape(), axis);
  const int na = tensor_detail::live_node(a);
  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  std::size_t offset = 0;
  for (int s : sizes) {
    const auto plen = static_cast<std::size_t>(s);
    Shape pshape = a.shape();
    pshape[static_cast<std::size_t>(axis)] = s;
    std::vector<double> pdata(shape_numel(pshape));
    for (std::size_t o = 0; o < ax.outer; ++o)
      std::copy_n(a.data().data() + (o * ax.len + offset) * ax.inner, plen * ax.inner,
                  pdata.data() + o * plen * ax.inner);
    const std::size_t off = offset;
    parts.push_back(tensor_detail::finish_op("split", std::move(pshape), std::move(pdata),
                                             na >= 0, [&](const Tensor&) {
      return [na, ax, off, plen](const std::vector<double>& g,
                                 std::vector<std::vector<double>>& grads) {
        for (std::size_t o = 0; o < ax.outer; ++o) {
          const double* src = g.data() + o * plen * ax.inner;
          double* dst = grads[na].data() + (o * ax.len + off) * ax.inner;
          for (std::size_t i = 0; i < plen * ax.inner; ++i) dst[i] += src[i];
        }
      };
    }));
    offset += plen;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Explicit expansion (no implicit broadcasting anywhere)
// ---------------------------------------------------------------------------

/// Expands a [d] or [1,d] tensor to [n,d] by repeating the row. Gradient sums
/// over the repeated rows.
inline Tensor repeat_rows(const Tensor& t, int n) {
  if (n <= 0) throw DimensionError("repeat_rows requires n > 0");
  int d = 0;
  if (t.rank() == 1) d = t.dim(0);
  else if (t.rank() == 2 && t.dim(0) == 1) d = t.dim(1);
  else throw DimensionError("repeat_rows expects a [d] or [1,d] tensor, got " + shape_str(t.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  for (int r = 0; r < n; ++r)
    std::copy_n(t.data().data(), d, out.data() + static_cast<std::size_t>(r) * d);
  const int nt = tensor_detail::live_node(t);
  return tensor_detail::finish_op("repeat_rows", {n, d}, std::move(out), nt >= 0, [&](const Tensor&) {
    return [nt, n, d](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j)
          grads[nt][static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r) * d + j];
    };
  });
}

/// Expands a [n] or [n,1] tensor to [n,d] by repeating the column.
inline Tensor repeat_cols(const Tensor& t, int d) {
  if (d <= 0) throw DimensionError("repeat_cols requires d > 0");
  int n = 0;
  if (t.rank() == 1) n = t.dim(0);
  else if (t.rank() == 2 && t.dim(1) == 1) n = t.dim(0);
  else throw DimensionError("repeat_cols expects a [n] or [n,1] tensor, got " + shape_str(t.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(r) * d + j] = t.data()[r];
  const int nt = tensor_detail::live_node(t);
  return tensor_detail::finish_op("repeat_cols", {n, d}, std::move(out), nt >= 0, [&](const Tensor&) {
    return [nt, n, d](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += g[static_cast<std::size_t>(r) * d + j];
        grads[nt][static_cast<std::size_t>(r)] += acc;
      }
    };
  });
}

/// Same data, new shape (element count must match). Gradient passes through.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape from " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes the element count");
  const int na = tensor_detail::live_node(a);
  return tensor_detail::finish_op("reshape", std::move(shape), a.data(), na >= 0,
                                  [&](const Tensor&) {
    return [na](const std::vector<double>& g, std::vector<std::vector<double>>& grads) {
      tensor_detail::accumulate(grads[na], g);
    };
  });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compares analytic gradients of a scalar-valued tensor function against
/// central finite differences. Returns the max over coordinates of
/// |analytic - fd| / max(1e-8, |fd|).
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double eps) {
  std::vector<double> analytic;
  {
    GradientTape tape;
    Tensor xw = tape.watch(x);
    Tensor y = f(xw);
    if (y.size() != 1)
      throw ContractError("finite_diff_check requires a scalar-valued function");
    auto grads = tape.backward(y);
    analytic = grads.grad_of(xw).data();
  }
  double max_rel = 0.0;
  std::vector<double> xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + eps;
    const double fp = f(Tensor(x.shape(), xs)).value();
    xs[i] = orig - eps;
    const double fm = f(Tensor(x.shape(), xs)).value();
    xs[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(fd))
      throw NumericError("finite_diff_check: non-finite finite-difference value");
    const double rel = std::abs(analytic[i] - fd) / std::max(1e-8, std::abs(fd));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace prosogen
