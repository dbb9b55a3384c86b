#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every operation in creation order; since inputs always
// precede outputs, walking the node list backwards is a valid reverse
// topological order. Vars are lightweight handles into one tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tae/error.hpp"
#include "tae/parameters.hpp"
#include "tae/tensor.hpp"

namespace tae {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }

  /// Free-standing differentiable input not owned by a ParameterStore.
  Var leaf(Tensor value) { return push(std::move(value), true, {}, nullptr); }

  /// Differentiable input bound to a store parameter; its gradient is
  /// reported by param_grads().
  Var param(const ParameterStore& store, ParamId id) {
    Var v = push(store.value(id), true, {}, nullptr);
    nodes_.back().param = id.value;
    return v;
  }

  /// Records an op result. Requires-grad propagates from inputs.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
    return push(std::move(value), needs, std::move(inputs), needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  /// Gradient buffer of a node, allocated on first access.
  Tensor& grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (&loss.tape() != this) throw Error(ErrorCode::InvalidArgument, "backward: loss belongs to another tape");
    if (backward_done_) throw Error(ErrorCode::InvalidState, "backward: already called on this tape");
    if (loss.value().size() != 1)
      throw Error(ErrorCode::ShapeMismatch, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient of a Var after backward(); zeros when it did not participate.
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id());
    return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
  }

  /// Gradients aligned with the store's parameter order. Parameters that
  /// never entered the graph get exact zeros.
  std::vector<Tensor> param_grads(const ParameterStore& store) const {
    std::vector<Tensor> out;
    out.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) out.emplace_back(store.value(ParamId{i}).shape(), 0.0);
    for (const auto& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto& dst = out.at(*n.param).values();
      const auto& src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<std::size_t> param;
  };

  Var push(Tensor value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(inputs), std::move(fn), std::nullopt});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const std::string& expected) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": got shape " + shape_str(a) + ", expected " + expected);
}

inline void same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error(ErrorCode::InvalidArgument, std::string(op) + ": operands on different tapes");
}

inline void accumulate(Tape& t, std::size_t id, std::span<const double> delta) {
  if (!t.requires_grad(id)) return;
  auto& g = t.grad_buffer(id).values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

constexpr double kNormFloor = 1e-12;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::same_tape("add", a, b);
  if (a.shape() != b.shape()) detail::shape_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).values();
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape("sub", a, b);
  if (a.shape() != b.shape()) detail::shape_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self).values();
    detail::accumulate(t, ia, g);
    for (auto& v : g) v = -v;
    detail::accumulate(t, ib, g);
  });
}

inline Var mul(Var a, Var b) {
  detail::same_tape("mul", a, b);
  if (a.shape() != b.shape()) detail::shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    std::vector<double> da(g.size()), db(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] * bv[i];
      db[i] = g[i] * av[i];
    }
    detail::accumulate(t, ia, da);
    detail::accumulate(t, ib, db);
  });
}

inline Var div(Var a, Var b) {
  detail::same_tape("div", a, b);
  if (a.shape() != b.shape()) detail::shape_error("div", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    std::vector<double> da(g.size()), db(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] / bv[i];
      db[i] = -g[i] * av[i] / (bv[i] * bv[i]);
    }
    detail::accumulate(t, ia, da);
    detail::accumulate(t, ib, db);
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= c;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, c](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self).values();
    for (auto& v : g) v *= c;
    detail::accumulate(t, ia, g);
  });
}

inline Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += c;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    detail::accumulate(t, ia, t.grad_buffer(self).values());
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self).values();
    const auto& x = t.value(ia).values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x[i] > 0.0)) g[i] = 0.0;
    detail::accumulate(t, ia, g);
  });
}

// ---------------------------------------------------------------------------
// Shape

inline Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) detail::shape_error("reshape", a.shape(), shape_str(shape));
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    detail::accumulate(t, ia, t.grad_buffer(self).values());
  });
}

/// [N, ...] -> [N, prod(...)].
inline Var flatten(Var a) {
  if (a.shape().empty()) detail::shape_error("flatten", a.shape(), "rank >= 1");
  const std::size_t n = a.shape()[0];
  return reshape(a, Shape{n, a.value().size() / n});
}

inline Var transpose(Var a) {
  if (a.shape().size() != 2) detail::shape_error("transpose", a.shape(), "[m,n]");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  const auto& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g.at(j, i);
    detail::accumulate(t, ia, d);
  });
}

/// Concatenates [B, n_k] matrices along columns.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::same_tape("concat_cols", parts[0], p);
    if (p.shape().size() != 2 || p.shape()[0] != rows) detail::shape_error("concat_cols", parts[0].shape(), p.shape());
    ids.push_back(p.id());
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out(Shape{rows, total});
  std::size_t col = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.dim(1); ++c) out.at(r, col + c) = v.at(r, c);
    col += v.dim(1);
  }
  return parts[0].tape().record(std::move(out), ids, [ids, widths, rows, total](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    std::size_t col0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      std::vector<double> d(rows * widths[k]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] = g[r * total + col0 + c];
      detail::accumulate(t, ids[k], d);
      col0 += widths[k];
    }
  });
}

/// Selects rows of a [K, d] matrix: out[i] = x[index[i]].
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  if (x.shape().size() != 2) detail::shape_error("gather_rows", x.shape(), "[K,d]");
  const std::size_t k = x.shape()[0], d = x.shape()[1];
  for (std::size_t i : index)
    if (i >= k) throw Error(ErrorCode::InvalidArgument, "gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  if (index.empty()) throw Error(ErrorCode::InvalidArgument, "gather_rows: empty index");
  Tensor out = x.value().gather_rows(index);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, index = std::move(index), k, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    std::vector<double> dx(k * d, 0.0);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) dx[index[i] * d + c] += g[i * d + c];
    detail::accumulate(t, ix, dx);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::same_tape("matmul", a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    detail::shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    if (t.requires_grad(ia)) {
      const auto& bv = t.value(ib).values();
      std::vector<double> da(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          da[i * k + p] = s;
        }
      detail::accumulate(t, ia, da);
    }
    if (t.requires_grad(ib)) {
      const auto& av = t.value(ia).values();
      std::vector<double> db(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
        }
      detail::accumulate(t, ib, db);
    }
  });
}

/// x [B, n] + bias [n] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  detail::same_tape("add_bias", x, bias);
  if (x.shape().size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != x.shape()[1])
    detail::shape_error("add_bias", x.shape(), bias.shape());
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += bias.value()[c];
  const auto ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, ib}, [ix, ib, rows, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    detail::accumulate(t, ix, g);
    std::vector<double> db(n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
    detail::accumulate(t, ib, db);
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling, NCHW layout

/// Stride-1 "same" convolution: x [N,C,H,W], w [O,C,k,k] (k odd), b [O].
inline Var conv2d(Var x, Var w, Var b) {
  detail::same_tape("conv2d", x, w);
  detail::same_tape("conv2d", x, b);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
    detail::shape_error("conv2d", xs, ws);
  if (b.shape().size() != 1 || b.shape()[0] != ws[0]) detail::shape_error("conv2d", ws, b.shape());
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], K = ws[2];
  const long pad = static_cast<long>(K / 2);
  Tensor out(Shape{N, O, H, W});
  const auto& xv = x.value().values();
  const auto& wv = w.value().values();
  const auto& bv = b.value().values();
  auto& ov = out.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = bv[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < K; ++ki) {
              const long ii = static_cast<long>(i + ki) - pad;
              if (ii < 0 || ii >= static_cast<long>(H)) continue;
              for (std::size_t kj = 0; kj < K; ++kj) {
                const long jj = static_cast<long>(j + kj) - pad;
                if (jj < 0 || jj >= static_cast<long>(W)) continue;
                s += wv[((o * C + c) * K + ki) * K + kj] * xv[((n * C + c) * H + static_cast<std::size_t>(ii)) * W + static_cast<std::size_t>(jj)];
              }
            }
          ov[((n * O + o) * H + i) * W + j] = s;
        }
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& xv = t.value(ix).values();
    const auto& wv = t.value(iw).values();
    std::vector<double> dx(xv.size(), 0.0), dw(wv.size(), 0.0), db(O, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const double go = g[((n * O + o) * H + i) * W + j];
            db[o] += go;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ki = 0; ki < K; ++ki) {
                const long ii = static_cast<long>(i + ki) - pad;
                if (ii < 0 || ii >= static_cast<long>(H)) continue;
                for (std::size_t kj = 0; kj < K; ++kj) {
                  const long jj = static_cast<long>(j + kj) - pad;
                  if (jj < 0 || jj >= static_cast<long>(W)) continue;
                  const std::size_t xi = ((n * C + c) * H + static_cast<std::size_t>(ii)) * W + static_cast<std::size_t>(jj);
                  const std::size_t wi = ((o * C + c) * K + ki) * K + kj;
                  dw[wi] += go * xv[xi];
                  dx[xi] += go * wv[wi];
                }
              }
          }
    detail::accumulate(t, ix, dx);
    detail::accumulate(t, iw, dw);
    detail::accumulate(t, ib, db);
  });
}

/// 2x2 average pooling with stride 2; odd trailing rows/cols are dropped.
inline Var avgpool2(Var x) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[2] < 2 || xs[3] < 2) detail::shape_error("avgpool2", xs, "[N,C,H>=2,W>=2]");
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], Ho = H / 2, Wo = W / 2;
  Tensor out(Shape{N, C, Ho, Wo});
  const auto& xv = x.value().values();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t base = nc * H * W + 2 * i * W + 2 * j;
        out[(nc * Ho + i) * Wo + j] = 0.25 * (xv[base] + xv[base + 1] + xv[base + W] + xv[base + W + 1]);
      }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    std::vector<double> dx(N * C * H * W, 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double q = 0.25 * g[(nc * Ho + i) * Wo + j];
          const std::size_t base = nc * H * W + 2 * i * W + 2 * j;
          dx[base] += q;
          dx[base + 1] += q;
          dx[base + W] += q;
          dx[base + W + 1] += q;
        }
    detail::accumulate(t, ix, dx);
  });
}

/// [N,C,H,W] -> [N,C] mean over spatial positions.
inline Var global_avgpool(Var x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) detail::shape_error("global_avgpool", xs, "[N,C,H,W]");
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor out(Shape{N, C});
  const auto& xv = x.value().values();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t k = 0; k < HW; ++k) s += xv[nc * HW + k];
    out[nc] = s / static_cast<double>(HW);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    std::vector<double> dx(N * C * HW);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t k = 0; k < HW; ++k) dx[nc * HW + k] = g[nc] / static_cast<double>(HW);
    detail::accumulate(t, ix, dx);
  });
}

// ---------------------------------------------------------------------------
// Reductions and row-wise geometry

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  const std::size_t n = a.value().size();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia, n](Tape& t, std::size_t self) {
    std::vector<double> d(n, t.grad_buffer(self)[0]);
    detail::accumulate(t, ia, d);
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// [B, d] -> [d], summing over rows.
inline Var sum_rows(Var a) {
  if (a.shape().size() != 2) detail::shape_error("sum_rows", a.shape(), "[B,d]");
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  Tensor out(Shape{d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += a.value().at(r, c);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, rows, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    std::vector<double> dx(rows * d);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] = g[c];
    detail::accumulate(t, ia, dx);
  });
}

/// Inner product of two equal-length vectors (any shape, same size).
inline Var dot(Var a, Var b) {
  detail::same_tape("dot", a, b);
  if (a.value().size() != b.value().size()) detail::shape_error("dot", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(s), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    std::vector<double> da(av.size()), db(bv.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
      da[i] = g * bv[i];
      db[i] = g * av[i];
    }
    detail::accumulate(t, ia, da);
    detail::accumulate(t, ib, db);
  });
}

/// Row-wise dot product of two [B, d] matrices -> [B].
inline Var row_dot(Var a, Var b) {
  detail::same_tape("row_dot", a, b);
  if (a.shape().size() != 2 || a.shape() != b.shape()) detail::shape_error("row_dot", a.shape(), b.shape());
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += a.value().at(r, c) * b.value().at(r, c);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, rows, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    std::vector<double> da(rows * d), db(rows * d);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        da[r * d + c] = g[r] * bv[r * d + c];
        db[r * d + c] = g[r] * av[r * d + c];
      }
    detail::accumulate(t, ia, da);
    detail::accumulate(t, ib, db);
  });
}

/// Row-wise L2 norm of [B, d] -> [B], floored at 1e-12 (zero gradient when floored).
inline Var row_norm(Var a) {
  if (a.shape().size() != 2) detail::shape_error("row_norm", a.shape(), "[B,d]");
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a.value().at(r, c) * a.value().at(r, c);
    out[r] = std::max(std::sqrt(s), detail::kNormFloor);
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, rows, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& norms = t.value(self).values();
    const auto& av = t.value(ia).values();
    std::vector<double> da(rows * d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] <= detail::kNormFloor) continue;
      for (std::size_t c = 0; c < d; ++c) da[r * d + c] = g[r] * av[r * d + c] / norms[r];
    }
    detail::accumulate(t, ia, da);
  });
}

/// x [B, d] with row r divided by s[r].
inline Var div_rows(Var x, Var s) {
  detail::same_tape("div_rows", x, s);
  if (x.shape().size() != 2 || s.shape().size() != 1 || s.shape()[0] != x.shape()[0])
    detail::shape_error("div_rows", x.shape(), s.shape());
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) /= s.value()[r];
  const auto ix = x.id(), is = s.id();
  return x.tape().record(std::move(out), {ix, is}, [ix, is, rows, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).values();
    const auto& xv = t.value(ix).values();
    const auto& sv = t.value(is).values();
    std::vector<double> dx(rows * d), ds(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        dx[r * d + c] = g[r * d + c] / sv[r];
        ds[r] -= g[r * d + c] * xv[r * d + c] / (sv[r] * sv[r]);
      }
    detail::accumulate(t, ix, dx);
    detail::accumulate(t, is, ds);
  });
}

inline Var normalize_rows(Var x) { return div_rows(x, row_norm(x)); }

/// Cosine similarity between matching rows of two [B, d] matrices -> [B].
inline Var row_cosine(Var a, Var b) { return div(row_dot(a, b), mul(row_norm(a), row_norm(b))); }

// ---------------------------------------------------------------------------
// Loss

/// (1/B) * sum_i w_i * -log softmax(logits_i)[target_i].
inline Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const double> sample_weights = {}) {
  const auto& ls = logits.shape();
  if (ls.size() != 2) detail::shape_error("softmax_cross_entropy", ls, "[B,K]");
  const std::size_t B = ls[0], K = ls[1];
  if (targets.size() != B)
    throw Error(ErrorCode::ShapeMismatch, "softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_str(ls));
  if (!sample_weights.empty() && sample_weights.size() != B)
    throw Error(ErrorCode::ShapeMismatch, "softmax_cross_entropy: weight count does not match batch " + shape_str(ls));
  std::vector<double> probs(B * K), w(B, 1.0);
  if (!sample_weights.empty()) std::copy(sample_weights.begin(), sample_weights.end(), w.begin());
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (targets[i] >= K) throw Error(ErrorCode::InvalidArgument, "softmax_cross_entropy: target " + std::to_string(targets[i]) + " >= " + std::to_string(K));
    const auto row = logits.value().row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(row[k] - lse);
    total += w[i] * (lse - row[targets[i]]);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  const auto il = logits.id();
  return logits.tape().record(Tensor::scalar(total / static_cast<double>(B)), {il},
                              [il, B, K, probs = std::move(probs), w = std::move(w), tgt = std::move(tgt)](Tape& t, std::size_t self) {
                                const double g = t.grad_buffer(self)[0] / static_cast<double>(B);
                                std::vector<double> d(B * K);
                                for (std::size_t i = 0; i < B; ++i)
                                  for (std::size_t k = 0; k < K; ++k)
                                    d[i * K + k] = g * w[i] * (probs[i * K + k] - (k == tgt[i] ? 1.0 : 0.0));
                                detail::accumulate(t, il, d);
                              });
}

}  // namespace tae
