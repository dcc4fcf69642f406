#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "distflip/autodiff/kernels.hpp"
#include "distflip/autodiff/tape.hpp"

// Differentiable primitives. Shapes are rank 1 or rank 2; the only broadcast
// is a bias row added to every row of a matrix.

namespace distflip::ad {

namespace detail {

template <class T>
void require_same_tape(const char* op, Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

inline bool is_bias_of(const Shape& mat, const Shape& bias) {
  if (mat.size() != 2) return false;
  if (bias.size() == 1) return bias[0] == mat[1];
  if (bias.size() == 2) return bias[0] == 1 && bias[1] == mat[1] && mat[0] != 1;
  return false;
}

template <class T>
void accumulate_bias(Tensor<T>& bias_grad, const Tensor<T>& g) {
  const std::size_t rows = g.rows(), cols = g.cols();
  T* dst = bias_grad.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = g.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
}

template <class T, class F, class DF>
Var<T> unary(const char* op, Var<T> a, F f, DF df_from_out) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  NodeId id = a.tape->push(op, {a.id}, std::move(out),
                           [df_from_out](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                                         Gradients<T>& grads) {
                             const NodeId in = tape.node(self).inputs[0];
                             const Tensor<T>& x = tape.value(in);
                             const Tensor<T>& y = tape.value(self);
                             Tensor<T>& gx = grads.accumulator(in);
                             const std::size_t n = g.size();
                             for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df_from_out(x[i], y[i]);
                           });
  return {a.tape, id};
}

inline std::size_t check_axis(const char* op, const Shape& s, int axis) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= s.size())
    throw ShapeError(op, {s}, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(axis);
}

// Iterates the lines of a rank<=2 tensor along `axis`: calls f(offset, stride, count).
template <class F>
void for_each_line(const Shape& s, std::size_t axis, F f) {
  if (s.size() == 1) {
    f(std::size_t{0}, std::size_t{1}, s[0]);
    return;
  }
  const std::size_t rows = s[0], cols = s[1];
  if (axis == 1) {
    for (std::size_t r = 0; r < rows; ++r) f(r * cols, std::size_t{1}, cols);
  } else {
    for (std::size_t c = 0; c < cols; ++c) f(c, cols, rows);
  }
}

}  // namespace detail

template <class T>
Var<T> constant(Tape<T>& tape, Tensor<T> value) {
  return {&tape, tape.leaf(std::move(value), false)};
}

template <class T>
Var<T> variable(Tape<T>& tape, Tensor<T> value) {
  return {&tape, tape.leaf(std::move(value), true)};
}

template <class T>
Var<T> parameter(Tape<T>& tape, const Tensor<T>& value, bool requires_grad) {
  return {&tape, tape.external(value, requires_grad)};
}

/// [m,k] x [k,n] -> [m,n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, const char* op = "matmul") {
  detail::require_same_tape(op, a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) throw ShapeError(op, {as, bs});
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data());
  NodeId id = a.tape->push(op, {a.id, b.id}, std::move(out),
                           [m, k, n](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                                     Gradients<T>& grads) {
                             const auto& ins = tape.node(self).inputs;
                             if (tape.requires_grad(ins[0]))
                               kernels::gemm_nt(m, n, k, g.data(), tape.value(ins[1]).data(),
                                                grads.accumulator(ins[0]).data());
                             if (tape.requires_grad(ins[1]))
                               kernels::gemm_tn(k, m, n, tape.value(ins[0]).data(), g.data(),
                                                grads.accumulator(ins[1]).data());
                           });
  return {a.tape, id};
}

/// 1-hot rows [m,|V|] times an embedding table [|V|,d]. Being a real matmul,
/// the gradient reaches every coordinate of the 1-hot input.
template <class T>
Var<T> embedding_matmul(Var<T> one_hot, Var<T> table) {
  return matmul(one_hot, table, "embedding_matmul");
}

namespace detail {

template <class T>
Var<T> add_sub(const char* op, Var<T> a, Var<T> b, T sign) {
  require_same_tape(op, a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool same = as == bs;
  const bool bias = !same && is_bias_of(as, bs);
  if (!same && !bias) throw ShapeError(op, {as, bs});
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  if (same) {
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out[i] += sign * bv[i];
  } else {
    const std::size_t rows = as[0], cols = as[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += sign * bv[c];
  }
  NodeId id = a.tape->push(op, {a.id, b.id}, std::move(out),
                           [same, sign](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                                        Gradients<T>& grads) {
                             const auto& ins = tape.node(self).inputs;
                             if (tape.requires_grad(ins[0])) grads.accumulator(ins[0]) += g;
                             if (!tape.requires_grad(ins[1])) return;
                             Tensor<T>& gb = grads.accumulator(ins[1]);
                             if (same) {
                               const std::size_t n = g.size();
                               for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
                             } else if (sign > 0) {
                               accumulate_bias(gb, g);
                             } else {
                               Tensor<T> tmp(gb.shape());
                               accumulate_bias(tmp, g);
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= tmp[i];
                             }
                           });
  return {a.tape, id};
}

}  // namespace detail

/// Elementwise sum; `b` may also be a bias row matching a's last dimension.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::add_sub("add", a, b, T{1});
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::add_sub("sub", a, b, T{-1});
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape("mul", a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul", {a.shape(), b.shape()});
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodeId id = a.tape->push("mul", {a.id, b.id}, std::move(out),
                           [](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                              Gradients<T>& grads) {
                             const auto& ins = tape.node(self).inputs;
                             const Tensor<T>& x = tape.value(ins[0]);
                             const Tensor<T>& y = tape.value(ins[1]);
                             if (tape.requires_grad(ins[0])) {
                               Tensor<T>& gx = grads.accumulator(ins[0]);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
                             }
                             if (tape.requires_grad(ins[1])) {
                               Tensor<T>& gy = grads.accumulator(ins[1]);
                               for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
                             }
                           });
  return {a.tape, id};
}

/// a * s + offset, for scalar constants s and offset.
template <class T>
Var<T> affine_scalar(Var<T> a, T s, T offset = T{0}) {
  return detail::unary<T>(
      "affine_scalar", a, [s, offset](T x) { return x * s + offset; },
      [s](T, T) { return s; });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return affine_scalar(a, s);
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= 0) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > 0 ? x : T{0}; }, [](T x, T) { return x > 0 ? T{1} : T{0}; });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// Natural log; inputs must be positive.
template <class T>
Var<T> log(Var<T> a) {
  for (T v : a.value().values())
    if (!(v > 0)) throw NonFiniteError("log of non-positive value");
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// Sum of all elements -> [1].
template <class T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (T v : a.value().values()) s += v;
  NodeId id = a.tape->push("sum", {a.id}, Tensor<T>::scalar(s),
                           [](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                              Gradients<T>& grads) {
                             const NodeId in = tape.node(self).inputs[0];
                             Tensor<T>& gx = grads.accumulator(in);
                             const T gv = g[0];
                             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
                           });
  return {a.tape, id};
}

template <class T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  return scale(sum(a), T{1} / n);
}

/// [m,n] -> [n,m]; rank-1 [n] is treated as [1,n].
template <class T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& av = a.value();
  if (av.rank() > 2) throw ShapeError("transpose", {av.shape()});
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  NodeId id = a.tape->push("transpose", {a.id}, std::move(out),
                           [r, c](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                                  Gradients<T>& grads) {
                             Tensor<T>& gx = grads.accumulator(tape.node(self).inputs[0]);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                           });
  return {a.tape, id};
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.value().size()) throw ShapeError("reshape", {a.shape(), shape});
  Tensor<T> out(shape, a.value().values());
  NodeId id = a.tape->push("reshape", {a.id}, std::move(out),
                           [](const Tape<T>& tape, NodeId self, const Tensor<T>& g,
                              Gradients<T>& grads) {
                             Tensor<T>& gx = grads.accumulator(tape.node(self).inputs[0]);
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
  return {a.tape, id};
}

/// Contiguous range [start, start+len) along `axis`.
template <class T>
Var<T> slice(Var<T> a, int axis, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::check_axis("slice", s, axis);
  if (s.size() > 2 || len == 0 || start + len > s[ax])
    throw ShapeError("slice", {s}, "range [" + std::to_string(start) + ", " +
                                       std::to_string(start + len) + ") on axis " +
                                       std::to_string(axis));
  Shape os = s;
  os[ax] = len;
  const Tensor<T>& av = a.value();
  Tensor<T> out(os);
  const std::size_t cols = av.cols();
  const std::size_t r0 = (s.size() == 2 && ax == 0) ? start : 0;
  const std::size_t c0 = (s.size() == 1 || ax == 1) ? start : 0;
  const std::size_t orows = out.rows(), ocols = out.cols();
  for (std::size_t r = 0; r < orows; ++r)
    std::copy_n(av.data() + (r + r0) * cols + c0, ocols, out.data() + r * ocols);
  NodeId id = a.tape->push("slice", {a.id}, std::move(out),
                           [r0, c0, cols, orows, ocols](const Tape<T>& tape, NodeId self,
                                                        const Tensor<T>& g, Gradients<T>& grads) {
                             Tensor<T>& gx = grads.accumulator(tape.node(self).inputs[0]);
                             for (std::size_t r = 0; r < orows; ++r) {
                               T* dst = gx.data() + (r + r0) * cols + c0;
                               const T* src = g.data() + r * ocols;
                               for (std::size_t c = 0; c < ocols; ++c) dst[c] += src[c];
                             }
                           });
  return {a.tape, id};
}

/// Concatenation along `axis`; all other dimensions must agree.
template <class T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", {}, "no operands");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::check_axis("concat", s0, axis);
  if (s0.size() > 2) throw ShapeError("concat", {s0});
  std::vector<Shape> shapes;
  std::vector<NodeId> ids;
  Shape os = s0;
  os[ax] = 0;
  for (const auto& p : parts) {
    detail::require_same_tape("concat", parts[0], p);
    const Shape& s = p.shape();
    shapes.push_back(s);
    ids.push_back(p.id);
    if (s.size() != s0.size()) throw ShapeError("concat", shapes);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != ax && s[d] != s0[d]) throw ShapeError("concat", shapes);
    os[ax] += s[ax];
  }
  Tensor<T> out(os);
  const bool along_rows = s0.size() == 2 && ax == 0;
  const std::size_t ocols = out.cols();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    offsets.push_back(off);
    if (along_rows) {
      std::copy(v.values().begin(), v.values().end(), out.data() + off * ocols);
      off += v.rows();
    } else {
      for (std::size_t r = 0; r < v.rows(); ++r)
        std::copy_n(v.data() + r * v.cols(), v.cols(), out.data() + r * ocols + off);
      off += v.cols();
    }
  }
  Tape<T>* tape = parts[0].tape;
  NodeId id = tape->push(
      "concat", std::move(ids), std::move(out),
      [along_rows, ocols, offsets](const Tape<T>& tp, NodeId self, const Tensor<T>& g,
                                   Gradients<T>& grads) {
        const auto& ins = tp.node(self).inputs;
        for (std::size_t k = 0; k < ins.size(); ++k) {
          if (!tp.requires_grad(ins[k])) continue;
          Tensor<T>& gx = grads.accumulator(ins[k]);
          if (along_rows) {
            const T* src = g.data() + offsets[k] * ocols;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
          } else {
            const std::size_t c = gx.cols();
            for (std::size_t r = 0; r < gx.rows(); ++r) {
              const T* src = g.data() + r * ocols + offsets[k];
              T* dst = gx.data() + r * c;
              for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
          }
        }
      });
  return {tape, id};
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts, int axis) {
  std::vector<Var<T>> v(parts);
  return concat(std::span<const Var<T>>(v), axis);
}

/// Softmax along `axis` (rank 1: axis 0).
template <class T>
Var<T> softmax(Var<T> a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::check_axis("softmax", s, axis);
  if (s.size() > 2) throw ShapeError("softmax", {s});
  const Tensor<T>& av = a.value();
  Tensor<T> out(s);
  detail::for_each_line(s, ax, [&](std::size_t off, std::size_t stride, std::size_t count) {
    T mx = av[off];
    for (std::size_t i = 1; i < count; ++i) mx = std::max(mx, av[off + i * stride]);
    T z{0};
    for (std::size_t i = 0; i < count; ++i) {
      const T e = std::exp(av[off + i * stride] - mx);
      out[off + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < count; ++i) out[off + i * stride] /= z;
  });
  NodeId id = a.tape->push(
      "softmax", {a.id}, std::move(out),
      [ax](const Tape<T>& tape, NodeId self, const Tensor<T>& g, Gradients<T>& grads) {
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& gx = grads.accumulator(tape.node(self).inputs[0]);
        detail::for_each_line(y.shape(), ax,
                              [&](std::size_t off, std::size_t stride, std::size_t count) {
                                T dot{0};
                                for (std::size_t i = 0; i < count; ++i)
                                  dot += g[off + i * stride] * y[off + i * stride];
                                for (std::size_t i = 0; i < count; ++i) {
                                  const std::size_t k = off + i * stride;
                                  gx[k] += y[k] * (g[k] - dot);
                                }
                              });
      });
  return {a.tape, id};
}

/// log(softmax(a)) computed stably along `axis`.
template <class T>
Var<T> log_softmax(Var<T> a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::check_axis("log_softmax", s, axis);
  if (s.size() > 2) throw ShapeError("log_softmax", {s});
  const Tensor<T>& av = a.value();
  Tensor<T> out(s);
  detail::for_each_line(s, ax, [&](std::size_t off, std::size_t stride, std::size_t count) {
    T mx = av[off];
    for (std::size_t i = 1; i < count; ++i) mx = std::max(mx, av[off + i * stride]);
    T z{0};
    for (std::size_t i = 0; i < count; ++i) z += std::exp(av[off + i * stride] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t i = 0; i < count; ++i) out[off + i * stride] = av[off + i * stride] - lz;
  });
  NodeId id = a.tape->push(
      "log_softmax", {a.id}, std::move(out),
      [ax](const Tape<T>& tape, NodeId self, const Tensor<T>& g, Gradients<T>& grads) {
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& gx = grads.accumulator(tape.node(self).inputs[0]);
        detail::for_each_line(y.shape(), ax,
                              [&](std::size_t off, std::size_t stride, std::size_t count) {
                                T gs{0};
                                for (std::size_t i = 0; i < count; ++i) gs += g[off + i * stride];
                                for (std::size_t i = 0; i < count; ++i) {
                                  const std::size_t k = off + i * stride;
                                  gx[k] += g[k] - std::exp(y[k]) * gs;
                                }
                              });
      });
  return {a.tape, id};
}

/// Binary cross-entropy of sigmoid(logit) against target y in [0,1]. `logit`
/// must hold a single value; the result is [1].
template <class T>
Var<T> bce_with_logits(Var<T> logit, T y) {
  const T l = logit.value().item();
  // softplus(l) - y*l, stable for large |l|
  const T sp = l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
  NodeId id = logit.tape->push(
      "bce_with_logits", {logit.id}, Tensor<T>::scalar(sp - y * l),
      [y](const Tape<T>& tape, NodeId self, const Tensor<T>& g, Gradients<T>& grads) {
        const NodeId in = tape.node(self).inputs[0];
        const T lv = tape.value(in)[0];
        auto sig = [](T z) { return z >= 0 ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z)); };
        // p - y without the cancellation that zeroes it once p rounds to 1
        grads.accumulator(in)[0] += g[0] * ((T{1} - y) * sig(lv) - y * sig(-lv));
      });
  return {logit.tape, id};
}

/// Negative log-probability of class `target` under softmax(logits) where
/// `logits` is a row [1,n] or [n]. Result is [1].
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t target) {
  const std::size_t n = logits.value().size();
  if (logits.value().rows() != 1)
    throw ShapeError("softmax_cross_entropy", {logits.shape()}, "expected a single row");
  if (target >= n) throw ShapeError("softmax_cross_entropy", {logits.shape()}, "target out of range");
  const int axis = logits.shape().size() == 1 ? 0 : 1;
  Var<T> lp = log_softmax(logits, axis);
  const std::size_t last = logits.shape().size() == 1 ? 0 : 1;
  Var<T> pick = slice(lp, static_cast<int>(last), target, 1);
  return scale(sum(pick), T{-1});
}

}  // namespace distflip::ad
