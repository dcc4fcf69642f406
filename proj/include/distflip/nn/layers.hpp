#pragma once

#include <random>
#include <string>
#include <vector>

#include "distflip/nn/params.hpp"

namespace distflip::nn {

// Row convention: a sequence is a [m, d] matrix, one position per row; a
// single state is a [1, d] row.

enum class CellKind { gru, lstm };

inline const char* to_string(CellKind k) { return k == CellKind::gru ? "gru" : "lstm"; }

enum class Activation { none, relu, tanh, sigmoid };

inline Activation parse_activation(const std::string& s) {
  if (s == "none" || s.empty()) return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

template <class T>
Var<T> activate(Var<T> x, Activation a) {
  switch (a) {
    case Activation::relu: return ad::relu(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::none: break;
  }
  return x;
}

inline std::size_t gate_count(CellKind k) { return k == CellKind::gru ? 3 : 4; }

/// Registers a recurrent cell under `prefix`:
///   GRU:  W [in,3H], U_zr [H,2H], U_n [H,H], b [3H]   (gate order z, r, n)
///   LSTM: W [in,4H], U [H,4H], b [4H]                 (gate order i, f, g, o)
template <class T>
void add_cell(ParamSet<T>& ps, const std::string& prefix, CellKind kind, std::size_t in,
              std::size_t hidden, std::mt19937_64& rng) {
  const std::size_t g = gate_count(kind);
  if (in == 0 || hidden == 0) throw std::invalid_argument(prefix + ": dimensions must be positive");
  xavier_uniform(ps.add(prefix + ".W", {in, g * hidden}), in, g * hidden, rng);
  if (kind == CellKind::gru) {
    xavier_uniform(ps.add(prefix + ".U_zr", {hidden, 2 * hidden}), hidden, 2 * hidden, rng);
    xavier_uniform(ps.add(prefix + ".U_n", {hidden, hidden}), hidden, hidden, rng);
  } else {
    xavier_uniform(ps.add(prefix + ".U", {hidden, 4 * hidden}), hidden, 4 * hidden, rng);
  }
  ps.add(prefix + ".b", {g * hidden});
}

/// Recurrent state: `c` is only used by the LSTM.
template <class T>
struct CellState {
  Var<T> h;
  Var<T> c;
};

/// One GRU step from the input projection xw = x W + b ([1,3H]).
template <class T>
Var<T> gru_step(Var<T> xw, Var<T> h_prev, Bound<T>& p, const std::string& prefix) {
  const std::size_t H = h_prev.shape().back();
  if (xw.shape().back() != 3 * H)
    throw ad::ShapeError("gru_cell", {xw.shape(), h_prev.shape()});
  Var<T> hu = ad::matmul(h_prev, p(prefix + ".U_zr"));
  Var<T> zr = ad::sigmoid(ad::add(ad::slice(xw, 1, 0, 2 * H), hu));
  Var<T> z = ad::slice(zr, 1, 0, H);
  Var<T> r = ad::slice(zr, 1, H, H);
  Var<T> n = ad::tanh(ad::add(ad::slice(xw, 1, 2 * H, H),
                              ad::matmul(ad::mul(r, h_prev), p(prefix + ".U_n"))));
  return ad::add(ad::mul(z, h_prev), ad::mul(ad::affine_scalar(z, T{-1}, T{1}), n));
}

/// One LSTM step from the input projection xw = x W + b ([1,4H]).
template <class T>
CellState<T> lstm_step(Var<T> xw, CellState<T> prev, Bound<T>& p, const std::string& prefix) {
  const std::size_t H = prev.h.shape().back();
  if (xw.shape().back() != 4 * H)
    throw ad::ShapeError("lstm_cell", {xw.shape(), prev.h.shape()});
  Var<T> pre = ad::add(xw, ad::matmul(prev.h, p(prefix + ".U")));
  Var<T> ifo_i = ad::sigmoid(ad::slice(pre, 1, 0, 2 * H));
  Var<T> i = ad::slice(ifo_i, 1, 0, H);
  Var<T> f = ad::slice(ifo_i, 1, H, H);
  Var<T> gc = ad::tanh(ad::slice(pre, 1, 2 * H, H));
  Var<T> o = ad::sigmoid(ad::slice(pre, 1, 3 * H, H));
  Var<T> c = ad::add(ad::mul(f, prev.c), ad::mul(i, gc));
  return {ad::mul(o, ad::tanh(c)), c};
}

template <class T>
Var<T> input_projection(Var<T> x, Bound<T>& p, const std::string& prefix) {
  return ad::add(ad::matmul(x, p(prefix + ".W")), p(prefix + ".b"));
}

/// x_t [1,in], h_prev [1,H] -> h_t [1,H]
template <class T>
Var<T> gru_cell(Var<T> x, Var<T> h_prev, Bound<T>& p, const std::string& prefix) {
  return gru_step(input_projection(x, p, prefix), h_prev, p, prefix);
}

template <class T>
CellState<T> lstm_cell(Var<T> x, CellState<T> prev, Bound<T>& p, const std::string& prefix) {
  return lstm_step(input_projection(x, p, prefix), prev, p, prefix);
}

/// Runs one direction of a cell over the rows of `seq` and returns the
/// states in position order, [m,H].
template <class T>
Var<T> run_direction(Var<T> seq, CellKind kind, Bound<T>& p, const std::string& prefix,
                     std::size_t hidden, bool reverse) {
  const std::size_t m = seq.shape()[0];
  ad::Tape<T>& tape = *seq.tape;
  Var<T> proj = input_projection(seq, p, prefix);
  Var<T> zero = ad::constant(tape, Tensor<T>({1, hidden}));
  CellState<T> st{zero, zero};
  std::vector<Var<T>> states(m);
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t t = reverse ? m - 1 - s : s;
    Var<T> xw = m == 1 ? proj : ad::slice(proj, 0, t, 1);
    if (kind == CellKind::gru) {
      st.h = gru_step(xw, st.h, p, prefix);
    } else {
      st = lstm_step(xw, st, p, prefix);
    }
    states[t] = st.h;
  }
  if (m == 1) return states[0];
  return ad::concat(std::span<const Var<T>>(states), 0);
}

/// Bidirectional layer: row j is concat(forward_j, backward_j), [m,2H].
template <class T>
Var<T> bidirectional(Var<T> seq, CellKind kind, Bound<T>& p, const std::string& fwd_prefix,
                     const std::string& bwd_prefix, std::size_t hidden) {
  if (seq.shape().size() != 2) throw ad::ShapeError("bidirectional", {seq.shape()});
  Var<T> f = run_direction(seq, kind, p, fwd_prefix, hidden, false);
  Var<T> b = run_direction(seq, kind, p, bwd_prefix, hidden, true);
  return ad::concat({f, b}, 1);
}

/// Attention pooling with a single learned query: weights = softmax(H q),
/// pooled = sum_j weights_j h_j.
template <class T>
struct Pooled {
  Var<T> pooled;   // [1,D]
  Var<T> weights;  // [1,m]
};

template <class T>
void add_attention_pool(ParamSet<T>& ps, const std::string& prefix, std::size_t dim,
                        std::mt19937_64& rng) {
  xavier_uniform(ps.add(prefix + ".query", {1, dim}), dim, 1, rng);
}

template <class T>
Pooled<T> attention_pool(Var<T> states, Bound<T>& p, const std::string& prefix) {
  if (states.shape().size() != 2) throw ad::ShapeError("attention_pool", {states.shape()});
  Var<T> scores = ad::matmul(p(prefix + ".query"), ad::transpose(states));
  Var<T> w = ad::softmax(scores, 1);
  return {ad::matmul(w, states), w};
}

/// One affine + activation layer of a feed-forward stack.
struct DenseSpec {
  std::size_t out = 0;
  Activation activation = Activation::none;
};

template <class T>
void add_feed_forward(ParamSet<T>& ps, const std::string& prefix, std::size_t in,
                      const std::vector<DenseSpec>& layers, std::mt19937_64& rng) {
  std::size_t d = in;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].out == 0) throw std::invalid_argument(prefix + ": dimensions must be positive");
    const std::string name = prefix + "." + std::to_string(l);
    xavier_uniform(ps.add(name + ".W", {d, layers[l].out}), d, layers[l].out, rng);
    ps.add(name + ".b", {layers[l].out});
    d = layers[l].out;
  }
}

template <class T>
Var<T> feed_forward(Var<T> x, Bound<T>& p, const std::string& prefix,
                    const std::vector<DenseSpec>& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string name = prefix + "." + std::to_string(l);
    x = activate(ad::add(ad::matmul(x, p(name + ".W")), p(name + ".b")), layers[l].activation);
  }
  return x;
}

}  // namespace distflip::nn
