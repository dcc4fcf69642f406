#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "distflip/nn/params.hpp"

namespace distflip::nn {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global L2 norm; <= 0 disables clipping
};

template <class T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  long step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter '" + param + "'"), param_(param) {}
  const std::string& param() const noexcept { return param_; }

 private:
  std::string param_;
};

/// Global L2 norm over a gradient map.
template <class T>
double global_norm(const std::map<std::string, Tensor<T>>& grads) {
  double sq = 0;
  for (const auto& [_, g] : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

/// One Adam update with bias-corrected moments. Parameters without a gradient
/// entry are left untouched.
template <class T>
void adam_step(ParamSet<T>& params, std::map<std::string, Tensor<T>> grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::out_of_range("gradient for unknown parameter '" + name + "'");
    if (g.shape() != params.at(name).shape())
      throw ad::ShapeError("adam_step", {g.shape(), params.at(name).shape()}, name);
    if (!g.all_finite()) throw NonFiniteGradient(name);
  }
  if (hyper.clip_norm > 0) {
    const double norm = global_norm(grads);
    if (norm > hyper.clip_norm) {
      const T s = static_cast<T>(hyper.clip_norm / norm);
      for (auto& [_, g] : grads)
        for (auto& v : g.values()) v *= s;
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  for (auto& [name, g] : grads) {
    Tensor<T>& w = params.at(name);
    auto [mit, _m] = state.m.try_emplace(name, Tensor<T>(w.shape()));
    auto [vit, _v] = state.v.try_emplace(name, Tensor<T>(w.shape()));
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      w[i] -= static_cast<T>(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

}  // namespace distflip::nn
