#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/autodiff/ops.hpp"

namespace distflip::nn {

using ad::Shape;
using ad::Tensor;
using ad::Var;

/// Non-tensor metadata carried with every parameter set and checkpoint.
struct ModelMeta {
  std::string model_kind;      // "source" | "attacker"
  std::string vocab_hash;      // hex FNV-1a of the vocabulary
  nlohmann::json hyper = nlohmann::json::object();
};

/// Named parameter tensors of one model. Names are unique; iteration order is
/// lexicographic so every traversal (init, optimizer, serialization) is stable.
template <class T>
class ParamSet {
 public:
  ModelMeta meta;

  Tensor<T>& add(const std::string& name, Shape shape) {
    auto [it, inserted] = tensors_.try_emplace(name, Tensor<T>(std::move(shape)));
    if (!inserted) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Tensor<T> value) {
    tensors_.insert_or_assign(name, std::move(value));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& tensors() const noexcept { return tensors_; }
  std::map<std::string, Tensor<T>>& tensors() noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    out.meta = meta;
    for (const auto& [name, t] : tensors_) out.set(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.meta.model_kind == b.meta.model_kind && a.meta.vocab_hash == b.meta.vocab_hash &&
           a.meta.hyper == b.meta.hyper && a.tensors_ == b.tensors_;
  }

 private:
  std::map<std::string, Tensor<T>> tensors_;
};

/// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
void xavier_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

/// Parameters of a ParamSet bound as leaves of one tape. Each parameter
/// becomes a node the first time it is requested.
template <class T>
class Bound {
 public:
  Bound(ad::Tape<T>& tape, const ParamSet<T>& params, bool with_grad)
      : tape_(&tape), params_(&params), with_grad_(with_grad) {}

  Var<T> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var<T> v = ad::parameter(*tape_, params_->at(name), with_grad_);
    cache_.emplace(name, v);
    return v;
  }

  ad::Tape<T>& tape() { return *tape_; }
  const std::map<std::string, Var<T>>& bound() const noexcept { return cache_; }

 private:
  ad::Tape<T>* tape_;
  const ParamSet<T>* params_;
  bool with_grad_;
  std::map<std::string, Var<T>> cache_;
};

/// Collects the gradient of every bound parameter into a ParamSet-shaped map.
template <class T>
std::map<std::string, Tensor<T>> collect_gradients(const Bound<T>& bound,
                                                   const ad::Gradients<T>& grads) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, v] : bound.bound()) out.emplace(name, grads.at(v.id));
  return out;
}

}  // namespace distflip::nn
