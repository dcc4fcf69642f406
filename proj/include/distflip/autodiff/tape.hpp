#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "distflip/autodiff/tensor.hpp"

namespace distflip::ad {

using NodeId = std::size_t;

template <class T>
class Tape;

/// Gradients produced by one backward pass, indexed by node id. Entries for
/// nodes the seed does not reach stay empty and read back as zeros.
template <class T>
class Gradients {
 public:
  explicit Gradients(const Tape<T>& tape) : tape_(&tape), grads_(tape.size()) {}

  /// Gradient of the seeded objective with respect to `id`.
  Tensor<T> at(NodeId id) const {
    check(id);
    if (grads_[id].empty()) return Tensor<T>(tape_->value(id).shape());
    return grads_[id];
  }

  bool reached(NodeId id) const {
    check(id);
    return !grads_[id].empty();
  }

  /// Mutable accumulator used by backward rules; allocated on first touch.
  Tensor<T>& accumulator(NodeId id) {
    auto& g = grads_[id];
    if (g.empty()) g = Tensor<T>(tape_->value(id).shape());
    return g;
  }

  Tensor<T>& raw(NodeId id) { return grads_[id]; }

 private:
  void check(NodeId id) const {
    if (id >= grads_.size())
      throw std::out_of_range("gradient requested for node " + std::to_string(id) +
                              " which is not on the tape (size " +
                              std::to_string(grads_.size()) + ")");
  }

  const Tape<T>* tape_;
  std::vector<Tensor<T>> grads_;
};

/// Append-only record of a forward computation. Node inputs always precede
/// the node, so reverse insertion order is a valid backward schedule.
template <class T>
class Tape {
 public:
  /// Propagates `grad_out` (gradient of this node) into the inputs' accumulators.
  using BackwardFn = std::function<void(const Tape&, NodeId self, const Tensor<T>& grad_out,
                                        Gradients<T>& grads)>;

  struct Node {
    const char* op = "";
    std::vector<NodeId> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Leaf that owns its value.
  NodeId leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  /// Leaf that references a tensor owned elsewhere (model parameters). The
  /// referenced tensor must outlive the tape.
  NodeId external(const Tensor<T>& value, bool requires_grad) {
    Node n;
    n.op = "param";
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push(const char* op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn backward) {
    bool rg = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) throw std::logic_error(std::string(op) + ": dangling input");
      rg = rg || nodes_[in].requires_grad;
    }
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.owned = std::move(value);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  NodeId id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Reverse sweep from one or more seeded nodes. Does not modify the tape, so
/// it can be replayed.
template <class T>
Gradients<T> backward(const Tape<T>& tape, const std::vector<std::pair<NodeId, Tensor<T>>>& seeds) {
  Gradients<T> grads(tape);
  NodeId top = 0;
  for (const auto& [id, seed] : seeds) {
    if (id >= tape.size())
      throw std::out_of_range("backward seed names node " + std::to_string(id) +
                              " which is not on the tape");
    if (seed.shape() != tape.value(id).shape())
      throw ShapeError("backward seed", {seed.shape(), tape.value(id).shape()});
    grads.accumulator(id) += seed;
    top = std::max(top, id);
  }
  if (seeds.empty()) return grads;
  for (NodeId id = top + 1; id-- > 0;) {
    const auto& n = tape.node(id);
    if (!n.backward || !grads.reached(id)) continue;
    // Rules only write to inputs, which precede `id`, so `g` stays valid.
    const Tensor<T>& g = grads.raw(id);
    n.backward(tape, id, g, grads);
  }
  return grads;
}

/// Seeds a scalar output with 1.
template <class T>
Gradients<T> backward(const Tape<T>& tape, NodeId scalar_output) {
  return backward(tape, {{scalar_output, Tensor<T>(tape.value(scalar_output).shape(), T{1})}});
}

template <class T>
struct ForwardResult {
  std::map<std::string, Tensor<T>> outputs;
  std::map<std::string, NodeId> output_ids;
  std::map<std::string, NodeId> input_ids;
  Tape<T> tape;
};

/// Records `builder(tape, inputs)` on a fresh tape. Every input is a leaf
/// that requires a gradient.
template <class T, class Builder>
ForwardResult<T> forward(Builder&& builder, const std::map<std::string, Tensor<T>>& inputs) {
  ForwardResult<T> result;
  std::map<std::string, Var<T>> vars;
  for (const auto& [name, value] : inputs) {
    if (!value.all_finite()) throw NonFiniteError("forward input '" + name + "' is not finite");
    Var<T> v{&result.tape, result.tape.leaf(value, true)};
    vars.emplace(name, v);
    result.input_ids.emplace(name, v.id);
  }
  std::map<std::string, Var<T>> outs = builder(result.tape, vars);
  for (const auto& [name, v] : outs) {
    result.outputs.emplace(name, v.value());
    result.output_ids.emplace(name, v.id);
  }
  return result;
}

}  // namespace distflip::ad
