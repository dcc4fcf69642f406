#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/core/budget.hpp"
#include "distflip/corpus/sentence.hpp"
#include "distflip/corpus/vocab.hpp"
#include "distflip/nn/checkpoint.hpp"
#include "distflip/nn/layers.hpp"

namespace distflip::source {

using corpus::CharId;
using corpus::Sentence;
using corpus::Vocab;
using nn::Tensor;
using nn::Var;

struct SourceConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;  // per direction
  std::size_t layers = 2;

  friend bool operator==(const SourceConfig&, const SourceConfig&) = default;
};

inline nlohmann::json to_json(const SourceConfig& c) {
  return {{"embed_dim", c.embed_dim}, {"hidden", c.hidden}, {"layers", c.layers}};
}

inline SourceConfig source_config_from_json(const nlohmann::json& j) {
  SourceConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  return c;
}

/// Embedding -> stacked bidirectional GRU -> attention pooling -> one logit.
template <class T>
struct SourceModel {
  Vocab vocab;
  SourceConfig config;
  nn::ParamSet<T> params;
};

inline std::string gru_prefix(std::size_t layer, bool backward) {
  return "gru.l" + std::to_string(layer) + (backward ? ".bwd" : ".fwd");
}

template <class T>
SourceModel<T> init_source(const Vocab& vocab, const SourceConfig& cfg, std::uint64_t seed) {
  if (cfg.embed_dim == 0 || cfg.hidden == 0 || cfg.layers == 0)
    throw std::invalid_argument("source model dimensions must be positive");
  SourceModel<T> m{vocab, cfg, {}};
  std::mt19937_64 rng(seed);
  auto& ps = m.params;
  ps.meta.model_kind = "source";
  ps.meta.vocab_hash = vocab.hash();
  ps.meta.hyper = to_json(cfg);
  ps.meta.hyper["charset"] = corpus::utf8_encode(vocab.chars());
  nn::xavier_uniform(ps.add("embed.E", {vocab.embedding_rows(), cfg.embed_dim}), vocab.embedding_rows(),
                     cfg.embed_dim, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t in = l == 0 ? cfg.embed_dim : 2 * cfg.hidden;
    nn::add_cell(ps, gru_prefix(l, false), nn::CellKind::gru, in, cfg.hidden, rng);
    nn::add_cell(ps, gru_prefix(l, true), nn::CellKind::gru, in, cfg.hidden, rng);
  }
  nn::add_attention_pool(ps, "attn", 2 * cfg.hidden, rng);
  nn::add_feed_forward(ps, "out", 2 * cfg.hidden, {{1, nn::Activation::none}}, rng);
  return m;
}

template <class T>
Tensor<T> one_hot(const std::vector<CharId>& chars, std::size_t width) {
  Tensor<T> x({chars.size(), width});
  for (std::size_t i = 0; i < chars.size(); ++i) x.at(i, chars.at(i)) = T{1};
  return x;
}

template <class T>
struct SourceGraph {
  Var<T> input;    // [m, |V|+1] 1-hot rows
  Var<T> logit;    // [1,1]
  Var<T> weights;  // [1,m] attention
};

/// Records the classifier on `p`'s tape from an [m, |V|+1] input whose rows
/// are normally 1-hot; any real-valued rows are accepted.
template <class T>
SourceGraph<T> build_source_graph(const SourceModel<T>& model, nn::Bound<T>& p, Var<T> in) {
  if (in.shape().size() != 2 || in.shape()[1] != model.vocab.embedding_rows() || in.shape()[0] == 0)
    throw ad::ShapeError("source_model", {in.shape()}, "expected [m, vocab+pad] input");
  Var<T> h = ad::embedding_matmul(in, p("embed.E"));
  for (std::size_t l = 0; l < model.config.layers; ++l)
    h = nn::bidirectional(h, nn::CellKind::gru, p, gru_prefix(l, false), gru_prefix(l, true),
                          model.config.hidden);
  auto pooled = nn::attention_pool(h, p, "attn");
  Var<T> logit = nn::feed_forward(pooled.pooled, p, "out", {{1, nn::Activation::none}});
  return {in, logit, pooled.weights};
}

/// Same, from character indices. With `input_grad` the 1-hot input is a
/// differentiable leaf.
template <class T>
SourceGraph<T> build_source_graph(const SourceModel<T>& model, nn::Bound<T>& p,
                                  const std::vector<CharId>& chars, bool input_grad) {
  if (chars.empty()) throw std::invalid_argument("empty sentence");
  for (CharId c : chars)
    if (c >= model.vocab.size())
      throw std::invalid_argument("character index " + std::to_string(c) +
                                  " is not valid model input");
  Tensor<T> x = one_hot<T>(chars, model.vocab.embedding_rows());
  auto& tape = p.tape();
  Var<T> in = input_grad ? ad::variable(tape, std::move(x)) : ad::constant(tape, std::move(x));
  return build_source_graph(model, p, in);
}

inline double sigmoid(double l) {
  return l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
}

/// Toxicity probability; one counted forward pass.
template <class T>
double score(const SourceModel<T>& model, const std::vector<CharId>& chars, BudgetMeter& meter) {
  ad::Tape<T> tape;
  nn::Bound<T> p(tape, model.params, false);
  auto g = build_source_graph(model, p, chars, false);
  meter.forward();
  return sigmoid(static_cast<double>(g.logit.value().item()));
}

template <class T>
double score(const SourceModel<T>& model, const Sentence& s, BudgetMeter& meter) {
  return score(model, s.chars, meter);
}

template <class T>
struct InputGradient {
  Tensor<T> grad;  // [m, |V|]: d loss / d x[i][c], pad column dropped
  double loss = 0;
  double prob = 0;  // model probability at the evaluated sentence
  int label = 1;
};

/// Gradient of the binary cross-entropy w.r.t. the 1-hot input; one counted
/// forward and one counted backward pass.
template <class T>
InputGradient<T> input_gradients(const SourceModel<T>& model, const std::vector<CharId>& chars,
                                 int label, BudgetMeter& meter) {
  ad::Tape<T> tape;
  nn::Bound<T> p(tape, model.params, false);
  auto g = build_source_graph(model, p, chars, true);
  Var<T> loss = ad::bce_with_logits(g.logit, static_cast<T>(label));
  meter.forward();
  auto grads = ad::backward(tape, loss.id);
  meter.backward();
  const Tensor<T> full = grads.at(g.input.id);
  const std::size_t m = chars.size(), v = model.vocab.size(), w = model.vocab.embedding_rows();
  InputGradient<T> out;
  out.grad = Tensor<T>({m, v});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < v; ++c) out.grad.at(i, c) = full[i * w + c];
  out.loss = static_cast<double>(loss.value().item());
  out.prob = sigmoid(static_cast<double>(g.logit.value().item()));
  out.label = label;
  return out;
}

/// Attention distribution over positions; one counted forward pass.
template <class T>
std::vector<double> attention_weights(const SourceModel<T>& model, const std::vector<CharId>& chars,
                                      BudgetMeter& meter) {
  ad::Tape<T> tape;
  nn::Bound<T> p(tape, model.params, false);
  auto g = build_source_graph(model, p, chars, false);
  meter.forward();
  std::vector<double> w(chars.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(g.weights.value()[i]);
  return w;
}

template <class T>
void save_source(const SourceModel<T>& model, const std::string& path,
                 const nlohmann::json& extra = nlohmann::json::object(),
                 const std::optional<nn::AdamState<T>>& optimizer = std::nullopt) {
  nn::save_checkpoint(nn::Checkpoint<T>{model.params, optimizer, extra}, path);
}

/// Rebuilds the vocabulary from the checkpoint and checks every parameter
/// against a freshly initialized model of the stored configuration.
template <class T>
SourceModel<T> source_from_checkpoint(nn::Checkpoint<T> ck) {
  const auto& meta = ck.params.meta;
  if (meta.model_kind != "source")
    throw nn::CheckpointError("expected a source checkpoint, found '" + meta.model_kind + "'");
  Vocab vocab(corpus::utf8_decode(meta.hyper.at("charset").template get<std::string>()));
  if (vocab.hash() != meta.vocab_hash) throw nn::VocabMismatch(meta.vocab_hash, vocab.hash());
  auto cfg = source_config_from_json(meta.hyper);
  auto ref = init_source<T>(vocab, cfg, 0);
  for (const auto& [name, t] : ref.params.tensors()) {
    if (!ck.params.contains(name)) throw nn::CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (ck.params.at(name).shape() != t.shape())
      throw nn::CheckpointError("parameter '" + name + "' has shape " +
                                ad::to_string(ck.params.at(name).shape()) + ", expected " +
                                ad::to_string(t.shape()));
  }
  if (ck.params.size() != ref.params.size()) throw nn::CheckpointError("checkpoint has unknown parameters");
  return {std::move(vocab), cfg, std::move(ck.params)};
}

template <class T>
SourceModel<T> load_source(const std::string& path,
                           const std::optional<std::string>& expected_vocab_hash = {}) {
  return source_from_checkpoint<T>(nn::load_checkpoint<T>(path, expected_vocab_hash));
}

}  // namespace distflip::source
