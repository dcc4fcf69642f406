#pragma once

#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/core/budget.hpp"
#include "distflip/corpus/vocab.hpp"
#include "distflip/hotflip/trace.hpp"
#include "distflip/nn/checkpoint.hpp"
#include "distflip/nn/layers.hpp"
#include "distflip/source/model.hpp"

namespace distflip::distill {

using corpus::CharId;
using corpus::Vocab;
using hotflip::FlipAction;
using nn::Tensor;
using nn::Var;

struct AttackerConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;  // per direction
  std::vector<std::size_t> position_head = {100, 50};
  std::vector<std::size_t> target_head = {100, 100};

  static AttackerConfig desk() { return {}; }
  static AttackerConfig paper() { return {300, 512, {100, 50}, {100, 100}}; }

  friend bool operator==(const AttackerConfig&, const AttackerConfig&) = default;
};

inline nlohmann::json to_json(const AttackerConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"position_head", c.position_head},
          {"target_head", c.target_head}};
}

inline AttackerConfig attacker_config_from_json(const nlohmann::json& j) {
  AttackerConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.position_head = j.at("position_head").get<std::vector<std::size_t>>();
  c.target_head = j.at("target_head").get<std::vector<std::size_t>>();
  return c;
}

/// Embedding -> bidirectional LSTM -> per-position heads: one position
/// logit and one row of |V| target logits for every character.
template <class T>
struct AttackerModel {
  Vocab vocab;
  AttackerConfig config;
  nn::ParamSet<T> params;
};

namespace detail {

inline std::vector<nn::DenseSpec> head_layers(const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<nn::DenseSpec> layers;
  for (std::size_t d : hidden) layers.push_back({d, nn::Activation::relu});
  layers.push_back({out, nn::Activation::none});
  return layers;
}

}  // namespace detail

/// Reads `char v1 ... vd` lines into the embedding rows of known characters.
/// The character is the first code point of the line, so a space row starts
/// with a space. Returns the number of rows filled.
template <class T>
std::size_t load_char_embeddings(const std::string& path, const Vocab& vocab, Tensor<T>& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file '" + path + "'");
  const std::size_t d = table.cols();
  std::size_t filled = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cps = corpus::utf8_decode(line);
    const std::string head = corpus::utf8_encode(std::u32string(1, cps[0]));
    std::istringstream rest(line.substr(head.size()));
    std::vector<T> row;
    for (double v; rest >> v;) row.push_back(static_cast<T>(v));
    if (row.size() != d)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(d) +
                               " values, found " + std::to_string(row.size()));
    if (!vocab.contains(cps[0])) continue;
    const CharId c = vocab.encode(cps[0]);
    std::copy(row.begin(), row.end(), &table.at(c, 0));
    ++filled;
  }
  return filled;
}

template <class T>
AttackerModel<T> init_attacker(const Vocab& vocab, const AttackerConfig& cfg, std::uint64_t seed,
                               const std::optional<std::string>& pretrained = std::nullopt) {
  if (cfg.embed_dim == 0 || cfg.hidden == 0) throw std::invalid_argument("attacker dimensions must be positive");
  AttackerModel<T> m{vocab, cfg, {}};
  std::mt19937_64 rng(seed);
  auto& ps = m.params;
  ps.meta.model_kind = "attacker";
  ps.meta.vocab_hash = vocab.hash();
  ps.meta.hyper = to_json(cfg);
  ps.meta.hyper["charset"] = corpus::utf8_encode(vocab.chars());
  auto& E = ps.add("embed.E", {vocab.embedding_rows(), cfg.embed_dim});
  nn::xavier_uniform(E, vocab.embedding_rows(), cfg.embed_dim, rng);
  nn::add_cell(ps, "lstm.fwd", nn::CellKind::lstm, cfg.embed_dim, cfg.hidden, rng);
  nn::add_cell(ps, "lstm.bwd", nn::CellKind::lstm, cfg.embed_dim, cfg.hidden, rng);
  nn::add_feed_forward(ps, "pos", 2 * cfg.hidden, detail::head_layers(cfg.position_head, 1), rng);
  nn::add_feed_forward(ps, "tgt", 2 * cfg.hidden, detail::head_layers(cfg.target_head, vocab.size()), rng);
  if (pretrained) load_char_embeddings(*pretrained, vocab, E);
  return m;
}

template <class T>
struct AttackerGraph {
  Var<T> position_logits;  // [1, m]
  Var<T> target_logits;    // [m, |V|]
};

template <class T>
AttackerGraph<T> build_attacker_graph(const AttackerModel<T>& model, nn::Bound<T>& p, Var<T> in) {
  if (in.shape().size() != 2 || in.shape()[1] != model.vocab.embedding_rows() || in.shape()[0] == 0)
    throw ad::ShapeError("attacker", {in.shape()}, "expected [m, vocab+pad] input");
  Var<T> e = ad::embedding_matmul(in, p("embed.E"));
  Var<T> h = nn::bidirectional(e, nn::CellKind::lstm, p, "lstm.fwd", "lstm.bwd", model.config.hidden);
  Var<T> pos = nn::feed_forward(h, p, "pos", detail::head_layers(model.config.position_head, 1));
  Var<T> tgt = nn::feed_forward(h, p, "tgt", detail::head_layers(model.config.target_head, model.vocab.size()));
  return {ad::transpose(pos), tgt};
}

template <class T>
AttackerGraph<T> build_attacker_graph(const AttackerModel<T>& model, nn::Bound<T>& p,
                                      const std::vector<CharId>& chars) {
  if (chars.empty()) throw std::invalid_argument("empty sentence");
  Tensor<T> x({chars.size(), model.vocab.embedding_rows()});
  for (std::size_t i = 0; i < chars.size(); ++i) {
    if (chars[i] >= model.vocab.size())
      throw std::invalid_argument("character index " + std::to_string(chars[i]) + " is not valid model input");
    x.at(i, chars[i]) = T{1};
  }
  return build_attacker_graph(model, p, ad::constant(p.tape(), std::move(x)));
}

/// CE over positions at the gold position + CE over targets in the gold row.
template <class T>
Var<T> attacker_loss(const AttackerGraph<T>& g, const FlipAction& gold) {
  const std::size_t m = g.target_logits.shape()[0];
  if (gold.pos >= m) throw std::invalid_argument("gold position outside the sentence");
  Var<T> pos_ce = ad::softmax_cross_entropy(g.position_logits, gold.pos);
  Var<T> tgt_ce = ad::softmax_cross_entropy(ad::slice(g.target_logits, 0, gold.pos, 1), gold.target);
  return ad::add(pos_ce, tgt_ce);
}

struct AttackerOutput {
  std::vector<double> position_prob;  // softmax over positions
  std::vector<double> position_logits;
  Tensor<double> target_logits;       // [m, |V|]
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (double& v : p) v /= s;
  return p;
}

}  // namespace detail

/// One counted attacker forward pass.
template <class T>
AttackerOutput attacker_forward(const AttackerModel<T>& model, const std::vector<CharId>& chars,
                                BudgetMeter& meter) {
  ad::Tape<T> tape;
  nn::Bound<T> p(tape, model.params, false);
  auto g = build_attacker_graph(model, p, chars);
  meter.attacker_forward();
  AttackerOutput out;
  for (T v : g.position_logits.value().values()) out.position_logits.push_back(static_cast<double>(v));
  out.position_prob = detail::softmax(out.position_logits);
  const auto& tl = g.target_logits.value();
  out.target_logits = Tensor<double>(tl.shape());
  for (std::size_t k = 0; k < tl.size(); ++k) out.target_logits[k] = static_cast<double>(tl[k]);
  return out;
}

/// Highest target logit in row `pos` among flip targets; the current
/// character is skipped when `exclude_current`.
inline CharId best_target(const AttackerOutput& out, std::size_t pos, CharId current, const Vocab& vocab,
                          bool exclude_current = true) {
  CharId best = vocab.size();
  for (CharId c = 0; c < vocab.size(); ++c) {
    if (!vocab.is_flip_target(c) || (exclude_current && c == current)) continue;
    if (best == vocab.size() || out.target_logits.at(pos, c) > out.target_logits.at(pos, best)) best = c;
  }
  if (best == vocab.size()) throw std::invalid_argument("vocabulary admits no flip target");
  return best;
}

/// Argmax position (lowest index on ties), then the best target there.
inline FlipAction attacker_step(const AttackerOutput& out, const std::vector<CharId>& chars, const Vocab& vocab,
                                bool exclude_current = true) {
  std::size_t j = 0;
  for (std::size_t i = 1; i < out.position_logits.size(); ++i)
    if (out.position_logits[i] > out.position_logits[j]) j = i;
  return {j, best_target(out, j, chars.at(j), vocab, exclude_current)};
}

struct DistflipOptions {
  std::size_t max_flips = 0;  // 0 = default_max_flips(length)
  hotflip::StopRule stop = hotflip::StopRule::prediction_flipped();
  bool exclude_current = true;
};

/// Learned attack loop: each flip is one attacker forward followed by one
/// source-model forward for the stop check. No gradients are taken.
template <class A, class SourceModel>
hotflip::AttackTrace distflip_attack(const AttackerModel<A>& attacker, const SourceModel& source,
                                     const corpus::Sentence& s, const DistflipOptions& opt, BudgetMeter& meter,
                                     const std::string& name = "distflip") {
  hotflip::AttackClock clock(meter);
  const std::size_t max_flips = opt.max_flips ? opt.max_flips : hotflip::default_max_flips(s.chars.size());
  hotflip::AttackTrace t;
  t.id = s.id;
  t.attacker = name;
  t.initial = s.chars;
  auto x = s.chars;
  t.scores.push_back(source::score(source, x, meter));
  while (!opt.stop.satisfied(t.scores.back()) && t.flips.size() < max_flips) {
    const auto f = attacker_step(attacker_forward(attacker, x, meter), x, attacker.vocab, opt.exclude_current);
    x[f.pos] = f.target;
    t.flips.push_back(f);
    t.scores.push_back(source::score(source, x, meter));
  }
  t.success = opt.stop.satisfied(t.scores.back());
  if (!t.success) t.failure = "max_flips reached";
  clock.finish(t);
  return t;
}

template <class T>
void save_attacker(const AttackerModel<T>& model, const std::string& path,
                   const nlohmann::json& extra = nlohmann::json::object()) {
  nn::save_checkpoint(nn::Checkpoint<T>{model.params, std::nullopt, extra}, path);
}

template <class T>
AttackerModel<T> attacker_from_checkpoint(nn::Checkpoint<T> ck) {
  const auto& meta = ck.params.meta;
  if (meta.model_kind != "attacker")
    throw nn::CheckpointError("expected an attacker checkpoint, found '" + meta.model_kind + "'");
  Vocab vocab(corpus::utf8_decode(meta.hyper.at("charset").template get<std::string>()));
  if (vocab.hash() != meta.vocab_hash) throw nn::VocabMismatch(meta.vocab_hash, vocab.hash());
  auto cfg = attacker_config_from_json(meta.hyper);
  auto ref = init_attacker<T>(vocab, cfg, 0);
  for (const auto& [name, t] : ref.params.tensors()) {
    if (!ck.params.contains(name)) throw nn::CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (ck.params.at(name).shape() != t.shape())
      throw nn::CheckpointError("parameter '" + name + "' has the wrong shape");
  }
  if (ck.params.size() != ref.params.size()) throw nn::CheckpointError("checkpoint has unknown parameters");
  return {std::move(vocab), cfg, std::move(ck.params)};
}

template <class T>
AttackerModel<T> load_attacker(const std::string& path, const std::optional<std::string>& expected_vocab_hash = {}) {
  return attacker_from_checkpoint<T>(nn::load_checkpoint<T>(path, expected_vocab_hash));
}

}  // namespace distflip::distill
