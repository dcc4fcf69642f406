#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/distill/attacker.hpp"
#include "distflip/distill/pairs.hpp"
#include "distflip/nn/adam.hpp"

namespace distflip::distill {

struct AttackerTrainHyper {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  nn::AdamHyper adam;
  std::uint64_t seed = 0;
};

struct PairMetrics {
  double loss = 0;
  double top1_position = 0;
  double top5_position = 0;
  double top1_target = 0;  // at the gold position, inference exclusions applied
};

/// Rank of `j` among positions by logit, ties broken toward lower index.
inline std::size_t position_rank(const std::vector<double>& logits, std::size_t j) {
  std::size_t rank = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] > logits[j] || (logits[i] == logits[j] && i < j)) ++rank;
  return rank;
}

template <class T>
PairMetrics evaluate_pairs(const AttackerModel<T>& model, const std::vector<FlipPair>& pairs) {
  PairMetrics m;
  if (pairs.empty()) return m;
  BudgetMeter scratch;
  for (const auto& p : pairs) {
    const auto out = attacker_forward(model, p.chars, scratch);
    const std::size_t rank = position_rank(out.position_logits, p.flip.pos);
    m.top1_position += rank == 0;
    m.top5_position += rank < 5;
    m.top1_target += best_target(out, p.flip.pos, p.chars[p.flip.pos], model.vocab) == p.flip.target;
    // same two cross-entropies as the training loss, from the exported logits
    const auto& row = out.target_logits;
    double mx = -1e300, z = 0;
    for (CharId c = 0; c < row.cols(); ++c) mx = std::max(mx, row.at(p.flip.pos, c));
    for (CharId c = 0; c < row.cols(); ++c) z += std::exp(row.at(p.flip.pos, c) - mx);
    m.loss += -std::log(std::max(out.position_prob[p.flip.pos], 1e-300)) -
              (row.at(p.flip.pos, p.flip.target) - mx - std::log(z));
  }
  const double n = static_cast<double>(pairs.size());
  m.loss /= n;
  m.top1_position /= n;
  m.top5_position /= n;
  m.top1_target /= n;
  return m;
}

inline nlohmann::json to_json(const PairMetrics& m) {
  return {{"loss", m.loss},
          {"top1_position", m.top1_position},
          {"top5_position", m.top5_position},
          {"top1_target", m.top1_target}};
}

template <class T>
struct AttackerTrainResult {
  AttackerModel<T> model;
  std::vector<nlohmann::json> history;
};

/// Minibatch Adam on the summed position and target cross-entropies.
template <class T>
AttackerTrainResult<T> train_attacker(AttackerModel<T> model, const std::vector<FlipPair>& train,
                                      const std::vector<FlipPair>& val, const AttackerTrainHyper& hyper,
                                      const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  if (hyper.batch == 0) throw std::invalid_argument("batch size must be positive");
  AttackerTrainResult<T> res{std::move(model), {}};
  auto& m = res.model;
  nn::AdamState<T> opt;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(hyper.seed);
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      std::map<std::string, Tensor<T>> acc;
      for (std::size_t k = start; k < end; ++k) {
        const FlipPair& pr = train[order[k]];
        ad::Tape<T> tape;
        nn::Bound<T> p(tape, m.params, true);
        auto g = build_attacker_graph(m, p, pr.chars);
        Var<T> loss = attacker_loss(g, pr.flip);
        loss_sum += static_cast<double>(loss.value().item());
        for (auto& [name, gt] : nn::collect_gradients(p, ad::backward(tape, loss.id))) {
          auto it = acc.find(name);
          if (it == acc.end())
            acc.emplace(name, std::move(gt));
          else
            it->second += gt;
        }
      }
      const T inv = T{1} / static_cast<T>(end - start);
      for (auto& [_, gt] : acc)
        for (auto& v : gt.values()) v *= inv;
      nn::adam_step(m.params, std::move(acc), opt, hyper.adam);
    }
    nlohmann::json rec = {{"epoch", epoch}, {"train_loss", loss_sum / static_cast<double>(train.size())}};
    const auto ev = to_json(evaluate_pairs(m, val));
    for (const auto& [k, v] : ev.items()) rec["val_" + k] = v;
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

}  // namespace distflip::distill
