#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/corpus/split.hpp"
#include "distflip/nn/adam.hpp"
#include "distflip/source/model.hpp"

namespace distflip::source {

/// Area under the ROC curve as the Mann-Whitney rank statistic (ties get
/// average ranks). 0.5 when either class is absent.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  if (labels.size() != n) throw std::invalid_argument("auc: score/label length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        pos_rank_sum += avg;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return 0.5;
  const double u = pos_rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct SourceTrainHyper {
  std::size_t epochs = 10;
  std::size_t batch = 8;
  nn::AdamHyper adam;
  std::uint64_t seed = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Evaluation {
  double auc = 0.5;
  double accuracy = 0;
  double loss = 0;
};

template <class T>
Evaluation evaluate(const SourceModel<T>& model, const std::vector<Sentence>& data) {
  BudgetMeter scratch;
  std::vector<double> p;
  std::vector<int> y;
  double loss = 0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    const double prob = score(model, s, scratch);
    p.push_back(prob);
    y.push_back(s.label);
    correct += static_cast<std::size_t>((prob > 0.5) == (s.label == 1));
    const double q = std::clamp(s.label == 1 ? prob : 1 - prob, 1e-12, 1.0);
    loss -= std::log(q);
  }
  if (data.empty()) return {};
  return {auc(p, y), static_cast<double>(correct) / static_cast<double>(data.size()),
          loss / static_cast<double>(data.size())};
}

template <class T>
struct SourceTrainResult {
  SourceModel<T> model;
  nn::AdamState<T> optimizer;
  std::vector<nlohmann::json> history;
};

/// Minibatch Adam on per-sentence tapes. Gradients of a batch are summed in
/// a fixed order and averaged, so results do not depend on thread timing.
/// `on_epoch` receives one metrics record per epoch.
template <class T>
SourceTrainResult<T> train_source(SourceModel<T> model, const std::vector<Sentence>& train,
                                  const std::vector<Sentence>& val, const SourceTrainHyper& hyper,
                                  const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  if (hyper.batch == 0) throw std::invalid_argument("batch size must be positive");
  SourceTrainResult<T> res{std::move(model), {}, {}};
  auto& m = res.model;
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
        const Sentence& s = train[order[k]];
        ad::Tape<T> tape;
        nn::Bound<T> p(tape, m.params, true);
        auto g = build_source_graph(m, p, s.chars, false);
        Var<T> loss = ad::bce_with_logits(g.logit, static_cast<T>(s.label));
        const double lv = static_cast<double>(loss.value().item());
        if (!std::isfinite(lv))
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " on sentence '" +
                                 s.id + "'");
        loss_sum += lv;
        auto grads = nn::collect_gradients(p, ad::backward(tape, loss.id));
        for (auto& [name, gt] : grads) {
          auto it = acc.find(name);
          if (it == acc.end()) {
            acc.emplace(name, std::move(gt));
          } else {
            it->second += gt;
          }
        }
      }
      const T inv = T{1} / static_cast<T>(end - start);
      for (auto& [_, gt] : acc)
        for (auto& v : gt.values()) v *= inv;
      try {
        nn::adam_step(m.params, std::move(acc), res.optimizer, hyper.adam);
      } catch (const nn::NonFiniteGradient& e) {
        throw TrainingDiverged("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    const Evaluation ev = evaluate(m, val);
    nlohmann::json rec = {{"epoch", epoch},
                          {"train_loss", loss_sum / static_cast<double>(train.size())},
                          {"val_auc", ev.auc},
                          {"val_accuracy", ev.accuracy},
                          {"val_loss", ev.loss}};
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

}  // namespace distflip::source
