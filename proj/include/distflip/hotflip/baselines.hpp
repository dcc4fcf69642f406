#pragma once

#include <random>
#include <tuple>
#include <string>
#include <vector>

#include "distflip/hotflip/trace.hpp"
#include "distflip/source/model.hpp"

namespace distflip::hotflip {

struct BaselineOptions {
  std::size_t max_flips = 0;  // 0 = default_max_flips(length)
  StopRule stop = StopRule::prediction_flipped();
};

namespace detail {

/// Uniform over flip targets other than `current`.
inline CharId random_target(const Vocab& vocab, CharId current, std::mt19937_64& rng) {
  std::vector<CharId> options;
  for (CharId c = 0; c < vocab.size(); ++c)
    if (c != current && vocab.is_flip_target(c)) options.push_back(c);
  if (options.empty()) throw std::invalid_argument("vocabulary admits no flip target");
  return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

}  // namespace detail

/// Uniformly random position and target each step; one forward pass per
/// sentence for the stop rule.
template <class T>
AttackTrace random_baseline(const source::SourceModel<T>& model, const Sentence& s, std::mt19937_64& rng,
                            const BaselineOptions& opt, BudgetMeter& meter) {
  AttackClock clock(meter);
  const std::size_t max_flips = opt.max_flips ? opt.max_flips : default_max_flips(s.chars.size());
  AttackTrace t;
  t.id = s.id;
  t.attacker = "random";
  t.initial = s.chars;
  auto x = s.chars;
  t.scores.push_back(source::score(model, x, meter));
  std::uniform_int_distribution<std::size_t> pos(0, x.size() - 1);
  while (!opt.stop.satisfied(t.scores.back()) && t.flips.size() < max_flips) {
    const std::size_t i = pos(rng);
    const CharId c = detail::random_target(model.vocab, x[i], rng);
    x[i] = c;
    t.flips.push_back({i, c});
    t.scores.push_back(source::score(model, x, meter));
  }
  t.success = opt.stop.satisfied(t.scores.back());
  if (!t.success) t.failure = "max_flips reached";
  clock.finish(t);
  return t;
}

namespace detail {

template <class T>
std::pair<double, std::vector<double>> score_with_attention(const source::SourceModel<T>& model,
                                                            const std::vector<CharId>& chars,
                                                            BudgetMeter& meter) {
  ad::Tape<T> tape;
  nn::Bound<T> p(tape, model.params, false);
  auto g = source::build_source_graph(model, p, chars, false);
  meter.forward();
  std::vector<double> w(chars.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(g.weights.value()[i]);
  return {source::sigmoid(static_cast<double>(g.logit.value().item())), w};
}

}  // namespace detail

/// Flips the position of maximum attention (lowest index on ties) to a
/// random target. The forward pass that scores a sentence also yields the
/// attention used for its next flip, so each step costs one forward.
template <class T>
AttackTrace attention_baseline(const source::SourceModel<T>& model, const Sentence& s, std::mt19937_64& rng,
                               const BaselineOptions& opt, BudgetMeter& meter) {
  AttackClock clock(meter);
  const std::size_t max_flips = opt.max_flips ? opt.max_flips : default_max_flips(s.chars.size());
  AttackTrace t;
  t.id = s.id;
  t.attacker = "attention";
  t.initial = s.chars;
  auto x = s.chars;
  auto [p, w] = detail::score_with_attention(model, x, meter);
  t.scores.push_back(p);
  while (!opt.stop.satisfied(t.scores.back()) && t.flips.size() < max_flips) {
    std::size_t i = 0;
    for (std::size_t k = 1; k < w.size(); ++k)
      if (w[k] > w[i]) i = k;
    const CharId c = detail::random_target(model.vocab, x[i], rng);
    x[i] = c;
    t.flips.push_back({i, c});
    std::tie(p, w) = detail::score_with_attention(model, x, meter);
    t.scores.push_back(p);
  }
  t.success = opt.stop.satisfied(t.scores.back());
  if (!t.success) t.failure = "max_flips reached";
  clock.finish(t);
  return t;
}

}  // namespace distflip::hotflip
