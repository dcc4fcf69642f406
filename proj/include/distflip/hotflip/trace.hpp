#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/core/budget.hpp"
#include "distflip/corpus/sentence.hpp"

namespace distflip::hotflip {

using corpus::CharId;
using corpus::Sentence;
using corpus::Vocab;

/// Replace the character at `pos` (0-based) with `target`.
struct FlipAction {
  std::size_t pos = 0;
  CharId target = 0;

  friend bool operator==(const FlipAction&, const FlipAction&) = default;
};

/// Attack succeeds once the model's toxicity drops strictly below threshold.
struct StopRule {
  double threshold = 0.5;

  bool satisfied(double toxicity) const { return toxicity < threshold; }

  static StopRule prob_below(double tau) { return {tau}; }
  static StopRule prediction_flipped() { return prob_below(0.5); }
};

inline std::size_t default_max_flips(std::size_t length) { return std::min<std::size_t>(length, 100); }

struct AttackTrace {
  std::string id;
  std::string attacker;
  std::vector<CharId> initial;
  std::vector<FlipAction> flips;
  std::vector<double> scores;  // toxicity of x(0)..x(l), one per sentence
  double estimate = 0;         // cumulative first-order estimate of the path
  bool success = false;
  std::string failure;  // reason when !success
  BudgetSnapshot budget;
  std::int64_t wall_ns = 0;
  nlohmann::json rounds = nlohmann::json::array();  // per-round search sizes

  std::size_t num_flips() const { return flips.size(); }

  /// x(0)..x(l) obtained by replaying the flips.
  std::vector<std::vector<CharId>> sentences() const {
    std::vector<std::vector<CharId>> out{initial};
    for (const auto& f : flips) {
      auto next = out.back();
      next.at(f.pos) = f.target;
      out.push_back(std::move(next));
    }
    return out;
  }

  std::vector<CharId> final_chars() const {
    auto x = initial;
    for (const auto& f : flips) x.at(f.pos) = f.target;
    return x;
  }

  double final_score() const { return scores.empty() ? std::numeric_limits<double>::quiet_NaN() : scores.back(); }
};

/// Wall-clock and meter bookkeeping for one attack.
class AttackClock {
 public:
  explicit AttackClock(const BudgetMeter& meter)
      : meter_(&meter), start_budget_(meter.snapshot()), start_(std::chrono::steady_clock::now()) {}

  void finish(AttackTrace& t) const {
    t.budget = meter_->snapshot() - start_budget_;
    t.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start_)
                    .count();
  }

 private:
  const BudgetMeter* meter_;
  BudgetSnapshot start_budget_;
  std::chrono::steady_clock::time_point start_;
};

inline nlohmann::json trace_to_json(const AttackTrace& t, const Vocab& vocab) {
  nlohmann::json flips = nlohmann::json::array();
  for (const auto& f : t.flips)
    flips.push_back({{"pos", f.pos}, {"target_char", corpus::utf8_encode(std::u32string(1, vocab.decode(f.target)))}});
  nlohmann::json j = {{"id", t.id},
                      {"attacker", t.attacker},
                      {"text", vocab.decode_utf8(t.initial)},
                      {"final_text", vocab.decode_utf8(t.final_chars())},
                      {"flips", flips},
                      {"scores", t.scores},
                      {"success", t.success},
                      {"estimate", t.estimate},
                      {"forward_count", t.budget.forward},
                      {"backward_count", t.budget.backward},
                      {"attacker_forward_count", t.budget.attacker_forward},
                      {"wall_ns", t.wall_ns}};
  if (!t.success) j["failure"] = t.failure;
  if (!t.rounds.empty()) j["rounds"] = t.rounds;
  return j;
}

inline CharId char_from_json(const nlohmann::json& j, const Vocab& vocab) {
  auto cps = corpus::utf8_decode(j.get<std::string>());
  if (cps.size() != 1) throw std::invalid_argument("target_char must be a single character");
  return vocab.encode(cps[0]);
}

inline AttackTrace trace_from_json(const nlohmann::json& j, const Vocab& vocab) {
  AttackTrace t;
  t.id = j.at("id").get<std::string>();
  t.attacker = j.value("attacker", "");
  t.initial = vocab.encode(corpus::utf8_decode(j.at("text").get<std::string>()));
  for (const auto& f : j.at("flips")) t.flips.push_back({f.at("pos").get<std::size_t>(), char_from_json(f.at("target_char"), vocab)});
  t.scores = j.at("scores").get<std::vector<double>>();
  t.success = j.at("success").get<bool>();
  t.estimate = j.value("estimate", 0.0);
  t.failure = j.value("failure", "");
  t.budget.forward = j.value("forward_count", std::uint64_t{0});
  t.budget.backward = j.value("backward_count", std::uint64_t{0});
  t.budget.attacker_forward = j.value("attacker_forward_count", std::uint64_t{0});
  t.wall_ns = j.value("wall_ns", std::int64_t{0});
  if (j.contains("rounds")) t.rounds = j["rounds"];
  return t;
}

}  // namespace distflip::hotflip
