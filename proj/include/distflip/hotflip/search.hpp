#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "distflip/hotflip/trace.hpp"
#include "distflip/source/model.hpp"

namespace distflip::hotflip {

inline constexpr double kExcluded = -std::numeric_limits<double>::infinity();

/// m x |V| first-order loss-increase estimates. Self-flips and non-target
/// indices hold kExcluded.
struct FlipScores {
  std::size_t m = 0, v = 0;
  std::vector<double> data;

  double at(std::size_t i, CharId c) const { return data[i * v + c]; }
  double& at(std::size_t i, CharId c) { return data[i * v + c]; }
};

/// entry(i,b) = G[i][b] - G[i][a], a the current character at i.
template <class T>
FlipScores flip_scores_from_gradient(const ad::Tensor<T>& grad, const std::vector<CharId>& chars,
                                     const Vocab& vocab) {
  const std::size_t m = chars.size(), v = vocab.size();
  if (grad.rows() != m || grad.cols() != v)
    throw ad::ShapeError("flip_scores", {grad.shape()}, "gradient does not match sentence");
  FlipScores fs{m, v, std::vector<double>(m * v, kExcluded)};
  for (std::size_t i = 0; i < m; ++i) {
    const CharId a = chars[i];
    const T ga = grad.at(i, a);
    for (CharId b = 0; b < v; ++b)
      if (b != a && vocab.is_flip_target(b)) fs.at(i, b) = static_cast<double>(grad.at(i, b) - ga);
  }
  return fs;
}

/// One counted forward and one counted backward pass.
template <class T>
FlipScores flip_scores(const source::SourceModel<T>& model, const std::vector<CharId>& chars, int label,
                       BudgetMeter& meter) {
  auto g = source::input_gradients(model, chars, label, meter);
  return flip_scores_from_gradient(g.grad, chars, model.vocab);
}

struct ScoredFlip {
  FlipAction flip;
  double estimate = kExcluded;
};

/// Maximum entry; ties go to the lowest position, then the lowest target.
inline ScoredFlip argmax_flip(const FlipScores& fs) {
  ScoredFlip best;
  bool found = false;
  for (std::size_t i = 0; i < fs.m; ++i)
    for (CharId c = 0; c < fs.v; ++c) {
      const double s = fs.at(i, c);
      if (s == kExcluded) continue;
      if (!found || s > best.estimate) {
        best = {{i, c}, s};
        found = true;
      }
    }
  if (!found) throw std::invalid_argument("no admissible flip");
  return best;
}

template <class T>
ScoredFlip greedy_step(const source::SourceModel<T>& model, const std::vector<CharId>& chars, int label,
                       BudgetMeter& meter) {
  return argmax_flip(flip_scores(model, chars, label, meter));
}

struct BeamOptions {
  std::size_t beam = 5;       // K
  std::size_t max_flips = 0;  // 0 = default_max_flips(length)
  bool allow_reflip = true;
  StopRule stop = StopRule::prediction_flipped();
};

struct BeamEntry {
  std::vector<CharId> chars;
  std::vector<FlipAction> flips;
  std::vector<double> scores;  // toxicity along the path
  double cum = 0;              // cumulative first-order estimate
  double tox = 0;
};

namespace detail {

inline void block_flipped(FlipScores& fs, const std::vector<FlipAction>& flips) {
  for (const auto& f : flips)
    for (CharId c = 0; c < fs.v; ++c) fs.at(f.pos, c) = kExcluded;
}

inline AttackTrace trace_of(const Sentence& s, const std::string& attacker, const BeamEntry& e) {
  AttackTrace t;
  t.id = s.id;
  t.attacker = attacker;
  t.initial = s.chars;
  t.flips = e.flips;
  t.scores = e.scores;
  t.estimate = e.cum;
  return t;
}

struct Candidate {
  double cum;
  std::size_t entry;
  std::size_t pos;
  CharId target;
};

inline bool better(const Candidate& a, const Candidate& b) {
  if (a.cum != b.cum) return a.cum > b.cum;
  if (a.entry != b.entry) return a.entry < b.entry;
  if (a.pos != b.pos) return a.pos < b.pos;
  return a.target < b.target;
}

}  // namespace detail

/// Passes beam_search is declared to spend, from the per-round sizes it
/// records: forward = 1 + sum(beam_r + scored_r), backward = sum(beam_r).
inline BudgetSnapshot beam_declared_cost(const AttackTrace& t) {
  BudgetSnapshot b;
  b.forward = 1;
  for (const auto& r : t.rounds) {
    b.forward += r.at("beam").get<std::uint64_t>() + r.at("scored").get<std::uint64_t>();
    b.backward += r.at("beam").get<std::uint64_t>();
  }
  return b;
}

/// Beam search over flip sequences ranked by cumulative first-order estimate.
/// Each round expands every beam entry (one gradient each), keeps the top-K
/// distinct children, and scores each survivor with one forward pass for the
/// stop rule. Rounds continue until a survivor satisfies the rule or
/// max_flips rounds have run.
template <class T>
AttackTrace beam_search(const source::SourceModel<T>& model, const Sentence& s, const BeamOptions& opt,
                        BudgetMeter& meter, const std::string& name = "") {
  if (opt.beam == 0) throw std::invalid_argument("beam size must be at least 1");
  AttackClock clock(meter);
  const std::size_t max_flips = opt.max_flips ? opt.max_flips : default_max_flips(s.chars.size());
  const std::string attacker = name.empty() ? "hotflip-" + std::to_string(opt.beam) : name;
  const double p0 = source::score(model, s.chars, meter);
  std::vector<BeamEntry> beam{{s.chars, {}, {p0}, 0.0, p0}};
  AttackTrace out;
  if (opt.stop.satisfied(p0)) {
    out = detail::trace_of(s, attacker, beam[0]);
    out.success = true;
    clock.finish(out);
    return out;
  }
  nlohmann::json rounds = nlohmann::json::array();
  for (std::size_t r = 1; r <= max_flips; ++r) {
    std::vector<detail::Candidate> cands;
    for (std::size_t e = 0; e < beam.size(); ++e) {
      auto fs = flip_scores(model, beam[e].chars, s.label, meter);
      if (!opt.allow_reflip) detail::block_flipped(fs, beam[e].flips);
      for (std::size_t i = 0; i < fs.m; ++i)
        for (CharId c = 0; c < fs.v; ++c)
          if (fs.at(i, c) != kExcluded) cands.push_back({beam[e].cum + fs.at(i, c), e, i, c});
    }
    // Ordering the best few is enough unless deduplication eats into them.
    std::size_t sorted = std::min(cands.size(), 4 * opt.beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(sorted), cands.end(),
                      detail::better);
    std::vector<BeamEntry> next;
    for (std::size_t k = 0; k < cands.size() && next.size() < opt.beam; ++k) {
      if (k == sorted) {
        std::sort(cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(), detail::better);
        sorted = cands.size();
      }
      const auto& c = cands[k];
      BeamEntry child = beam[c.entry];
      child.chars[c.pos] = c.target;
      bool dup = false;
      for (const auto& x : next) dup = dup || x.chars == child.chars;
      if (dup) continue;
      child.flips.push_back({c.pos, c.target});
      child.cum = c.cum;
      next.push_back(std::move(child));
    }
    for (auto& e : next) {
      e.tox = source::score(model, e.chars, meter);
      e.scores.push_back(e.tox);
    }
    if (next.empty()) {
      rounds.push_back({{"beam", beam.size()}, {"scored", 0}});
      beam.clear();
      break;
    }
    rounds.push_back({{"beam", beam.size()}, {"scored", next.size()}, {"best_estimate", next[0].cum}});
    beam = std::move(next);
    const BeamEntry* best = nullptr;
    for (const auto& e : beam)
      if (opt.stop.satisfied(e.tox) && (!best || e.tox < best->tox)) best = &e;
    if (best) {
      out = detail::trace_of(s, attacker, *best);
      out.success = true;
      out.rounds = rounds;
      clock.finish(out);
      return out;
    }
  }
  if (beam.empty()) {
    out = detail::trace_of(s, attacker, {s.chars, {}, {p0}, 0.0, p0});
    out.failure = "no admissible flips";
  } else {
    const BeamEntry* best = &beam[0];
    for (const auto& e : beam)
      if (e.tox < best->tox) best = &e;
    out = detail::trace_of(s, attacker, *best);
    out.failure = "max_flips reached";
  }
  out.rounds = rounds;
  clock.finish(out);
  return out;
}

struct PlusOptions {
  std::size_t beam = 3;
  std::size_t prune_width = 32;  // cap per beam entry; 0 = no cap
  bool prune = true;             // compare against the beam's minimum score
  std::size_t max_flips = 0;     // 0 = default_max_flips(length)
  bool allow_reflip = true;
  StopRule stop = StopRule::prediction_flipped();
};

/// Gradient-pruned, forward-rescored search. Every round expands all beam
/// entries; a child survives pruning if its cumulative estimate beats the
/// lowest cumulative estimate in the current beam (at most prune_width per
/// entry, best estimates first). Survivors are scored by a forward pass and
/// the next beam keeps the lowest toxicities. The attack ends when the
/// least toxic entry satisfies the stop rule.
template <class T>
AttackTrace hotflip_plus(const source::SourceModel<T>& model, const Sentence& s, const PlusOptions& opt,
                         BudgetMeter& meter, const std::string& name = "hotflip-plus") {
  if (opt.beam == 0) throw std::invalid_argument("beam size must be at least 1");
  AttackClock clock(meter);
  const std::size_t max_flips = opt.max_flips ? opt.max_flips : default_max_flips(s.chars.size());
  const double p0 = source::score(model, s.chars, meter);
  std::vector<BeamEntry> beam{{s.chars, {}, {p0}, 0.0, p0}};
  nlohmann::json rounds = nlohmann::json::array();
  auto least_toxic = [](const std::vector<BeamEntry>& b) {
    const BeamEntry* best = &b[0];
    for (const auto& e : b)
      if (e.tox < best->tox) best = &e;
    return best;
  };
  AttackTrace out;
  for (std::size_t r = 0;; ++r) {
    const BeamEntry* best = least_toxic(beam);
    if (opt.stop.satisfied(best->tox)) {
      out = detail::trace_of(s, name, *best);
      out.success = true;
      break;
    }
    if (r == max_flips) {
      out = detail::trace_of(s, name, *best);
      out.failure = "max_flips reached";
      break;
    }
    double min_score = beam[0].cum;
    for (const auto& e : beam) min_score = std::min(min_score, e.cum);
    std::vector<BeamEntry> next;
    std::size_t evaluated = 0;
    for (std::size_t e = 0; e < beam.size(); ++e) {
      auto fs = flip_scores(model, beam[e].chars, s.label, meter);
      if (!opt.allow_reflip) detail::block_flipped(fs, beam[e].flips);
      std::vector<detail::Candidate> cands;
      for (std::size_t i = 0; i < fs.m; ++i)
        for (CharId c = 0; c < fs.v; ++c) {
          if (fs.at(i, c) == kExcluded) continue;
          const double cum = beam[e].cum + fs.at(i, c);
          if (!opt.prune || cum > min_score) cands.push_back({cum, e, i, c});
        }
      if (opt.prune_width > 0 && cands.size() > opt.prune_width) {
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(opt.prune_width),
                          cands.end(), detail::better);
        cands.resize(opt.prune_width);
        std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
          return a.pos != b.pos ? a.pos < b.pos : a.target < b.target;
        });
      }
      for (const auto& c : cands) {
        BeamEntry child = beam[e];
        child.chars[c.pos] = c.target;
        bool dup = false;
        for (const auto& x : next) dup = dup || x.chars == child.chars;
        if (dup) continue;
        const double tox = source::score(model, child.chars, meter);
        ++evaluated;
        child.flips.push_back({c.pos, c.target});
        child.scores.push_back(tox);
        child.cum = c.cum;
        child.tox = tox;
        if (next.size() < opt.beam) {
          next.push_back(std::move(child));
          continue;
        }
        std::size_t worst = 0;
        for (std::size_t k = 1; k < next.size(); ++k)
          if (next[k].tox >= next[worst].tox) worst = k;
        if (tox < next[worst].tox) next[worst] = std::move(child);
      }
    }
    rounds.push_back({{"beam", beam.size()}, {"scored", evaluated}});
    if (next.empty()) {
      out = detail::trace_of(s, name, *best);
      out.failure = "every candidate pruned";
      break;
    }
    beam = std::move(next);
  }
  out.rounds = rounds;
  clock.finish(out);
  return out;
}

}  // namespace distflip::hotflip
