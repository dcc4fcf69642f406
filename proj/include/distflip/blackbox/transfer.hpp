#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/blackbox/client.hpp"
#include "distflip/core/parallel.hpp"
#include "distflip/hotflip/trace.hpp"

namespace distflip::blackbox {

using corpus::Sentence;
using hotflip::AttackTrace;

/// Local attack on sentence `index`; must not touch the remote endpoint.
using LocalAttack = std::function<AttackTrace(const Sentence&, std::size_t index)>;

struct TransferRecord {
  std::string id;
  std::string text_before, text_after;
  std::size_t flips = 0;
  bool source_success = false;
  double source_before = 0, source_after = 0;
  std::optional<double> before, after;  // remote scores
  std::string error;                    // set when the sentence is excluded

  bool evaluated() const { return before && after; }
};

struct TransferResult {
  std::vector<TransferRecord> records;
  std::size_t evaluated = 0;
  std::size_t exclusions = 0;
  std::size_t toxic_before = 0;  // evaluated and labeled toxic before the attack
  // aggregates over evaluated records; empty when undefined
  std::optional<double> mean_before, mean_after, mean_flips;
  std::optional<double> label_flip_rate;         // remote toxic -> uncertain or non-toxic
  std::optional<double> source_label_flip_rate;  // same rule on the source scores
  std::size_t api_calls = 0;

  /// "toxicity 0.90 -> 0.67, 5.0 flips, label flipped 42%"
  std::string headline() const {
    if (!mean_before) return "no evaluated sentences";
    char buf[160];
    std::snprintf(buf, sizeof buf, "toxicity %.2f -> %.2f, %.1f flips, label flipped %s", *mean_before,
                  *mean_after, *mean_flips,
                  label_flip_rate ? (std::to_string(static_cast<int>(*label_flip_rate * 100 + 0.5)) + "%").c_str()
                                  : "n/a");
    return buf;
  }
};

/// Fraction of records toxic under `before` that are no longer toxic under `after`.
template <class Get>
std::optional<double> label_flip_rate(const std::vector<const TransferRecord*>& recs, Get before, Get after) {
  std::size_t toxic = 0, flipped = 0;
  for (const auto* r : recs) {
    if (label(before(*r)) != Label::toxic) continue;
    ++toxic;
    flipped += label(after(*r)) != Label::toxic;
  }
  if (!toxic) return std::nullopt;
  return static_cast<double>(flipped) / static_cast<double>(toxic);
}

inline void summarize(TransferResult& res) {
  std::vector<const TransferRecord*> ok;
  for (const auto& r : res.records)
    if (r.evaluated()) ok.push_back(&r);
  res.evaluated = ok.size();
  res.exclusions = res.records.size() - ok.size();
  res.toxic_before = 0;
  res.mean_before = res.mean_after = res.mean_flips = res.label_flip_rate = res.source_label_flip_rate =
      std::nullopt;
  if (ok.empty()) return;
  double b = 0, a = 0, f = 0;
  for (const auto* r : ok) {
    b += *r->before;
    a += *r->after;
    f += static_cast<double>(r->flips);
    res.toxic_before += label(*r->before) == Label::toxic;
  }
  const double n = static_cast<double>(ok.size());
  res.mean_before = b / n;
  res.mean_after = a / n;
  res.mean_flips = f / n;
  using Pick = double (*)(const TransferRecord&);
  res.label_flip_rate = label_flip_rate<Pick>(ok, [](const TransferRecord& r) { return *r.before; },
                                              [](const TransferRecord& r) { return *r.after; });
  res.source_label_flip_rate = label_flip_rate<Pick>(ok, [](const TransferRecord& r) { return r.source_before; },
                                                     [](const TransferRecord& r) { return r.source_after; });
}

/// Attacks every sentence locally, then asks the endpoint for exactly two
/// scores per sentence: the original text and the attacked text.
inline TransferResult transfer_attack(const LocalAttack& attack, const corpus::Vocab& vocab, ApiClient& client,
                                      const std::vector<Sentence>& sentences, std::size_t threads = 1) {
  TransferResult res;
  const auto traces = parallel_map<AttackTrace>(sentences.size(), threads,
                                                [&](std::size_t i) { return attack(sentences[i], i); });
  const std::size_t calls0 = client.calls();
  res.records = parallel_map<TransferRecord>(sentences.size(), client.config().concurrency, [&](std::size_t i) {
    const auto& t = traces[i];
    TransferRecord r;
    r.id = sentences[i].id;
    r.text_before = vocab.decode_utf8(t.initial);
    r.text_after = vocab.decode_utf8(t.final_chars());
    r.flips = t.flips.size();
    r.source_success = t.success;
    r.source_before = t.scores.front();
    r.source_after = t.scores.back();
    // both calls are made even if the first fails, so the count stays fixed
    for (auto [slot, text] : {std::pair{&r.before, &r.text_before}, std::pair{&r.after, &r.text_after}}) {
      try {
        *slot = client.score(*text);
      } catch (const ApiError& e) {
        if (r.error.empty()) r.error = e.what();
      }
    }
    return r;
  });
  res.api_calls = client.calls() - calls0;
  summarize(res);
  return res;
}

inline nlohmann::json to_json(const TransferRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"id", r.id},
                      {"text_before", r.text_before},
                      {"text_after", r.text_after},
                      {"flips", r.flips},
                      {"source_success", r.source_success},
                      {"source_before", r.source_before},
                      {"source_after", r.source_after},
                      {"before", opt(r.before)},
                      {"after", opt(r.after)},
                      {"evaluated", r.evaluated()}};
  if (r.before) j["label_before"] = label_name(label(*r.before));
  if (r.after) j["label_after"] = label_name(label(*r.after));
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline nlohmann::json summary_json(const TransferResult& res, const nlohmann::json& run_config = nullptr) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"sentences", res.records.size()},
                      {"evaluated", res.evaluated},
                      {"exclusions", res.exclusions},
                      {"toxic_before", res.toxic_before},
                      {"mean_before", opt(res.mean_before)},
                      {"mean_after", opt(res.mean_after)},
                      {"mean_flips", opt(res.mean_flips)},
                      {"label_flip_rate", opt(res.label_flip_rate)},
                      {"source_label_flip_rate", opt(res.source_label_flip_rate)},
                      {"api_calls", res.api_calls},
                      {"headline", res.headline()}};
  if (!run_config.is_null()) j["run_config"] = run_config;
  return j;
}

/// JSON lines: optional run_config record, one record per sentence, then
/// a closing {"summary": ...} record.
inline void write_transfer(const std::string& path, const TransferResult& res,
                           const nlohmann::json& run_config = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  if (!run_config.is_null()) out << nlohmann::json{{"run_config", run_config}}.dump() << '\n';
  for (const auto& r : res.records) out << to_json(r).dump() << '\n';
  out << nlohmann::json{{"summary", summary_json(res)}}.dump() << '\n';
}

}  // namespace distflip::blackbox
