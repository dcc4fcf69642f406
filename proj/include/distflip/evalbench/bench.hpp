#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/core/parallel.hpp"
#include "distflip/corpus/vocab.hpp"
#include "distflip/hotflip/trace.hpp"

namespace distflip::evalbench {

using corpus::Sentence;
using hotflip::AttackTrace;

/// One attack on one sentence. Attackers that need randomness draw from the
/// supplied generator, which is seeded per (attacker, sentence).
using AttackFn = std::function<AttackTrace(const Sentence&, std::mt19937_64&, BudgetMeter&)>;

struct NamedAttacker {
  std::string name;
  AttackFn attack;
};

class UnknownAttacker : public std::invalid_argument {
 public:
  explicit UnknownAttacker(const std::string& name) : std::invalid_argument("unknown attacker '" + name + "'") {}
};

/// Name -> attacker lookup.
class AttackerRegistry {
 public:
  void add(const std::string& name, AttackFn fn) { fns_[name] = std::move(fn); }
  bool contains(const std::string& name) const { return fns_.count(name) > 0; }

  NamedAttacker get(const std::string& name) const {
    auto it = fns_.find(name);
    if (it == fns_.end()) throw UnknownAttacker(name);
    return {name, it->second};
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : fns_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, AttackFn> fns_;
};

/// Mean of the easiest floor(fraction * n) counts. Failures sort last at
/// `cap`, so they only count when the fraction reaches them.
inline double flips_for_fraction(std::vector<std::size_t> counts, const std::vector<bool>& success, double fraction,
                                 std::size_t cap) {
  if (!success.empty() && success.size() != counts.size())
    throw std::invalid_argument("flips_for_fraction: success flags do not match counts");
  if (fraction <= 0 || fraction > 1) throw std::invalid_argument("fraction must lie in (0,1]");
  for (std::size_t i = 0; i < success.size(); ++i)
    if (!success[i]) counts[i] = std::max(counts[i], cap);
  std::sort(counts.begin(), counts.end());
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(counts.size()) + 1e-9));
  if (k == 0) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += static_cast<double>(counts[i]);
  return s / static_cast<double>(k);
}

inline double flips_for_fraction(const std::vector<std::size_t>& counts, double fraction) {
  return flips_for_fraction(counts, {}, fraction, 0);
}

/// surviving[k] = fraction of traces not yet successful after k flips.
inline std::vector<double> survival_curve(const std::vector<AttackTrace>& traces, std::size_t max_k) {
  std::vector<double> out(max_k + 1, 0.0);
  if (traces.empty()) return out;
  for (std::size_t k = 0; k <= max_k; ++k) {
    std::size_t alive = 0;
    for (const auto& t : traces) alive += !(t.success && t.num_flips() <= k);
    out[k] = static_cast<double>(alive) / static_cast<double>(traces.size());
  }
  return out;
}

struct AttackerStats {
  std::string name;
  std::size_t sentences = 0;
  std::size_t successes = 0;
  double success_rate = 0;
  double mean_flips = 0;         // successes only
  double mean_flips_capped = 0;  // failures count at their cap
  double flips_for_85 = 0;
  std::vector<double> survival;
  BudgetSnapshot budget;
  std::uint64_t total_flips = 0;  // capped
  double passes_per_flip = 0;
  double passes_per_attack = 0;
  // relative to the reference attacker
  double flip_slowdown = 1;
  double attack_slowdown = 1;
  // wall-clock (ns); never part of the deterministic report
  double wall_per_attack_ns = 0;
  double wall_per_flip_ns = 0;
  double wall_flip_slowdown = 1;
  double wall_attack_slowdown = 1;
};

struct AttackReport {
  std::vector<AttackerStats> attackers;
  std::vector<std::vector<AttackTrace>> traces;  // parallel to attackers
  std::string reference;
  std::size_t sentences = 0;
  std::size_t max_k = 0;

  const AttackerStats& stats(const std::string& name) const {
    for (const auto& a : attackers)
      if (a.name == name) return a;
    throw UnknownAttacker(name);
  }
};

struct BenchOptions {
  std::string reference;        // empty = first attacker
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t timing_repeats = 0;  // > 0: warm-up run, then median of this many timed runs
  double fraction = 0.85;
  std::size_t flip_cap = 0;  // cap for failed sentences; 0 = the longest sentence's default max_flips
  std::function<void(const std::string&, std::size_t)> on_attack;  // progress hook
};

namespace detail {

inline std::uint64_t job_seed(std::uint64_t seed, const std::string& attacker, std::size_t index) {
  std::uint64_t h = corpus::fnv1a64(attacker) ^ (seed * 0x9E3779B97F4A7C15ULL);
  h ^= index + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  // splitmix finalizer
  h += 0x9E3779B97F4A7C15ULL;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
  return h ^ (h >> 31);
}

inline double ratio(double a, double b) { return b > 0 ? a / b : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

/// Runs every attacker on the same sentence list and reduces the traces.
inline AttackReport run_bench(const std::vector<NamedAttacker>& attackers, const std::vector<Sentence>& sentences,
                              const BenchOptions& opt = {}) {
  if (attackers.empty()) throw std::invalid_argument("no attackers to benchmark");
  AttackReport rep;
  rep.sentences = sentences.size();
  rep.reference = opt.reference.empty() ? attackers.front().name : opt.reference;
  bool have_ref = false;
  for (const auto& a : attackers) have_ref = have_ref || a.name == rep.reference;
  if (!have_ref) throw UnknownAttacker(rep.reference);

  std::size_t cap = opt.flip_cap;
  if (cap == 0)
    for (const auto& s : sentences) cap = std::max(cap, hotflip::default_max_flips(s.chars.size()));

  for (const auto& a : attackers) {
    auto traces = parallel_map<AttackTrace>(sentences.size(), opt.threads, [&](std::size_t i) {
      const std::uint64_t seed = detail::job_seed(opt.seed, a.name, i);
      auto run = [&] {
        std::mt19937_64 rng(seed);
        BudgetMeter meter;
        return a.attack(sentences[i], rng, meter);
      };
      AttackTrace t = run();
      if (opt.timing_repeats > 0) {
        std::vector<std::int64_t> walls;
        for (std::size_t r = 0; r < opt.timing_repeats; ++r) walls.push_back(run().wall_ns);
        std::nth_element(walls.begin(), walls.begin() + static_cast<std::ptrdiff_t>(walls.size() / 2), walls.end());
        t.wall_ns = walls[walls.size() / 2];
      }
      if (opt.on_attack) opt.on_attack(a.name, i);
      return t;
    });
    AttackerStats st;
    st.name = a.name;
    st.sentences = traces.size();
    std::vector<std::size_t> counts;
    std::vector<bool> ok;
    double succ_flips = 0, wall = 0;
    for (const auto& t : traces) {
      counts.push_back(t.num_flips());
      ok.push_back(t.success);
      st.budget += t.budget;
      wall += static_cast<double>(t.wall_ns);
      if (t.success) {
        ++st.successes;
        succ_flips += static_cast<double>(t.num_flips());
      }
      st.total_flips += t.success ? t.num_flips() : std::max(t.num_flips(), cap);
      rep.max_k = std::max(rep.max_k, t.num_flips());
    }
    const double n = static_cast<double>(traces.size());
    if (!traces.empty()) {
      st.success_rate = static_cast<double>(st.successes) / n;
      st.mean_flips = st.successes ? succ_flips / static_cast<double>(st.successes)
                                   : std::numeric_limits<double>::quiet_NaN();
      st.mean_flips_capped = static_cast<double>(st.total_flips) / n;
      st.flips_for_85 = flips_for_fraction(counts, ok, opt.fraction, cap);
      st.passes_per_attack = static_cast<double>(st.budget.total()) / n;
      st.passes_per_flip = detail::ratio(static_cast<double>(st.budget.total()), static_cast<double>(st.total_flips));
      st.wall_per_attack_ns = wall / n;
      st.wall_per_flip_ns = detail::ratio(wall, static_cast<double>(st.total_flips));
    }
    rep.attackers.push_back(std::move(st));
    rep.traces.push_back(std::move(traces));
  }
  for (std::size_t k = 0; k < rep.attackers.size(); ++k) rep.attackers[k].survival = survival_curve(rep.traces[k], rep.max_k);
  const AttackerStats ref = rep.stats(rep.reference);
  for (auto& st : rep.attackers) {
    const double flips_ratio = detail::ratio(st.mean_flips_capped, ref.mean_flips_capped);
    st.flip_slowdown = detail::ratio(st.passes_per_flip, ref.passes_per_flip);
    st.attack_slowdown = st.flip_slowdown * flips_ratio;
    st.wall_flip_slowdown = detail::ratio(st.wall_per_flip_ns, ref.wall_per_flip_ns);
    st.wall_attack_slowdown = st.wall_flip_slowdown * flips_ratio;
  }
  return rep;
}

namespace detail {

/// NaN (e.g. a mean over zero successes) is written as null.
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

/// Deterministic part of the report: everything except wall-clock.
inline nlohmann::json report_to_json(const AttackReport& rep, const nlohmann::json& run_config = nullptr) {
  nlohmann::json atk = nlohmann::json::array();
  for (const auto& s : rep.attackers)
    atk.push_back({{"name", s.name},
                   {"sentences", s.sentences},
                   {"successes", s.successes},
                   {"success_rate", detail::num(s.success_rate)},
                   {"mean_flips", detail::num(s.mean_flips)},
                   {"mean_flips_capped", detail::num(s.mean_flips_capped)},
                   {"flips_for_85", detail::num(s.flips_for_85)},
                   {"survival", s.survival},
                   {"forward_count", s.budget.forward},
                   {"backward_count", s.budget.backward},
                   {"attacker_forward_count", s.budget.attacker_forward},
                   {"passes_per_flip", detail::num(s.passes_per_flip)},
                   {"passes_per_attack", detail::num(s.passes_per_attack)},
                   {"flip_slowdown", detail::num(s.flip_slowdown)},
                   {"attack_slowdown", detail::num(s.attack_slowdown)}});
  nlohmann::json j = {{"reference", rep.reference}, {"sentences", rep.sentences}, {"attackers", atk}};
  if (!run_config.is_null()) j["run_config"] = run_config;
  return j;
}

inline nlohmann::json timing_to_json(const AttackReport& rep, const nlohmann::json& run_config = nullptr) {
  nlohmann::json atk = nlohmann::json::array();
  for (const auto& s : rep.attackers)
    atk.push_back({{"name", s.name},
                   {"wall_per_attack_ms", detail::num(s.wall_per_attack_ns / 1e6)},
                   {"wall_per_flip_ms", detail::num(s.wall_per_flip_ns / 1e6)},
                   {"flip_slowdown", detail::num(s.wall_flip_slowdown)},
                   {"attack_slowdown", detail::num(s.wall_attack_slowdown)}});
  nlohmann::json j = {{"reference", rep.reference}, {"attackers", atk}};
  if (!run_config.is_null()) j["run_config"] = run_config;
  return j;
}

inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  return nlohmann::json(v).dump();
}

inline std::string comment_line(const nlohmann::json& run_config) {
  return run_config.is_null() ? std::string{} : "# run_config " + run_config.dump() + "\n";
}

/// Plot-ready survival curve: k,attacker,surviving_fraction.
inline void write_survival_csv(std::ostream& out, const AttackReport& rep, const nlohmann::json& run_config = nullptr) {
  out << comment_line(run_config) << "k,attacker,surviving_fraction\n";
  for (const auto& s : rep.attackers)
    for (std::size_t k = 0; k < s.survival.size(); ++k) out << k << ',' << s.name << ',' << format_number(s.survival[k]) << '\n';
}

inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols = {
      "attacker",      "sentences",     "success_rate",  "mean_flips",    "mean_flips_capped",
      "flips_for_85",  "forward_count", "backward_count", "attacker_forward_count", "passes_per_flip",
      "flip_slowdown", "attack_slowdown"};
  return cols;
}

inline void write_summary_csv(std::ostream& out, const AttackReport& rep, const nlohmann::json& run_config = nullptr) {
  out << comment_line(run_config);
  const auto& cols = summary_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (const auto& s : rep.attackers)
    out << s.name << ',' << s.sentences << ',' << format_number(s.success_rate) << ',' << format_number(s.mean_flips)
        << ',' << format_number(s.mean_flips_capped) << ',' << format_number(s.flips_for_85) << ',' << s.budget.forward
        << ',' << s.budget.backward << ',' << s.budget.attacker_forward << ',' << format_number(s.passes_per_flip)
        << ',' << format_number(s.flip_slowdown) << ',' << format_number(s.attack_slowdown) << '\n';
}

/// Writes <prefix>.json, <prefix>_summary.csv, <prefix>_survival.csv and
/// <prefix>_timing.json.
inline std::vector<std::string> export_report(const AttackReport& rep, const std::string& prefix,
                                              const nlohmann::json& run_config = nullptr) {
  auto open = [](const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    return f;
  };
  std::vector<std::string> files = {prefix + ".json", prefix + "_summary.csv", prefix + "_survival.csv",
                                    prefix + "_timing.json"};
  open(files[0]) << report_to_json(rep, run_config).dump(2) << '\n';
  {
    auto f = open(files[1]);
    write_summary_csv(f, rep, run_config);
  }
  {
    auto f = open(files[2]);
    write_survival_csv(f, rep, run_config);
  }
  open(files[3]) << timing_to_json(rep, run_config).dump(2) << '\n';
  return files;
}

}  // namespace distflip::evalbench
