#pragma once

#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/core/parallel.hpp"
#include "distflip/corpus/split.hpp"
#include "distflip/hotflip/search.hpp"

namespace distflip::distill {

using corpus::Sentence;

/// One supervised step: the sentence before a flip and the flip taken.
struct FlipPair {
  std::vector<CharId> chars;
  FlipAction flip;
  std::string trace_id;
  std::size_t step = 0;
  std::string generator;

  friend bool operator==(const FlipPair&, const FlipPair&) = default;
};

inline nlohmann::json pair_to_json(const FlipPair& p, const Vocab& vocab) {
  return {{"text", vocab.decode_utf8(p.chars)},
          {"pos", p.flip.pos},
          {"target_char", corpus::utf8_encode(std::u32string(1, vocab.decode(p.flip.target)))},
          {"trace_id", p.trace_id},
          {"step", p.step},
          {"generator", p.generator}};
}

inline FlipPair pair_from_json(const nlohmann::json& j, const Vocab& vocab) {
  FlipPair p;
  p.chars = vocab.encode(corpus::utf8_decode(j.at("text").get<std::string>()));
  p.flip = {j.at("pos").get<std::size_t>(), hotflip::char_from_json(j.at("target_char"), vocab)};
  p.trace_id = j.at("trace_id").get<std::string>();
  p.step = j.at("step").get<std::size_t>();
  p.generator = j.at("generator").get<std::string>();
  if (p.flip.pos >= p.chars.size()) throw std::invalid_argument("pair position outside its sentence");
  return p;
}

/// Every consecutive pair of sentences in the trace, in order.
inline std::vector<FlipPair> pairs_from_trace(const hotflip::AttackTrace& t) {
  std::vector<FlipPair> out;
  auto x = t.initial;
  for (std::size_t k = 0; k < t.flips.size(); ++k) {
    out.push_back({x, t.flips[k], t.id, k, t.attacker});
    x.at(t.flips[k].pos) = t.flips[k].target;
  }
  return out;
}

/// White-box attacker used to produce supervision: "hotflip-K" or "hotflip-plus".
struct GeneratorSpec {
  std::string name = "hotflip-5";
  std::size_t max_flips = 0;
  std::size_t prune_width = 32;

  /// Beam width; 0 for hotflip-plus.
  std::size_t beam() const {
    if (name == "hotflip-plus") return 0;
    const std::string prefix = "hotflip-";
    if (name.rfind(prefix, 0) != 0) throw std::invalid_argument("unknown generator '" + name + "'");
    std::size_t used = 0;
    std::size_t k = 0;
    try {
      k = std::stoul(name.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("unknown generator '" + name + "'");
    }
    if (k == 0 || used != name.size() - prefix.size()) throw std::invalid_argument("unknown generator '" + name + "'");
    return k;
  }
};

template <class T>
hotflip::AttackTrace run_generator(const source::SourceModel<T>& model, const Sentence& s, const GeneratorSpec& g,
                                   const hotflip::StopRule& stop, BudgetMeter& meter) {
  const std::size_t k = g.beam();
  if (k == 0) {
    hotflip::PlusOptions opt;
    opt.prune_width = g.prune_width;
    opt.max_flips = g.max_flips;
    opt.stop = stop;
    return hotflip::hotflip_plus(model, s, opt, meter);
  }
  hotflip::BeamOptions opt;
  opt.beam = k;
  opt.max_flips = g.max_flips;
  opt.stop = stop;
  return hotflip::beam_search(model, s, opt, meter);
}

struct GenerationFailure {
  std::string id;
  std::string reason;
};

struct GeneratedData {
  std::vector<FlipPair> pairs;
  std::vector<hotflip::AttackTrace> traces;  // successful ones, input order
  std::vector<GenerationFailure> failures;
  std::size_t attempted = 0;
  BudgetSnapshot budget;

  double success_rate() const {
    return attempted ? static_cast<double>(traces.size()) / static_cast<double>(attempted) : 0.0;
  }
};

/// Attacks each sentence until the source probability drops below `tau` and
/// keeps the pairs of successful traces. Sentences not labeled and scored
/// toxic are recorded as failures, not attacked.
template <class T>
GeneratedData generate_dataset(const source::SourceModel<T>& model, const std::vector<Sentence>& sentences,
                               const GeneratorSpec& gen, double tau = 0.15, std::size_t threads = 1) {
  struct Job {
    hotflip::AttackTrace trace;
    std::string skip;
    BudgetSnapshot cost;
  };
  const auto stop = hotflip::StopRule::prob_below(tau);
  auto jobs = parallel_map<Job>(sentences.size(), threads, [&](std::size_t i) {
    const Sentence& s = sentences[i];
    BudgetMeter meter;
    Job job;
    if (s.label != 1) {
      job.skip = "not labeled toxic";
    } else if (source::score(model, s.chars, meter) < 0.5) {
      job.skip = "not scored toxic";
    } else {
      job.trace = run_generator(model, s, gen, stop, meter);
    }
    job.cost = meter.snapshot();
    return job;
  });
  GeneratedData out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& job = jobs[i];
    out.budget += job.cost;
    if (!job.skip.empty()) {
      out.failures.push_back({sentences[i].id, job.skip});
      continue;
    }
    ++out.attempted;
    if (!job.trace.success) {
      out.failures.push_back({sentences[i].id, job.trace.failure});
      continue;
    }
    for (auto& p : pairs_from_trace(job.trace)) out.pairs.push_back(std::move(p));
    out.traces.push_back(std::move(job.trace));
  }
  return out;
}

/// Replays each trace's pairs in step order. Returns an empty string when
/// every pair chains onto the next and each trace ends at its final text,
/// else a description of the first mismatch.
inline std::string check_replay(const std::vector<FlipPair>& pairs, const std::vector<hotflip::AttackTrace>& traces) {
  std::map<std::string, const hotflip::AttackTrace*> by_id;
  for (const auto& t : traces) by_id[t.id] = &t;
  std::map<std::string, std::vector<const FlipPair*>> grouped;
  for (const auto& p : pairs) grouped[p.trace_id].push_back(&p);
  for (const auto& [id, ps] : grouped) {
    auto it = by_id.find(id);
    if (it == by_id.end()) return "pairs reference unknown trace '" + id + "'";
    const auto& t = *it->second;
    if (ps.size() != t.flips.size()) return "trace '" + id + "' has a different number of pairs than flips";
    auto x = t.initial;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (ps[k]->step != k) return "trace '" + id + "' pairs out of order";
      if (ps[k]->chars != x) return "trace '" + id + "' step " + std::to_string(k) + " does not chain";
      x.at(ps[k]->flip.pos) = ps[k]->flip.target;
    }
    if (x != t.final_chars()) return "trace '" + id + "' does not reach its final text";
  }
  return {};
}

/// An optional first record {"run_config": ...} describes how the file was made.
inline void write_pairs(std::ostream& out, const std::vector<FlipPair>& pairs, const Vocab& vocab,
                        const nlohmann::json& run_config = nullptr) {
  if (!run_config.is_null()) out << nlohmann::json{{"run_config", run_config}}.dump() << '\n';
  for (const auto& p : pairs) out << pair_to_json(p, vocab).dump() << '\n';
}

inline void write_pairs(const std::string& path, const std::vector<FlipPair>& pairs, const Vocab& vocab,
                        const nlohmann::json& run_config = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_pairs(out, pairs, vocab, run_config);
}

inline std::vector<FlipPair> read_pairs(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<FlipPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (lineno == 1 && j.is_object() && j.contains("run_config")) continue;
      out.push_back(pair_from_json(j, vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// 80/10/10 by trace id: all steps of one trace land in the same part.
inline corpus::Splits<FlipPair> split_pairs(const std::vector<FlipPair>& pairs, const corpus::SplitSpec& spec) {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  for (const auto& p : pairs)
    if (index.emplace(p.trace_id, ids.size()).second) ids.push_back(p.trace_id);
  const auto parts = corpus::assign_parts(ids, spec);
  corpus::Splits<FlipPair> out;
  for (const auto& p : pairs) {
    switch (parts[index.at(p.trace_id)]) {
      case corpus::Part::train: out.train.push_back(p); break;
      case corpus::Part::val: out.val.push_back(p); break;
      case corpus::Part::test: out.test.push_back(p); break;
    }
  }
  return out;
}

}  // namespace distflip::distill
