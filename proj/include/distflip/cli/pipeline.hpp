#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distflip/blackbox/mock.hpp"
#include "distflip/blackbox/transfer.hpp"
#include "distflip/cli/config.hpp"
#include "distflip/corpus/csv.hpp"
#include "distflip/corpus/split.hpp"
#include "distflip/corpus/synth.hpp"
#include "distflip/distill/train.hpp"
#include "distflip/evalbench/attackers.hpp"
#include "distflip/source/train.hpp"

#ifndef DISTFLIP_DATA_DIR
#define DISTFLIP_DATA_DIR "data"
#endif

namespace distflip::cli {

/// Scalar type of every model the pipeline trains.
using Real = float;

/// A stage input does not exist yet (exit code 3).
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& path, const std::string& producer)
      : std::runtime_error("'" + path + "' not found; run " + producer + " first") {}
};

/// File names inside out_dir.
namespace files {
inline const std::string corpus = "corpus.csv";
inline const std::string heldout = "heldout.csv";
inline const std::string source = "source.ckpt";
inline const std::string source_metrics = "source_metrics.json";
inline const std::string mock_source = "mock_source.ckpt";
inline const std::string mock_source_metrics = "mock_source_metrics.json";
inline const std::string pairs = "pairs.jsonl";
inline const std::string gen_metrics = "gen_metrics.json";
inline const std::string attacker = "attacker.ckpt";
inline const std::string attacker_metrics = "attacker_metrics.json";
inline const std::string bench = "bench";  // prefix
inline const std::string transfer = "transfer.jsonl";
inline const std::string transfer_random = "transfer_random.jsonl";
inline const std::string transfer_summary = "transfer_summary.json";
}  // namespace files

using Log = std::function<void(const std::string&)>;

inline Log stderr_log() {
  return [](const std::string& line) { std::cerr << line << std::endl; };
}

/// Independent stream for each pipeline role, all derived from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& role) {
  std::uint64_t h = corpus::fnv1a64(role) ^ (seed + 0x9E3779B97F4A7C15ULL);
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
  return h ^ (h >> 31);
}

inline std::string require(const RunConfig& c, const std::string& file, const std::string& producer) {
  const auto p = c.path(file);
  if (!std::filesystem::exists(p)) throw MissingArtifact(p, producer);
  return p;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline corpus::Vocab config_vocab(const RunConfig& c) {
  return corpus::build_vocab({corpus::utf8_decode(c.corpus.charset)});
}

inline corpus::TextOptions text_options(const RunConfig& c) {
  corpus::TextOptions t;
  t.lowercase = c.corpus.lowercase;
  t.max_chars = c.corpus.max_chars;
  return t;
}

inline std::string triggers_path(const RunConfig& c) {
  return c.corpus.triggers.empty() ? std::string(DISTFLIP_DATA_DIR) + "/triggers.txt" : c.corpus.triggers;
}

inline corpus::SplitSpec corpus_split(const RunConfig& c) { return {0.8, 0.1, 0.1, derive_seed(c.seed, "split")}; }

inline std::vector<corpus::Sentence> read_corpus(const std::string& path, const corpus::Vocab& vocab,
                                                 const RunConfig& c) {
  corpus::IngestOptions opt;
  opt.text = text_options(c);
  return corpus::ingest_csv(path, vocab, opt).sentences;
}

inline void write_corpus(const std::string& path, const std::vector<corpus::Sentence>& s, const RunConfig& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  corpus::write_csv(out, s, {}, "run_config " + to_json(c).dump());
}

// --- synth-corpus ----------------------------------------------------------

/// Writes the training corpus (synthetic, or a normalized copy of
/// corpus.csv) and a separately seeded synthetic held-out set.
inline nlohmann::json synth_corpus_stage(const RunConfig& c, const Log& log = stderr_log()) {
  std::filesystem::create_directories(c.out_dir);
  const auto vocab = config_vocab(c);
  const auto lex = corpus::Lexicon::load(triggers_path(c));
  std::vector<corpus::Sentence> train;
  std::string origin = "synthetic";
  if (!c.corpus.csv.empty()) {
    corpus::IngestOptions opt;
    opt.text = text_options(c);
    auto res = corpus::ingest_csv(c.corpus.csv, vocab, opt);
    for (const auto& w : res.summary.warnings) log("skipped " + w);
    train = std::move(res.sentences);
    origin = c.corpus.csv;
  } else {
    corpus::SynthOptions so;
    so.n = c.corpus.n;
    so.toxic_fraction = c.corpus.toxic_fraction;
    train = corpus::synth_corpus(derive_seed(c.seed, "corpus"), so, lex, vocab);
  }
  corpus::SynthOptions ho;
  ho.n = c.corpus.heldout_n;
  ho.toxic_fraction = c.corpus.toxic_fraction;
  ho.id_prefix = "held-";
  const auto held = corpus::synth_corpus(derive_seed(c.seed, "heldout"), ho, lex, vocab);
  write_corpus(c.path(files::corpus), train, c);
  write_corpus(c.path(files::heldout), held, c);
  std::size_t toxic = 0;
  for (const auto& s : train) toxic += static_cast<std::size_t>(s.label);
  log("corpus: " + std::to_string(train.size()) + " sentences (" + std::to_string(toxic) + " toxic), held-out " +
      std::to_string(held.size()));
  return {{"origin", origin}, {"sentences", train.size()}, {"toxic", toxic}, {"heldout", held.size()}};
}

// --- train-source ----------------------------------------------------------

/// `independent` trains the mock endpoint's model: same data and split,
/// seed shifted by mock.seed_offset.
inline nlohmann::json train_source_stage(const RunConfig& c, bool independent = false, const Log& log = stderr_log()) {
  const auto vocab = config_vocab(c);
  const auto data = read_corpus(require(c, files::corpus, "synth-corpus"), vocab, c);
  const auto parts = corpus::split(data, corpus_split(c));
  const std::uint64_t seed = derive_seed(independent ? c.seed + c.mock.seed_offset : c.seed, "source");
  source::SourceConfig cfg{c.source.embed_dim, c.source.hidden, c.source.layers};
  source::SourceTrainHyper hyper;
  hyper.epochs = c.source.epochs;
  hyper.batch = c.source.batch;
  hyper.adam.lr = c.source.lr;
  hyper.seed = seed;
  auto res = source::train_source(source::init_source<Real>(vocab, cfg, seed), parts.train, parts.val, hyper,
                                  [&](const nlohmann::json& e) { log("train-source " + e.dump()); });
  const auto test = source::evaluate(res.model, parts.test);
  const nlohmann::json metrics = {{"run_config", to_json(c)},
                                  {"independent", independent},
                                  {"model_seed", seed},
                                  {"train", parts.train.size()},
                                  {"val", parts.val.size()},
                                  {"test", parts.test.size()},
                                  {"history", res.history},
                                  {"test_auc", test.auc},
                                  {"test_accuracy", test.accuracy},
                                  {"test_loss", test.loss}};
  source::save_source(res.model, c.path(independent ? files::mock_source : files::source),
                      nlohmann::json{{"run_config", to_json(c)}, {"test_auc", test.auc}},
                      std::optional<nn::AdamState<Real>>(res.optimizer));
  write_json(c.path(independent ? files::mock_source_metrics : files::source_metrics), metrics);
  log("train-source: test AUC " + std::to_string(test.auc));
  return metrics;
}

inline source::SourceModel<Real> load_source_model(const RunConfig& c) {
  return source::load_source<Real>(require(c, files::source, "train-source"));
}

// --- gen-data --------------------------------------------------------------

/// Toxic training-split sentences, in corpus order, at most gen_limit.
inline std::vector<corpus::Sentence> generation_inputs(const RunConfig& c, const corpus::Vocab& vocab) {
  const auto data = read_corpus(require(c, files::corpus, "synth-corpus"), vocab, c);
  std::vector<corpus::Sentence> out;
  for (auto& s : corpus::split(data, corpus_split(c)).train)
    if (s.label == 1 && (c.attack.gen_limit == 0 || out.size() < c.attack.gen_limit)) out.push_back(std::move(s));
  return out;
}

inline nlohmann::json gen_data_stage(const RunConfig& c, const Log& log = stderr_log()) {
  const auto model = load_source_model(c);
  const auto inputs = generation_inputs(c, model.vocab);
  distill::GeneratorSpec gen;
  gen.name = c.attack.generator;
  gen.max_flips = c.attack.max_flips;
  gen.prune_width = c.attack.prune_width;
  const auto data = distill::generate_dataset(model, inputs, gen, c.attack.tau, c.threads);
  const std::string replay = distill::check_replay(data.pairs, data.traces);
  if (!replay.empty()) throw std::runtime_error("generated pairs fail replay: " + replay);
  distill::write_pairs(c.path(files::pairs), data.pairs, model.vocab, to_json(c));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : data.failures) failures.push_back({{"id", f.id}, {"reason", f.reason}});
  std::size_t flips = 0;
  for (const auto& t : data.traces) flips += t.flips.size();
  const nlohmann::json metrics = {
      {"run_config", to_json(c)},
      {"generator", gen.name},
      {"tau", c.attack.tau},
      {"inputs", inputs.size()},
      {"attempted", data.attempted},
      {"succeeded", data.traces.size()},
      {"success_rate", data.success_rate()},
      {"pairs", data.pairs.size()},
      {"mean_flips", data.traces.empty() ? nlohmann::json(nullptr)
                                         : nlohmann::json(static_cast<double>(flips) /
                                                          static_cast<double>(data.traces.size()))},
      {"budget", data.budget},
      {"failures", failures}};
  write_json(c.path(files::gen_metrics), metrics);
  log("gen-data: " + std::to_string(data.traces.size()) + "/" + std::to_string(data.attempted) + " traces, " +
      std::to_string(data.pairs.size()) + " pairs");
  return metrics;
}

// --- train-attacker --------------------------------------------------------

inline distill::AttackerConfig attacker_config(const RunConfig& c) {
  return {c.attacker.embed_dim, c.attacker.hidden, c.attacker.position_head, c.attacker.target_head};
}

inline nlohmann::json train_attacker_stage(const RunConfig& c, const Log& log = stderr_log()) {
  const auto model = load_source_model(c);
  const auto pairs = distill::read_pairs(require(c, files::pairs, "gen-data"), model.vocab);
  const auto parts = distill::split_pairs(pairs, {0.8, 0.1, 0.1, derive_seed(c.seed, "pairs-split")});
  const std::uint64_t seed = derive_seed(c.seed, "attacker");
  std::optional<std::string> embeddings;
  if (!c.attacker.embeddings.empty()) embeddings = c.attacker.embeddings;
  auto init = distill::init_attacker<Real>(model.vocab, attacker_config(c), seed, embeddings);
  distill::AttackerTrainHyper hyper;
  hyper.epochs = c.attacker.epochs;
  hyper.batch = c.attacker.batch;
  hyper.adam.lr = c.attacker.lr;
  hyper.seed = seed;
  auto res = distill::train_attacker(std::move(init), parts.train, parts.val, hyper,
                                     [&](const nlohmann::json& e) { log("train-attacker " + e.dump()); });
  const auto val = distill::evaluate_pairs(res.model, parts.val);
  const auto test = distill::evaluate_pairs(res.model, parts.test);
  const nlohmann::json metrics = {{"run_config", to_json(c)},
                                  {"train_pairs", parts.train.size()},
                                  {"val_pairs", parts.val.size()},
                                  {"test_pairs", parts.test.size()},
                                  {"history", res.history},
                                  {"val", distill::to_json(val)},
                                  {"test", distill::to_json(test)}};
  distill::save_attacker(res.model, c.path(files::attacker), {{"run_config", to_json(c)}});
  write_json(c.path(files::attacker_metrics), metrics);
  log("train-attacker: val top-5 position " + std::to_string(val.top5_position));
  return metrics;
}

// --- attack / bench --------------------------------------------------------

/// Held-out sentences labeled toxic and scored toxic by the source model.
inline std::vector<corpus::Sentence> heldout_toxic(const RunConfig& c, const source::SourceModel<Real>& model,
                                                   std::size_t limit) {
  const auto held = read_corpus(require(c, files::heldout, "synth-corpus"), model.vocab, c);
  std::vector<corpus::Sentence> out;
  BudgetMeter scratch;
  for (const auto& s : held) {
    if (limit && out.size() >= limit) break;
    if (s.label == 1 && source::score(model, s, scratch) >= 0.5) out.push_back(s);
  }
  return out;
}

inline evalbench::AttackSettings attack_settings(const RunConfig& c) {
  evalbench::AttackSettings s;
  s.stop = hotflip::StopRule::prob_below(c.attack.stop);
  s.max_flips = c.attack.max_flips;
  s.prune_width = c.attack.prune_width;
  s.plus_beam = c.attack.plus_beam;
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!(item = detail::trim(item)).empty()) out.push_back(item);
  return out;
}

/// Loaded models plus a registry over them. Non-movable: the registry
/// holds references into this object.
struct Arsenal {
  source::SourceModel<Real> source;
  std::optional<distill::AttackerModel<Real>> learned;
  evalbench::AttackSettings settings;
  evalbench::AttackerRegistry registry;

  Arsenal(const RunConfig& c, bool need_learned) : source(load_source_model(c)), settings(attack_settings(c)) {
    if (need_learned) {
      learned = distill::load_attacker<Real>(require(c, files::attacker, "train-attacker"), source.vocab.hash());
    }
    std::map<std::string, const distill::AttackerModel<Real>*> m;
    if (learned) m["distflip"] = &*learned;
    registry = evalbench::standard_registry<Real, Real>(source, m, settings);
  }
  Arsenal(const Arsenal&) = delete;
  Arsenal& operator=(const Arsenal&) = delete;

  evalbench::NamedAttacker get(const std::string& name) const {
    return evalbench::attacker_by_name(registry, name, source, settings);
  }
};

inline bool needs_learned(const std::vector<std::string>& names) {
  return std::find(names.begin(), names.end(), "distflip") != names.end();
}

/// Runs one attacker on one text and returns its trace.
inline nlohmann::json attack_text_stage(const RunConfig& c, const std::string& attacker, const std::string& text) {
  Arsenal a(c, attacker == "distflip");
  const auto s = corpus::make_sentence("cli", text, 1, a.source.vocab, text_options(c));
  std::mt19937_64 rng(evalbench::detail::job_seed(derive_seed(c.seed, "bench"), attacker, 0));
  BudgetMeter meter;
  const auto trace = a.get(attacker).attack(s, rng, meter);
  auto j = hotflip::trace_to_json(trace, a.source.vocab);
  j["text_before"] = s.text;
  j["text_after"] = a.source.vocab.decode_utf8(trace.final_chars());
  return j;
}

inline evalbench::AttackReport bench_stage(const RunConfig& c, const Log& log = stderr_log()) {
  const auto names = split_list(c.bench.attackers);
  if (names.empty()) throw ConfigError("bench.attackers is empty");
  Arsenal a(c, needs_learned(names));
  std::vector<evalbench::NamedAttacker> list;
  for (const auto& n : names) list.push_back(a.get(n));
  const auto sentences = heldout_toxic(c, a.source, c.bench.n);
  if (sentences.empty()) throw std::runtime_error("no held-out sentence is toxic under the source model");
  evalbench::BenchOptions opt;
  opt.reference = std::find(names.begin(), names.end(), c.bench.reference) != names.end() ? c.bench.reference : "";
  opt.seed = derive_seed(c.seed, "bench");
  opt.threads = c.threads;
  opt.timing_repeats = c.bench.timing_repeats;
  opt.flip_cap = c.bench.flip_cap;
  std::string current;
  opt.on_attack = [&](const std::string& name, std::size_t) {
    if (name != current) log("bench: running " + (current = name));
  };
  auto rep = evalbench::run_bench(list, sentences, opt);
  evalbench::export_report(rep, c.path(files::bench), to_json(c));
  for (const auto& st : rep.attackers) {
    std::ostringstream line;
    line << "bench: " << st.name << " success " << st.success_rate << " mean flips " << st.mean_flips
         << " passes/attack " << st.passes_per_attack << " slowdown " << st.attack_slowdown;
    log(line.str());
  }
  return rep;
}

// --- blackbox / serve-mock ---------------------------------------------------

inline blackbox::ApiConfig api_config(const RunConfig& c) {
  blackbox::ApiConfig a;
  a.endpoint = c.endpoint.url;
  a.token = c.endpoint.token;
  a.protocol = c.endpoint.protocol;
  a.rate = c.endpoint.rate;
  a.concurrency = c.endpoint.concurrency;
  a.timeout_s = c.endpoint.timeout;
  a.attempts = c.endpoint.attempts;
  return a;
}

struct BlackboxOutcome {
  blackbox::TransferResult attack;
  blackbox::TransferResult random;  // same sentences, each capped at the attack's flip count
};

/// Attacks held-out toxic sentences with the source model as the only
/// oracle, scores before/after remotely, and repeats with the random
/// baseline at the same per-sentence flip budget.
inline BlackboxOutcome blackbox_stage(const RunConfig& c, const Log& log = stderr_log()) {
  Arsenal a(c, c.blackbox.attacker == "distflip");
  const auto primary = a.get(c.blackbox.attacker);
  const auto sentences = heldout_toxic(c, a.source, c.blackbox.n);
  const std::uint64_t seed = derive_seed(c.seed, "blackbox");
  blackbox::ApiClient client(api_config(c));
  BlackboxOutcome out;
  out.attack = blackbox::transfer_attack(
      [&](const corpus::Sentence& s, std::size_t i) {
        std::mt19937_64 rng(evalbench::detail::job_seed(seed, primary.name, i));
        BudgetMeter meter;
        return primary.attack(s, rng, meter);
      },
      a.source.vocab, client, sentences, c.threads);
  out.random = blackbox::transfer_attack(
      [&](const corpus::Sentence& s, std::size_t i) {
        std::mt19937_64 rng(evalbench::detail::job_seed(seed, "random", i));
        BudgetMeter meter;
        // max_flips 0 means "default", so a zero-flip record still allows one
        hotflip::BaselineOptions opt{std::max<std::size_t>(out.attack.records[i].flips, 1), a.settings.stop};
        return hotflip::random_baseline(a.source, s, rng, opt, meter);
      },
      a.source.vocab, client, sentences, c.threads);
  const auto cfg = to_json(c);
  blackbox::write_transfer(c.path(files::transfer), out.attack, cfg);
  blackbox::write_transfer(c.path(files::transfer_random), out.random, cfg);
  write_json(c.path(files::transfer_summary), {{"run_config", cfg},
                                               {"endpoint", blackbox::to_json(client.config())},
                                               {"attacker", c.blackbox.attacker},
                                               {"attack", blackbox::summary_json(out.attack)},
                                               {"random_equal_budget", blackbox::summary_json(out.random)}});
  log("blackbox " + c.blackbox.attacker + ": " + out.attack.headline());
  log("blackbox random (equal budget): " + out.random.headline());
  return out;
}

inline std::string mock_checkpoint(const RunConfig& c) {
  if (!c.mock.checkpoint.empty()) {
    if (!std::filesystem::exists(c.mock.checkpoint)) throw MissingArtifact(c.mock.checkpoint, "train-source");
    return c.mock.checkpoint;
  }
  return require(c, files::mock_source, "train-source --independent");
}

inline blackbox::Scorer mock_scorer(const RunConfig& c) {
  return blackbox::model_scorer(
      std::make_shared<const source::SourceModel<Real>>(source::load_source<Real>(mock_checkpoint(c))));
}

}  // namespace distflip::cli
