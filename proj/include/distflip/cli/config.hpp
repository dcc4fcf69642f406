#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

namespace distflip::cli {

/// Bad key, bad value or unreadable config file (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusSection {
  std::string csv;  // ingest this Jigsaw-style file instead of synthesizing
  std::string triggers;
  std::size_t n = 2000;
  double toxic_fraction = 0.5;
  std::size_t heldout_n = 600;  // separate synthetic draw for attack evaluation
  std::string charset;          // empty = printable ASCII
  bool lowercase = false;
  std::size_t max_chars = 500;
};

struct SourceSection {
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  double lr = 1e-3;
};

struct AttackerSection {
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;
  std::vector<std::size_t> position_head = {100, 50};
  std::vector<std::size_t> target_head = {100, 100};
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::string embeddings;  // optional pretrained character vectors
};

struct AttackSection {
  std::string generator = "hotflip-5";
  double tau = 0.15;
  double stop = 0.5;
  std::size_t max_flips = 0;  // 0 = sentence length, capped at 100
  std::size_t prune_width = 32;
  std::size_t plus_beam = 3;
  std::size_t gen_limit = 0;  // toxic training sentences attacked by gen-data; 0 = all
};

struct BenchSection {
  std::string attackers = "distflip,hotflip-1,hotflip-5,hotflip-10,hotflip-plus,random,attention";
  std::string reference = "distflip";
  std::size_t n = 200;
  std::size_t flip_cap = 0;
  std::size_t timing_repeats = 0;
};

struct EndpointSection {
  std::string url = "http://127.0.0.1:8089/score";
  std::string token;
  std::string protocol = "local";
  double rate = 10;
  std::size_t concurrency = 4;
  double timeout = 10;
  std::size_t attempts = 3;
};

struct MockSection {
  std::string checkpoint;  // default: the second-seed source model
  std::string host = "127.0.0.1";
  int port = 8089;
  std::uint64_t seed_offset = 1000;  // seed of the independent model = seed + offset
};

struct BlackboxSection {
  std::string attacker = "distflip";
  std::size_t n = 100;
};

/// Every knob of the pipeline. All fields have defaults; `desk` is the
/// default profile, `paper` swaps in the large model dimensions.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string profile = "desk";
  std::size_t threads = 1;  // 0 = all hardware threads
  std::string out_dir = "runs";
  CorpusSection corpus;
  SourceSection source;
  AttackerSection attacker;
  AttackSection attack;
  BenchSection bench;
  EndpointSection endpoint;
  MockSection mock;
  BlackboxSection blackbox;

  std::string path(const std::string& file) const { return out_dir + "/" + file; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class V>
V parse_value(const std::string& key, const std::string& raw);

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& raw) {
  return raw;
}

template <>
inline double parse_value<double>(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != raw.size()) throw ConfigError("'" + key + "' expects a number, got '" + raw + "'");
  return v;
}

template <>
inline std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    if (!raw.empty() && raw[0] != '-') v = std::stoull(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != raw.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + raw + "'");
  return v;
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t fields parse as 64-bit integers");

template <>
inline int parse_value<int>(const std::string& key, const std::string& raw) {
  const auto v = parse_value<std::uint64_t>(key, raw);
  if (v > 65535) throw ConfigError("'" + key + "' is out of range");
  return static_cast<int>(v);
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + raw + "'");
}

template <>
inline std::vector<std::size_t> parse_value<std::vector<std::size_t>>(const std::string& key,
                                                                      const std::string& raw) {
  std::vector<std::size_t> out;
  std::stringstream ss(raw);
  for (std::string part; std::getline(ss, part, ',');) out.push_back(parse_value<std::size_t>(key, trim(part)));
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

struct Binding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

template <class V>
Binding top(std::string key, V RunConfig::*field) {
  return {key, [key, field](RunConfig& c, const std::string& raw) { c.*field = parse_value<V>(key, raw); },
          [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
}

template <class S, class V>
Binding nested(std::string key, S RunConfig::*section, V S::*field) {
  return {key,
          [key, section, field](RunConfig& c, const std::string& raw) {
            (c.*section).*field = parse_value<V>(key, raw);
          },
          [section, field](const RunConfig& c) { return nlohmann::json((c.*section).*field); }};
}

}  // namespace detail

/// The documented key set, in serialization order.
inline const std::vector<detail::Binding>& bindings() {
  using detail::nested;
  using detail::top;
  using R = RunConfig;
  static const std::vector<detail::Binding> b = {
      top("seed", &R::seed),
      top("threads", &R::threads),
      top("out_dir", &R::out_dir),
      nested("corpus.csv", &R::corpus, &CorpusSection::csv),
      nested("corpus.triggers", &R::corpus, &CorpusSection::triggers),
      nested("corpus.n", &R::corpus, &CorpusSection::n),
      nested("corpus.toxic_fraction", &R::corpus, &CorpusSection::toxic_fraction),
      nested("corpus.heldout_n", &R::corpus, &CorpusSection::heldout_n),
      nested("corpus.charset", &R::corpus, &CorpusSection::charset),
      nested("corpus.lowercase", &R::corpus, &CorpusSection::lowercase),
      nested("corpus.max_chars", &R::corpus, &CorpusSection::max_chars),
      nested("source.embed_dim", &R::source, &SourceSection::embed_dim),
      nested("source.hidden", &R::source, &SourceSection::hidden),
      nested("source.layers", &R::source, &SourceSection::layers),
      nested("source.epochs", &R::source, &SourceSection::epochs),
      nested("source.batch", &R::source, &SourceSection::batch),
      nested("source.lr", &R::source, &SourceSection::lr),
      nested("attacker.embed_dim", &R::attacker, &AttackerSection::embed_dim),
      nested("attacker.hidden", &R::attacker, &AttackerSection::hidden),
      nested("attacker.position_head", &R::attacker, &AttackerSection::position_head),
      nested("attacker.target_head", &R::attacker, &AttackerSection::target_head),
      nested("attacker.epochs", &R::attacker, &AttackerSection::epochs),
      nested("attacker.batch", &R::attacker, &AttackerSection::batch),
      nested("attacker.lr", &R::attacker, &AttackerSection::lr),
      nested("attacker.embeddings", &R::attacker, &AttackerSection::embeddings),
      nested("attack.generator", &R::attack, &AttackSection::generator),
      nested("attack.tau", &R::attack, &AttackSection::tau),
      nested("attack.stop", &R::attack, &AttackSection::stop),
      nested("attack.max_flips", &R::attack, &AttackSection::max_flips),
      nested("attack.prune_width", &R::attack, &AttackSection::prune_width),
      nested("attack.plus_beam", &R::attack, &AttackSection::plus_beam),
      nested("attack.gen_limit", &R::attack, &AttackSection::gen_limit),
      nested("bench.attackers", &R::bench, &BenchSection::attackers),
      nested("bench.reference", &R::bench, &BenchSection::reference),
      nested("bench.n", &R::bench, &BenchSection::n),
      nested("bench.flip_cap", &R::bench, &BenchSection::flip_cap),
      nested("bench.timing_repeats", &R::bench, &BenchSection::timing_repeats),
      nested("endpoint.url", &R::endpoint, &EndpointSection::url),
      nested("endpoint.token", &R::endpoint, &EndpointSection::token),
      nested("endpoint.protocol", &R::endpoint, &EndpointSection::protocol),
      nested("endpoint.rate", &R::endpoint, &EndpointSection::rate),
      nested("endpoint.concurrency", &R::endpoint, &EndpointSection::concurrency),
      nested("endpoint.timeout", &R::endpoint, &EndpointSection::timeout),
      nested("endpoint.attempts", &R::endpoint, &EndpointSection::attempts),
      nested("mock.checkpoint", &R::mock, &MockSection::checkpoint),
      nested("mock.host", &R::mock, &MockSection::host),
      nested("mock.port", &R::mock, &MockSection::port),
      nested("mock.seed_offset", &R::mock, &MockSection::seed_offset),
      nested("blackbox.attacker", &R::blackbox, &BlackboxSection::attacker),
      nested("blackbox.n", &R::blackbox, &BlackboxSection::n),
  };
  return b;
}

/// Resets the model dimensions to a named profile. Other keys are untouched.
inline void apply_profile(RunConfig& c, const std::string& name) {
  if (name == "desk") {
    c.source.embed_dim = 32;
    c.source.hidden = 64;
    c.attacker.embed_dim = 32;
    c.attacker.hidden = 64;
  } else if (name == "paper") {
    c.source.embed_dim = 300;
    c.source.hidden = 512;
    c.attacker.embed_dim = 300;
    c.attacker.hidden = 512;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
  }
  c.profile = name;
}

inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "profile") return apply_profile(c, value);
  for (const auto& b : bindings())
    if (b.key == key) return b.set(c, value);
  throw ConfigError("unknown config key '" + key + "'");
}

/// "key=value" as given on the command line.
inline void set_assignment(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  set_key(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

/// Key-value text: `key = value` lines, `[section]` headers prefix the keys
/// that follow, `#` starts a comment, values may be double-quoted. A
/// `profile` line is applied before every other key, wherever it appears.
inline void parse_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  struct Item {
    std::string where, key, value;
  };
  std::vector<Item> items;
  std::istringstream in(text);
  std::string section;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    // quotes protect '#' inside values
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    items.push_back({where, key, value});
  }
  // profile first so explicit dimensions in the same file win
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& it : items) {
      if ((it.key == "profile") != (pass == 0)) continue;
      try {
        set_key(c, it.key, it.value);
      } catch (const ConfigError& e) {
        throw ConfigError(it.where + e.what());
      }
    }
}

inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(c, ss.str(), path);
}

/// Provenance record embedded in outputs. The endpoint token is withheld.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"profile", c.profile}};
  for (const auto& b : bindings()) {
    if (b.key == "endpoint.token") {
      j[b.key] = c.endpoint.token.empty() ? "" : "<set>";
      continue;
    }
    j[b.key] = b.get(c);
  }
  return j;
}

/// The same keys as a config file that parses back to `c` (token excluded).
inline std::string to_config_text(const RunConfig& c) {
  std::ostringstream out;
  out << "profile = " << c.profile << '\n';
  for (const auto& b : bindings()) {
    if (b.key == "endpoint.token") continue;
    const auto v = b.get(c);
    std::string text;
    if (v.is_string()) {
      text = '"' + v.get<std::string>() + '"';
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) text += (i ? "," : "") + v[i].dump();
    } else {
      text = v.dump();
    }
    out << b.key << " = " << text << '\n';
  }
  return out.str();
}

inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(c.corpus.n >= 10, "corpus.n must be at least 10");
  need(c.corpus.toxic_fraction > 0 && c.corpus.toxic_fraction < 1, "corpus.toxic_fraction must lie in (0,1)");
  need(c.source.embed_dim && c.source.hidden && c.source.layers, "source dimensions must be positive");
  need(c.source.batch && c.attacker.batch, "batch sizes must be positive");
  need(c.source.lr > 0 && c.attacker.lr > 0, "learning rates must be positive");
  need(c.attacker.embed_dim && c.attacker.hidden, "attacker dimensions must be positive");
  need(c.attack.tau > 0 && c.attack.tau < 1, "attack.tau must lie in (0,1)");
  need(c.attack.stop > 0 && c.attack.stop <= 1, "attack.stop must lie in (0,1]");
  need(c.attack.plus_beam > 0, "attack.plus_beam must be positive");
  need(c.endpoint.concurrency > 0 && c.endpoint.attempts > 0, "endpoint concurrency and attempts must be positive");
  need(c.endpoint.rate >= 0 && c.endpoint.timeout > 0, "endpoint rate and timeout must be non-negative");
  need(!c.out_dir.empty(), "out_dir must not be empty");
}

}  // namespace distflip::cli
