#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "distflip/corpus/sentence.hpp"

namespace distflip::corpus {

/// Trigger words, one per line (UTF-8). Blank lines and '#' comments ignored.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::vector<std::string> words) {
    for (auto& w : words)
      if (!w.empty()) words_.insert(std::move(w));
    if (words_.empty()) throw std::invalid_argument("trigger lexicon is empty");
  }

  static Lexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trigger lexicon '" + path + "'");
    std::vector<std::string> words;
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      words.push_back(line);
    }
    return Lexicon(std::move(words));
  }

  bool contains(const std::string& w) const { return words_.count(w) != 0; }
  std::vector<std::string> words() const { return {words_.begin(), words_.end()}; }
  std::size_t size() const { return words_.size(); }

 private:
  std::set<std::string> words_;
};

/// Whitespace tokens with leading/trailing ASCII punctuation stripped.
inline std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char c : text) {
    if (c == ' ') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline bool contains_trigger(const std::string& text, const Lexicon& lex) {
  for (const auto& w : word_tokens(text))
    if (lex.contains(w)) return true;
  return false;
}

/// Text with every trigger token removed (spacing re-joined).
inline std::string strip_triggers(const std::string& text, const Lexicon& lex) {
  std::string out, cur;
  auto flush = [&] {
    if (cur.empty()) return;
    auto tok = word_tokens(cur);
    if (tok.empty() || !lex.contains(tok[0])) {
      if (!out.empty()) out.push_back(' ');
      out += cur;
    }
    cur.clear();
  };
  for (char c : text) {
    if (c == ' ') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline const std::vector<std::string>& default_filler() {
  static const std::vector<std::string> words = {
      "the", "a", "this", "that", "you", "we", "they", "it", "is", "are", "was", "be",
      "have", "has", "not", "and", "or", "but", "so", "if", "then", "with", "from", "about",
      "into", "over", "after", "before", "page", "article", "edit", "edits", "source",
      "sources", "talk", "section", "link", "links", "list", "image", "name", "date",
      "history", "please", "thanks", "think", "know", "see", "read", "write", "added",
      "removed", "change", "changed", "revert", "discussion", "point", "view", "fact",
      "facts", "issue", "time", "year", "people", "other", "more", "some", "any", "just",
      "also", "here", "there", "where", "when", "why", "how", "what", "which", "who",
      "good", "new", "old", "first", "last", "same", "right", "wrong", "sure", "maybe",
      "again", "still", "really", "very", "much", "many", "few", "own", "work", "reason",
      "question", "answer", "comment", "reply", "note", "review", "policy", "rule",
      "city", "town", "river", "music", "band", "album", "film", "book", "game", "team",
      "school", "church", "house", "road", "station", "line", "number", "table", "map",
      "version", "template", "category", "reference", "citation", "claim"};
  return words;
}

struct SynthOptions {
  std::size_t n = 2000;
  double toxic_fraction = 0.5;
  std::size_t min_words = 4;  // total words per sentence, triggers included
  std::size_t max_words = 8;
  std::size_t min_triggers = 1;
  std::size_t max_triggers = 3;
  std::string id_prefix = "synth-";
};

/// Random filler sentences; exactly round(n * toxic_fraction) of them get
/// 1..max_triggers trigger words at random word positions and label 1.
inline std::vector<Sentence> synth_corpus(std::uint64_t seed, const SynthOptions& opt,
                                          const Lexicon& lex, const Vocab& vocab) {
  if (opt.toxic_fraction < 0 || opt.toxic_fraction > 1)
    throw std::invalid_argument("toxic fraction must lie in [0,1]");
  if (opt.min_words == 0 || opt.min_words > opt.max_words || opt.min_triggers == 0 ||
      opt.min_triggers > opt.max_triggers || opt.max_triggers > opt.min_words)
    throw std::invalid_argument("inconsistent synthetic corpus word counts");
  const auto triggers = lex.words();
  std::vector<std::string> filler;
  for (const auto& w : default_filler()) {
    bool clash = false;
    for (const auto& t : triggers) clash = clash || w.find(t) != std::string::npos;
    if (!clash) filler.push_back(w);
  }

  std::mt19937_64 rng(seed);
  const auto n_toxic = static_cast<std::size_t>(std::llround(opt.toxic_fraction * static_cast<double>(opt.n)));
  std::vector<int> labels(opt.n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_toxic), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<std::size_t> n_words(opt.min_words, opt.max_words);
  std::uniform_int_distribution<std::size_t> n_trig(opt.min_triggers, opt.max_triggers);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_trigger(0, triggers.size() - 1);
  static const char* kEnds[] = {"", "", ".", "!", "?"};
  std::uniform_int_distribution<std::size_t> pick_end(0, 4);

  const std::size_t width = std::to_string(opt.n).size();
  std::vector<Sentence> out;
  out.reserve(opt.n);
  for (std::size_t k = 0; k < opt.n; ++k) {
    const std::size_t w = n_words(rng);
    std::vector<std::string> words(w);
    for (auto& x : words) x = filler[pick_filler(rng)];
    if (labels[k] == 1) {
      std::vector<std::size_t> slots(w);
      for (std::size_t i = 0; i < w; ++i) slots[i] = i;
      std::shuffle(slots.begin(), slots.end(), rng);
      const std::size_t t = std::min(n_trig(rng), w);
      for (std::size_t i = 0; i < t; ++i) words[slots[i]] = triggers[pick_trigger(rng)];
    }
    std::string text;
    for (std::size_t i = 0; i < w; ++i) {
      if (i) text.push_back(' ');
      text += words[i];
    }
    text += kEnds[pick_end(rng)];
    std::string id = std::to_string(k);
    id = opt.id_prefix + std::string(width - id.size(), '0') + id;
    out.push_back(make_sentence(std::move(id), text, labels[k], vocab, TextOptions{}));
  }
  return out;
}

}  // namespace distflip::corpus
