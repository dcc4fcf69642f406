#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "distflip/corpus/text.hpp"
#include "distflip/corpus/vocab.hpp"

namespace distflip::corpus {

struct Sentence {
  std::string id;
  std::string text;  // normalized; equals vocab.decode_utf8(chars)
  std::vector<CharId> chars;
  int label = 0;  // 1 = toxic

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Normalizes `raw`, maps non-members to OOV and encodes. Throws
/// std::invalid_argument if nothing is left.
inline Sentence make_sentence(std::string id, std::string_view raw, int label, const Vocab& vocab,
                              const TextOptions& opt = {}) {
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  std::u32string norm = vocab.canonical(normalize(raw, opt));
  if (norm.empty()) throw std::invalid_argument("empty text after normalization");
  Sentence s;
  s.id = std::move(id);
  s.chars = vocab.encode(norm);
  s.text = utf8_encode(norm);
  s.label = label;
  return s;
}

/// Replaces the character at `pos`; the caller guarantees a valid target.
inline Sentence with_flip(const Sentence& s, std::size_t pos, CharId target, const Vocab& vocab) {
  Sentence out = s;
  out.chars.at(pos) = target;
  out.text = vocab.decode_utf8(out.chars);
  return out;
}

inline void validate(const Sentence& s, const Vocab& vocab) {
  if (s.chars.empty()) throw std::invalid_argument("sentence '" + s.id + "' is empty");
  for (CharId c : s.chars)
    if (c >= vocab.size())
      throw std::invalid_argument("sentence '" + s.id + "' holds index " + std::to_string(c) +
                                  " outside the vocabulary");
}

}  // namespace distflip::corpus
