#pragma once

#include <random>
#include <string>
#include <vector>

#include "distflip/corpus/sentence.hpp"
#include "distflip/source/model.hpp"

namespace distflip::testing {

/// 7 member characters + OOV = 8 indices.
inline corpus::Vocab toy_vocab(std::size_t members = 7) {
  std::u32string chars;
  for (std::size_t i = 0; i < members; ++i) chars.push_back(static_cast<char32_t>(U'a' + i));
  return corpus::Vocab(chars);
}

template <class T = double>
source::SourceModel<T> tiny_source(const corpus::Vocab& vocab, std::uint64_t seed,
                                   source::SourceConfig cfg = {4, 3, 2}) {
  auto m = source::init_source<T>(vocab, cfg, seed);
  // widen the output layer so probabilities move visibly under flips
  for (auto& v : m.params.at("out.0.W").values()) v *= T{8};
  return m;
}

/// Random members only (never OOV).
inline corpus::Sentence random_sentence(const corpus::Vocab& vocab, std::size_t m, std::mt19937_64& rng,
                                        const std::string& id = "s", int label = 1) {
  std::uniform_int_distribution<corpus::CharId> pick(0, vocab.oov() - 1);
  corpus::Sentence s;
  s.id = id;
  s.label = label;
  for (std::size_t i = 0; i < m; ++i) s.chars.push_back(pick(rng));
  s.text = vocab.decode_utf8(s.chars);
  return s;
}

}  // namespace distflip::testing
