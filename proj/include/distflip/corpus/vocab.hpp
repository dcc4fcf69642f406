#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "distflip/corpus/text.hpp"

namespace distflip::corpus {

using CharId = std::size_t;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct VocabConfig {
  // Member characters in index order; empty selects printable ASCII 0x20..0x7E.
  std::u32string charset;
};

/// Character inventory. Member characters occupy [0, n), the OOV index is n
/// and size() == n + 1. The pad index is size(): it has an embedding row but
/// is never produced by encode, never a flip target and never an attacker
/// output class.
class Vocab {
 public:
  explicit Vocab(std::u32string chars) : chars_(std::move(chars)) {
    if (chars_.empty()) throw std::invalid_argument("vocabulary needs at least one character");
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (chars_[i] == kReplacementChar)
        throw std::invalid_argument("U+FFFD is reserved for the OOV index");
      if (!index_.emplace(chars_[i], i).second)
        throw std::invalid_argument("duplicate character in vocabulary");
    }
  }

  std::size_t size() const noexcept { return chars_.size() + 1; }
  CharId oov() const noexcept { return chars_.size(); }
  CharId pad() const noexcept { return chars_.size() + 1; }
  /// Rows of an embedding table indexed by this vocabulary (pad included).
  std::size_t embedding_rows() const noexcept { return size() + 1; }

  bool contains(char32_t c) const { return index_.count(c) != 0; }

  CharId encode(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? oov() : it->second;
  }

  char32_t decode(CharId i) const {
    if (i < chars_.size()) return chars_[i];
    if (i == oov()) return kReplacementChar;
    throw std::out_of_range("character index " + std::to_string(i) + " has no surface form");
  }

  std::vector<CharId> encode(std::u32string_view s) const {
    std::vector<CharId> out;
    out.reserve(s.size());
    for (char32_t c : s) out.push_back(encode(c));
    return out;
  }

  std::u32string decode(const std::vector<CharId>& ids) const {
    std::u32string out;
    out.reserve(ids.size());
    for (CharId i : ids) out.push_back(decode(i));
    return out;
  }

  std::string decode_utf8(const std::vector<CharId>& ids) const { return utf8_encode(decode(ids)); }

  /// Text with every non-member character replaced by U+FFFD, i.e. what
  /// decode(encode(s)) returns.
  std::u32string canonical(std::u32string s) const {
    for (auto& c : s)
      if (!contains(c)) c = kReplacementChar;
    return s;
  }

  /// Allowed flip targets: members only (pad and OOV excluded).
  bool is_flip_target(CharId i) const noexcept { return i < chars_.size(); }

  const std::u32string& chars() const noexcept { return chars_; }

  /// Stable fingerprint of the index assignment.
  std::string hash() const {
    std::uint64_t h = fnv1a64(utf8_encode(chars_));
    h = fnv1a64("|oov|pad", h);
    return hex64(h);
  }

 private:
  std::u32string chars_;
  std::unordered_map<char32_t, CharId> index_;
};

inline std::u32string printable_ascii() {
  std::u32string s;
  for (char32_t c = 0x20; c <= 0x7E; ++c) s.push_back(c);
  return s;
}

inline Vocab build_vocab(const VocabConfig& cfg = {}) {
  return Vocab(cfg.charset.empty() ? printable_ascii() : cfg.charset);
}

}  // namespace distflip::corpus
