#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "distflip/corpus/sentence.hpp"

namespace distflip::corpus {

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
};

enum class Part : int { train = 0, val = 1, test = 2 };

inline std::uint64_t split_key(const std::string& id, std::uint64_t seed) {
  std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&seed), sizeof seed));
  h = fnv1a64(id, h);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

/// Assigns each id to a part. Ids are ranked by a seeded hash; the first
/// n - round(n*val) - round(n*test) go to train, then val, then test. The
/// assignment depends only on the id set and the seed, never on input order.
inline std::vector<Part> assign_parts(const std::vector<std::string>& ids, const SplitSpec& spec) {
  if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must be positive and sum to 1");
  const std::size_t n = ids.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<std::uint64_t> key(n);
  for (std::size_t i = 0; i < n; ++i) key[i] = split_key(ids[i], spec.seed);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return key[a] != key[b] ? key[a] < key[b] : ids[a] < ids[b];
  });
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test * static_cast<double>(n)));
  const std::size_t n_train = n - std::min(n, n_val + n_test);
  std::vector<Part> parts(n);
  for (std::size_t r = 0; r < n; ++r)
    parts[order[r]] = r < n_train ? Part::train : (r < n_train + n_val ? Part::val : Part::test);
  return parts;
}

template <class Item>
struct Splits {
  std::vector<Item> train, val, test;
};

/// Splits sentences; each part keeps input order. Duplicate ids are rejected.
inline Splits<Sentence> split(const std::vector<Sentence>& sentences, const SplitSpec& spec) {
  std::vector<std::string> ids;
  ids.reserve(sentences.size());
  std::set<std::string> seen;
  for (const auto& s : sentences) {
    if (!seen.insert(s.id).second) throw std::invalid_argument("duplicate sentence id '" + s.id + "'");
    ids.push_back(s.id);
  }
  const auto parts = assign_parts(ids, spec);
  Splits<Sentence> out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto& dst = parts[i] == Part::train ? out.train : (parts[i] == Part::val ? out.val : out.test);
    dst.push_back(sentences[i]);
  }
  return out;
}

}  // namespace distflip::corpus
