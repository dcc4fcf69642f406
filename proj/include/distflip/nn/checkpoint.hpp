#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "distflip/nn/adam.hpp"
#include "distflip/nn/params.hpp"

// Checkpoint layout (all integers little-endian):
//
//   magic      8 bytes  "DFLIPCKP"
//   version    u32      1
//   meta_len   u64
//   meta       meta_len bytes of UTF-8 JSON
//                {"model_kind", "vocab_hash", "hyper", "extra", "optimizer_step"?}
//   count      u64
//   count x entry:
//     name_len u32, name bytes
//     dtype    u8       1 = float32, 2 = float64
//     rank     u32, dims u64[rank]
//     payload  product(dims) values, row-major, IEEE-754 little-endian
//
// Optimizer moments, when saved, are ordinary entries named "adam.m/<param>"
// and "adam.v/<param>".

namespace distflip::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'D', 'F', 'L', 'I', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabMismatch : public CheckpointError {
 public:
  VocabMismatch(const std::string& stored, const std::string& expected)
      : CheckpointError("checkpoint vocabulary hash " + stored +
                        " does not match the active vocabulary " + expected) {}
};

template <class T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 1 : 2;
}

template <class T>
struct Checkpoint {
  ParamSet<T> params;
  std::optional<AdamState<T>> optimizer;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

template <class I>
void put(std::ostream& out, I v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class I>
I get(std::istream& in, const char* what) {
  I v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  return v;
}

template <class T>
void put_tensor(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, dtype_code<T>());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <class S, class T>
void read_payload(std::istream& in, Tensor<T>& t) {
  if constexpr (std::is_same_v<S, T>) {
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    std::vector<S> buf(t.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S)));
    for (std::size_t i = 0; i < buf.size(); ++i) t[i] = static_cast<T>(buf[i]);
  }
  if (!in) throw CheckpointError("truncated tensor payload");
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& out, const Checkpoint<T>& ck) {
  nlohmann::json meta = {{"model_kind", ck.params.meta.model_kind},
                         {"vocab_hash", ck.params.meta.vocab_hash},
                         {"hyper", ck.params.meta.hyper},
                         {"extra", ck.extra}};
  if (ck.optimizer) meta["optimizer_step"] = ck.optimizer->step;
  const std::string meta_s = meta.dump();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, meta_s.size());
  out.write(meta_s.data(), static_cast<std::streamsize>(meta_s.size()));
  std::uint64_t count = ck.params.size();
  if (ck.optimizer) count += ck.optimizer->m.size() + ck.optimizer->v.size();
  detail::put<std::uint64_t>(out, count);
  for (const auto& [name, t] : ck.params.tensors()) detail::put_tensor(out, name, t);
  if (ck.optimizer) {
    for (const auto& [name, t] : ck.optimizer->m) detail::put_tensor(out, "adam.m/" + name, t);
    for (const auto& [name, t] : ck.optimizer->v) detail::put_tensor(out, "adam.v/" + name, t);
  }
}

/// Parses a checkpoint; if `expected_vocab_hash` is given and differs from
/// the stored one, throws VocabMismatch. Stored float32/float64 payloads are
/// converted to T.
template <class T>
Checkpoint<T> read_checkpoint(std::istream& in,
                              const std::optional<std::string>& expected_vocab_hash = {}) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw CheckpointError("not a checkpoint: bad magic bytes");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = detail::get<std::uint64_t>(in, "metadata length");
  if (meta_len > (1u << 26)) throw CheckpointError("implausible metadata length");
  std::string meta_s(meta_len, '\0');
  in.read(meta_s.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw CheckpointError("truncated checkpoint metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_s);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  Checkpoint<T> ck;
  ck.params.meta.model_kind = meta.value("model_kind", "");
  ck.params.meta.vocab_hash = meta.value("vocab_hash", "");
  ck.params.meta.hyper = meta.value("hyper", nlohmann::json::object());
  ck.extra = meta.value("extra", nlohmann::json::object());
  if (expected_vocab_hash && *expected_vocab_hash != ck.params.meta.vocab_hash)
    throw VocabMismatch(ck.params.meta.vocab_hash, *expected_vocab_hash);
  if (meta.contains("optimizer_step")) {
    ck.optimizer.emplace();
    ck.optimizer->step = meta["optimizer_step"].get<long>();
  }
  const auto count = detail::get<std::uint64_t>(in, "entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = detail::get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw CheckpointError("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto dtype = detail::get<std::uint8_t>(in, "dtype");
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    if (rank == 0 || rank > 8) throw CheckpointError("implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(in, "dims");
    Tensor<T> t(shape);
    if (dtype == 1) {
      detail::read_payload<float>(in, t);
    } else if (dtype == 2) {
      detail::read_payload<double>(in, t);
    } else {
      throw CheckpointError("unknown dtype code " + std::to_string(dtype) + " for '" + name + "'");
    }
    if (name.rfind("adam.m/", 0) == 0 || name.rfind("adam.v/", 0) == 0) {
      if (!ck.optimizer) ck.optimizer.emplace();
      auto& dst = name[5] == 'm' ? ck.optimizer->m : ck.optimizer->v;
      dst.insert_or_assign(name.substr(7), std::move(t));
    } else {
      if (ck.params.contains(name)) throw CheckpointError("duplicate tensor '" + name + "'");
      ck.params.set(name, std::move(t));
    }
  }
  return ck;
}

template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(out, ck);
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

template <class T>
void save_checkpoint(const ParamSet<T>& params, const std::string& path) {
  save_checkpoint(Checkpoint<T>{params, std::nullopt, nlohmann::json::object()}, path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path,
                              const std::optional<std::string>& expected_vocab_hash = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint<T>(in, expected_vocab_hash);
}

}  // namespace distflip::nn
