#pragma once

// Checkpoint files (little-endian):
//
//   "MMAE"  u32 version
//   u32 n, n bytes      config text
//   u64 step            optimizer steps taken
//   u64 seed            run seed; every random stream derives from (seed, step)
//   u32 count           tensor records, sorted by name:
//     u32 n, n bytes    name
//     u8 dtype          0 = f32
//     u32 rank, rank x u64 extents
//     f32 values
//
// Optimizer moments are stored as "adam.m/<param>" and "adam.v/<param>".

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "multimae/byte_io.hpp"
#include "multimae/optim.hpp"
#include "multimae/params.hpp"

namespace multimae {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr const char* kAdamMPrefix = "adam.m/";
inline constexpr const char* kAdamVPrefix = "adam.v/";

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, StoredTensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw("MMAE");
  w.u32(kCheckpointVersion);
  w.str(ckpt.config_text);
  w.u64(ckpt.step);
  w.u64(ckpt.seed);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) throw ContractError("checkpoint tensor '" + name + "' shape/data mismatch");
    w.str(name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) w.u64(e);
    for (float v : t.values) w.f32(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what = "checkpoint") {
  ByteReader r(bytes, what);
  r.expect_magic("MMAE");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(what + ": unsupported version " + std::to_string(version) + " (this build reads version " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config_text = r.str();
  ckpt.step = r.u64();
  ckpt.seed = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) r.fail("unknown dtype tag " + std::to_string(dtype) + " for '" + name + "'");
    StoredTensor t;
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<std::size_t>(r.u64()));
      if (t.shape.back() == 0) r.fail("zero extent in '" + name + "'");
      n *= t.shape.back();
    }
    if (n > r.remaining() / 4) r.take(n * 4);  // reports the truncation
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second) r.fail("duplicate tensor name");
  }
  if (!r.at_end()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file_bytes(path, encode_checkpoint(ckpt)); }

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path), path); }

template <typename T>
StoredTensor store_tensor(const Tensor<T>& t) {
  return {t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

template <typename T>
void store_params(Checkpoint& ckpt, const ParamMap<T>& params) {
  for (const auto& [name, t] : params) ckpt.tensors[name] = store_tensor(t);
}

template <typename T>
void store_adam(Checkpoint& ckpt, const ParamMap<T>& params, const AdamWState<T>& state) {
  for (const auto& [name, p] : params) {
    auto it = state.m.find(name);
    if (it == state.m.end()) continue;
    ckpt.tensors[kAdamMPrefix + name] = {p.shape(), std::vector<float>(it->second.begin(), it->second.end())};
    const auto& v = state.v.at(name);
    ckpt.tensors[kAdamVPrefix + name] = {p.shape(), std::vector<float>(v.begin(), v.end())};
  }
}

/// Parameters (everything outside the optimizer namespace) as trainable tensors.
template <typename T>
ParamMap<T> restore_params(const Checkpoint& ckpt) {
  ParamMap<T> out;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(kAdamMPrefix, 0) == 0 || name.rfind(kAdamVPrefix, 0) == 0) continue;
    out.emplace(name, Tensor<T>::from_data(t.shape, std::vector<T>(t.values.begin(), t.values.end()), true));
  }
  return out;
}

template <typename T>
AdamWState<T> restore_adam(const Checkpoint& ckpt) {
  AdamWState<T> state;
  state.step = ckpt.step;
  const std::string mp = kAdamMPrefix, vp = kAdamVPrefix;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(mp, 0) == 0) state.m[name.substr(mp.size())].assign(t.values.begin(), t.values.end());
    if (name.rfind(vp, 0) == 0) state.v[name.substr(vp.size())].assign(t.values.begin(), t.values.end());
  }
  return state;
}

}  // namespace multimae
