#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "zarm/params.hpp"

namespace zarm {

// Checkpoint layout: magic "ZARM", u32 version, u64 config hash, u32 tensor
// count, then per tensor: u32 path length + path bytes, u32 rank, u64 dims,
// raw little-endian float32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params,
                     std::uint64_t config_hash,
                     const std::vector<Tensor<S>>* values = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("ZARM", 4);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(out, config_hash);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<S>& p = params[i];
    const Tensor<S>& t = values ? (*values)[i] : p.value;
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.path.size()));
    out.write(p.path.data(), static_cast<std::streamsize>(p.path.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::write_pod<std::uint64_t>(out, d);
    for (S x : t.v) detail::write_pod<float>(out, static_cast<float>(x));
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

// Loads into an existing store; every tensor's path and shape must match the
// store built from the current config.
template <typename S>
void load_checkpoint(const std::string& path, ParamStore<S>& params,
                     std::uint64_t expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ZARM", 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto hash = detail::read_pod<std::uint64_t>(in);
  if (hash != expected_config_hash)
    throw ConfigError("checkpoint config hash mismatch (checkpoint was written with a "
                      "different model configuration)");
  const auto count = detail::read_pod<std::uint32_t>(in);
  if (count != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                      std::to_string(params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto path_len = detail::read_pod<std::uint32_t>(in);
    std::string tpath(path_len, '\0');
    in.read(tpath.data(), path_len);
    const auto rank = detail::read_pod<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_pod<std::uint64_t>(in);
    Parameter<S>* p = params.find(tpath);
    if (!p) throw ConfigError("checkpoint tensor not in model: " + tpath);
    if (p->value.shape != shape)
      throw ConfigError("shape mismatch for " + tpath + ": checkpoint " + shape_str(shape) +
                        " vs model " + shape_str(p->value.shape));
    for (S& x : p->value.v) x = static_cast<S>(detail::read_pod<float>(in));
  }
}

}  // namespace zarm
