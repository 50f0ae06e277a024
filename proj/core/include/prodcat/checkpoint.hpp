#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prodcat/tensor.hpp"

namespace prodcat {

/// Binary layout (all integers little-endian):
///
///   "PRODCKPT"  u32 format_version  u64 config_hash  u32 block_count
///   per block:  u32 name_len  name  u32 rank  u64 dims[rank]  f32 data[volume]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<NamedTensor> blocks;

  const Tensor& find(std::string_view name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(std::span<const Parameter* const> params, std::uint64_t config_hash);
/// Copies block values into same-named parameters. Every parameter must be
/// present with an identical shape.
void restore(const Checkpoint& ckpt, std::span<Parameter* const> params);

/// 64-bit FNV-1a; stable across processes and platforms.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace prodcat
