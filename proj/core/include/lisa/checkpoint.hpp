#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lisa/tensor.hpp"

namespace lisa {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Everything needed to resume training bit-for-bit. The binary layout is
/// little-endian: magic "LISA-CKPT\0", u32 version, u64 step, u64 optimizer
/// steps, then length-prefixed strings (config JSON, RNG state) and three
/// tensor tables (parameters, first moments, second moments) plus one of
/// normalization buffers. Tensors are stored as f64.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t step = 0;
  std::uint64_t optimizer_steps = 0;
  std::string config_json;
  std::string rng_state;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> first_moments;
  std::vector<NamedTensor> second_moments;
  std::vector<NamedTensor> buffers;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError with the byte offset of the first bad field.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lisa
