#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grlab/policy.hpp"

namespace grlab {

// Binary layout, all integers and floats little-endian:
//   "GRLB" | u32 format_version | u32 kind | i32 vocab_size | i32 max_seq_len
//   | i32 embed_dim | i32 num_layers | i32 num_heads | i32 ffn_dim
//   | u64 params_version | u64 count | count x f64 values
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const PolicyParams& params);

// Throws std::runtime_error on bad magic, unsupported version, truncation or
// an architecture/length mismatch.
PolicyParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Write-then-rename; a crash never leaves a partial file at path.
void save_checkpoint(const std::filesystem::path& path,
                     const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace grlab
