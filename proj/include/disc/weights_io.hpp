#pragma once

// Binary weight container, little-endian throughout.
//
// Version 1 (policy weights):
//   "DISCWT\0\0" | u32 version=1 | u32 L | L x (u32 rows, u32 cols) | f32 params in layout order
//
// Version 2 (model checkpoints):
//   "DISCWT\0\0" | u32 version=2 | u32 N | u32 len, kind tag | u32 len, metadata JSON
//   | N x (u32 len, name | u32 elem_bytes (4 or 8) | u32 rank | rank x u32 dims | u64 data offset)
//   | data region (offsets are relative to its start)

#include "disc/nn.hpp"
#include "disc/policy.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace disc {

inline constexpr char kWeightMagic[8] = {'D', 'I', 'S', 'C', 'W', 'T', '\0', '\0'};

std::vector<std::uint8_t> serialize_params(const PolicyParams& theta);
PolicyParams deserialize_params(std::span<const std::uint8_t> bytes);

void save_policy(const std::filesystem::path& path, const PolicyParams& theta);
PolicyParams load_policy(const std::filesystem::path& path);

struct Checkpoint {
    std::string kind;
    std::string metadata;   // JSON text describing how to rebuild the model
    std::vector<std::pair<std::string, Matrix>> sections;
};

/// elem_bytes 8 keeps the parameters bit-exact; 4 stores them as f32.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck, int elem_bytes = 8);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

Checkpoint checkpoint_from(const ParamSet& params, std::string kind, std::string metadata);
/// Copies sections into same-named parameters; names and shapes must match exactly.
void restore_params(ParamSet& params, const Checkpoint& ck);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

} // namespace disc
