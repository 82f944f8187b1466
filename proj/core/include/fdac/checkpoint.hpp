#pragma once

#include "fdac/backbone.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fdac {

// Container layout (all integers little-endian):
//   8 bytes   magic "FDACTNSR"
//   u32       schema_version
//   u64       header length in bytes
//   header    UTF-8 JSON: {"schema_version", "kind", "architecture"?, "meta"?,
//             "arrays": [{"name", "shape": [rows, cols], "dtype": "float32",
//                         "order": "column_major", "offset"}]}
//   payload   float32 little-endian values, offsets relative to payload start
inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

using Bytes = std::vector<std::uint8_t>;

struct Checkpoint {
  BackboneConfig config;
  ModelParams params;
};

Bytes serialize_checkpoint(const BackboneConfig& config, const ModelParams& params);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const BackboneConfig& config,
                     const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Bytes serialize_prototypes(const PrototypeSet& prototypes);
PrototypeSet deserialize_prototypes(std::span<const std::uint8_t> bytes);

// Little-endian float32 encoding shared by every payload.
void append_float32(Bytes& out, double value);
float read_float32(std::span<const std::uint8_t> bytes, std::size_t offset);

}  // namespace fdac
