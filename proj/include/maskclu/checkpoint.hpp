#pragma once

#include <filesystem>
#include <string>

#include "maskclu/layers.hpp"

namespace maskclu {

// Binary layout, all integers and reals little-endian:
//   8 bytes  magic "MCLUCKPT"
//   u32      version (1)
//   u32      parameter count
//   per parameter:
//     u32 name length, name bytes (UTF-8, no terminator)
//     u32 rank, rank x u64 extents
//     product(extents) x f64 values
inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'L', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_parameters(const NamedParameters& params);
/// Copies stored values into `params` in place. Names, order and shapes must
/// match exactly; any difference is a ConfigError, malformed bytes a FormatError.
void deserialize_parameters(std::string_view bytes, const NamedParameters& params);

void save_checkpoint(const std::filesystem::path& path, const NamedParameters& params);
void load_checkpoint(const std::filesystem::path& path, const NamedParameters& params);

}  // namespace maskclu
