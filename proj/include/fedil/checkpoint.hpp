#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedil/model.hpp"

namespace fedil {

// Binary layout, all little-endian:
//   bytes 0..3   magic "FDIL"
//   bytes 4..7   format version (u32)
//   bytes 8..15  parameter count (u64)
//   then count * f64
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderSize = 16;

std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params);
ParamVector decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

/// JSON rendering for inspection: magic, version, param_count, arch, values
/// and (when non-empty) the config hash of the producing run.
std::string checkpoint_json(const ParamVector& params, const ModelArch& arch,
                            const std::string& config_hash = {});

}  // namespace fedil
