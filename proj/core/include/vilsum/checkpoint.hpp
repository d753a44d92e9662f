#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vilsum/tensor.hpp"

namespace vilsum {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout: "VLSM" magic, u32 version, then a CRC-protected payload:
/// u32 config byte length + canonical key=value config text, followed by
/// tensor records [u16 name len | name | u8 rank | u32 dims... | float32
/// data, little-endian], with a trailing u32 CRC-32 of the payload.
struct CheckpointData {
  std::map<std::string, std::string> config;                 // sorted = canonical
  std::vector<std::pair<std::string, Tensor>> tensors;       // saved order preserved
};

/// Writes to a temp file in the target directory, then renames into place.
void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);

/// Throws CheckpointError: BadMagic, VersionMismatch, or Corrupt (bad CRC,
/// truncation, malformed records).
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace vilsum
