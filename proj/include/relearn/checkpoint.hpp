// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relearn/layers.hpp"
#include "relearn/optim.hpp"

namespace relearn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LayeredModel model;
  SgdState state;
  std::size_t generation = 0;  // generations completed
  std::size_t next_epoch = 0;  // global index of the next epoch to run
  std::string config;          // canonical config text of the producing run
};

/// Header: 8-byte magic, u32 version, u64 payload length, u32 crc32 of the
/// payload. The payload is little-endian with doubles stored bitwise.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// CheckpointError on bad magic, version mismatch, truncation or checksum
/// failure; nothing is returned on failure.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace relearn
