#pragma once

// Binary checkpoint, little-endian:
//
//   "MPNC" | u32 version | u32 n | n bytes of JSON header
//   then until EOF: u32 name_len | name | u32 rank | rank x u32 dims | float32 values
//
// The header is {"arch": ArchConfig, "epochs_trained": int, "seed": int}.
// Values are stored as float32, so a loaded model holds float-rounded doubles
// and re-encoding it reproduces the file byte for byte.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mpn/net.hpp"

namespace mpn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
/// Rejects bad magic, unknown versions, truncation, and tensors whose names
/// or shapes do not match the layout implied by the stored ArchConfig.
ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to float32, i.e. what a save/load cycle produces.
void round_to_float(ModelParams& params);

}  // namespace mpn
