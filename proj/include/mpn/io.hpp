#pragma once

// File formats.
//
//   .flo   "PIEH", int32 width, int32 height, then H*W float32 (dx, dy) pairs,
//          little-endian. In memory flows are (dy, dx); the conversion happens here.
//   images 8- or 16-bit grayscale PNG or binary PGM (P5), normalised to [0, 1].
//          Spacing comes from an optional sidecar `<stem>.json` holding
//          {"spacing_mm": [row, col]}.
//   masks  8-bit grayscale PNG holding raw label values {0, 1, 2, 3}.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpn/grid.hpp"

namespace mpn {

std::vector<std::uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(const std::vector<std::uint8_t>& bytes);
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

/// Loads a PNG or PGM; applies the sidecar spacing when present.
Image read_image(const std::filesystem::path& path);
void write_png16(const std::filesystem::path& path, const Image& img);
void write_png8(const std::filesystem::path& path, const Image& img);
void write_pgm16(const std::filesystem::path& path, const Image& img);

void write_spacing_sidecar(const std::filesystem::path& image_path, Spacing spacing);
/// Spacing from `<stem>.json` next to the image, or (1, 1) when absent.
Spacing read_spacing_sidecar(const std::filesystem::path& image_path);

void write_mask_png(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_mask_png(const std::filesystem::path& path);

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mpn
