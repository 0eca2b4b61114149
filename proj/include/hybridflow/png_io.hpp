#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hybridflow/types.hpp"

namespace hybridflow {

/// Raw decoded PNG samples. Values are stored widened to 16 bits regardless of
/// the source bit depth; `bit_depth` records what the file carried.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray), 3 (RGB) or 4 (RGBA)
  int bit_depth = 8;  // 1, 8 or 16
  std::vector<std::uint16_t> samples;  // interleaved, row-major

  std::uint16_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

std::vector<std::uint8_t> encode_png(const PngImage& image);
PngImage decode_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames into place.
void write_file_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

PngImage frame_to_png(const Frame& frame);
Frame frame_from_png(const PngImage& image);
void write_frame_png(const std::filesystem::path& path, const Frame& frame);
Frame read_frame_png(const std::filesystem::path& path);

/// Masks are stored as 1-bit grayscale.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

}  // namespace hybridflow
