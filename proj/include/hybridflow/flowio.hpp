#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hybridflow/png_io.hpp"
#include "hybridflow/types.hpp"

namespace hybridflow {

// Middlebury .flo: float magic 202021.25, int32 width, int32 height, then
// interleaved (u, v) float32 pairs in row-major order. Everything little-endian.
inline constexpr float kFloMagic = 202021.25f;

FlowField read_flo(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_flo(const FlowField& flow);
FlowField read_flo_file(const std::filesystem::path& path);
void write_flo_file(const std::filesystem::path& path, const FlowField& flow);

// KITTI flow PNG: 16-bit RGB, u = (R - 2^15) / 64, v = (G - 2^15) / 64,
// valid = B > 0.
FlowField decode_kitti_png(const PngImage& image);
PngImage encode_kitti_png(const FlowField& flow);

/// Color-wheel rendering. Hue follows the flow direction, saturation is
/// min(1, |f| / max_magnitude); zero flow is white. Without an explicit
/// max_magnitude the 99th-percentile magnitude of the field is used.
Frame colorize_flow(const FlowField& flow, std::optional<float> max_magnitude = std::nullopt);

/// Wheel color for a direction angle (radians, measured as atan2(v, u)) and a
/// saturation in [0,1]. colorize_flow is defined in terms of this.
std::array<float, 3> wheel_color(double angle, double saturation);

struct EndpointErrorResult {
  double mean = 0.0;
  std::vector<float> per_pixel;  // row-major, same size as the field
};

EndpointErrorResult endpoint_error(const FlowField& pred, const FlowField& gt,
                                   const std::optional<Mask>& mask = std::nullopt);

inline constexpr double kMetricCapDb = 99.0;

double psnr(const Frame& pred, const Frame& gt, const std::optional<Mask>& mask = std::nullopt);

/// Gradient-difference sharpness: 10 log10(1 / GDL), where GDL averages
/// |(|dx p| + |dy p|) - (|dx g| + |dy g|)| over interior pixels and channels
/// using forward differences.
double sharpness(const Frame& pred, const Frame& gt, const std::optional<Mask>& mask = std::nullopt);

inline constexpr float kDefaultMovingThreshold = 0.5f;

Mask moving_region_mask(const FlowField& gt_flow, float threshold = kDefaultMovingThreshold);

struct WarpResult {
  Frame frame;
  Mask coverage;
};

/// output(p) = frame(p + flow(p)), bilinear. Pixels whose target leaves the
/// image are zero and marked uncovered.
WarpResult warp_frame(const Frame& frame, const FlowField& flow);

}  // namespace hybridflow
