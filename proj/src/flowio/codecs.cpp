#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "hybridflow/error.hpp"
#include "hybridflow/flowio.hpp"

namespace hybridflow {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t load_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::uint8_t* p, std::uint32_t x) {
  p[0] = static_cast<std::uint8_t>(x);
  p[1] = static_cast<std::uint8_t>(x >> 8);
  p[2] = static_cast<std::uint8_t>(x >> 16);
  p[3] = static_cast<std::uint8_t>(x >> 24);
}

float load_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(load_u32_le(p)); }
void store_f32_le(std::uint8_t* p, float x) { store_u32_le(p, std::bit_cast<std::uint32_t>(x)); }

}  // namespace

FlowField read_flo(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::Truncated, ".flo shorter than its magic");
  if (load_f32_le(bytes.data()) != kFloMagic) throw Error(ErrorCode::BadMagic, ".flo magic mismatch");
  if (bytes.size() < 12) throw Error(ErrorCode::Truncated, ".flo header incomplete");
  const auto width = static_cast<std::int32_t>(load_u32_le(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(load_u32_le(bytes.data() + 8));
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::NonPositiveDims,
                ".flo dimensions " + std::to_string(width) + "x" + std::to_string(height));
  }
  const std::uint64_t expected = 12 + 8ull * static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  if (bytes.size() != expected) {
    throw Error(ErrorCode::Truncated, ".flo holds " + std::to_string(bytes.size()) + " bytes, expected " +
                                          std::to_string(expected));
  }
  FlowField flow(width, height);
  const std::uint8_t* p = bytes.data() + 12;
  for (std::size_t i = 0; i < flow.u.size(); ++i, p += 8) {
    flow.u[i] = load_f32_le(p);
    flow.v[i] = load_f32_le(p + 4);
  }
  return flow;
}

std::vector<std::uint8_t> write_flo(const FlowField& flow) {
  flow.validate();
  // Invalid pixels may hold anything; .flo has no mask so they must still be finite.
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i])) {
      throw Error(ErrorCode::InvariantViolation, "cannot write non-finite flow to .flo");
    }
  }
  std::vector<std::uint8_t> out(12 + 8 * flow.u.size());
  store_f32_le(out.data(), kFloMagic);
  store_u32_le(out.data() + 4, static_cast<std::uint32_t>(flow.width));
  store_u32_le(out.data() + 8, static_cast<std::uint32_t>(flow.height));
  std::uint8_t* p = out.data() + 12;
  for (std::size_t i = 0; i < flow.u.size(); ++i, p += 8) {
    store_f32_le(p, flow.u[i]);
    store_f32_le(p + 4, flow.v[i]);
  }
  return out;
}

FlowField read_flo_file(const std::filesystem::path& path) { return read_flo(read_file_bytes(path)); }

void write_flo_file(const std::filesystem::path& path, const FlowField& flow) {
  write_file_bytes_atomic(path, write_flo(flow));
}

FlowField decode_kitti_png(const PngImage& image) {
  if (image.bit_depth != 16) throw Error(ErrorCode::WrongBitDepth, "KITTI flow PNG must be 16-bit");
  if (image.channels != 3) throw Error(ErrorCode::WrongChannelCount, "KITTI flow PNG must have 3 channels");
  if (image.width < 1 || image.height < 1) throw Error(ErrorCode::NonPositiveDims, "empty KITTI flow PNG");
  FlowField flow(image.width, image.height);
  flow.valid = Mask(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto i = flow.index(x, y);
      if (image.at(x, y, 2) > 0) {
        flow.u[i] = (static_cast<float>(image.at(x, y, 0)) - 32768.0f) / 64.0f;
        flow.v[i] = (static_cast<float>(image.at(x, y, 1)) - 32768.0f) / 64.0f;
        flow.valid->bits[i] = 1;
      }
    }
  }
  return flow;
}

PngImage encode_kitti_png(const FlowField& flow) {
  flow.validate();
  PngImage image;
  image.width = flow.width;
  image.height = flow.height;
  image.channels = 3;
  image.bit_depth = 16;
  image.samples.assign(static_cast<std::size_t>(flow.width) * flow.height * 3, 0);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const auto i = flow.index(x, y);
      std::uint16_t* px = image.samples.data() + i * 3;
      if (!flow.is_valid(x, y)) {
        px[0] = px[1] = 32768;
        continue;
      }
      if (!(std::abs(flow.u[i]) < 512.0f) || !(std::abs(flow.v[i]) < 512.0f)) {
        throw Error(ErrorCode::RangeOverflow, "flow (" + std::to_string(flow.u[i]) + ", " +
                                                  std::to_string(flow.v[i]) + ") outside KITTI range");
      }
      const auto quantize = [](float value) {
        const double q = std::round(static_cast<double>(value) * 64.0 + 32768.0);
        return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
      };
      px[0] = quantize(flow.u[i]);
      px[1] = quantize(flow.v[i]);
      px[2] = 1;
    }
  }
  return image;
}

}  // namespace hybridflow
