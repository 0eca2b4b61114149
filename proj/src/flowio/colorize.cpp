#include <algorithm>
#include <cmath>
#include <numbers>

#include "hybridflow/flowio.hpp"

namespace hybridflow {

namespace {

// Middlebury color wheel: segment lengths chosen for perceptual spacing.
constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
constexpr int kWheelSize = kRY + kYG + kGC + kCB + kBM + kMR;  // 55

struct Wheel {
  std::array<std::array<float, 3>, kWheelSize> entries{};

  Wheel() {
    int k = 0;
    auto put = [&](float r, float g, float b) { entries[k++] = {r / 255.0f, g / 255.0f, b / 255.0f}; };
    for (int i = 0; i < kRY; ++i) put(255, std::floor(255.0f * i / kRY), 0);
    for (int i = 0; i < kYG; ++i) put(255 - std::floor(255.0f * i / kYG), 255, 0);
    for (int i = 0; i < kGC; ++i) put(0, 255, std::floor(255.0f * i / kGC));
    for (int i = 0; i < kCB; ++i) put(0, 255 - std::floor(255.0f * i / kCB), 255);
    for (int i = 0; i < kBM; ++i) put(std::floor(255.0f * i / kBM), 0, 255);
    for (int i = 0; i < kMR; ++i) put(255, 0, 255 - std::floor(255.0f * i / kMR));
  }
};

const Wheel& wheel() {
  static const Wheel w;
  return w;
}

}  // namespace

std::array<float, 3> wheel_color(double angle, double saturation) {
  double pos = angle / (2.0 * std::numbers::pi) * kWheelSize;
  pos = std::fmod(pos, static_cast<double>(kWheelSize));
  if (pos < 0) pos += kWheelSize;
  const int k0 = static_cast<int>(pos) % kWheelSize;
  const int k1 = (k0 + 1) % kWheelSize;
  const double f = pos - std::floor(pos);
  const double s = std::clamp(saturation, 0.0, 1.0);
  std::array<float, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double col = (1.0 - f) * wheel().entries[k0][c] + f * wheel().entries[k1][c];
    rgb[c] = static_cast<float>(1.0 - s * (1.0 - col));
  }
  return rgb;
}

Frame colorize_flow(const FlowField& flow, std::optional<float> max_magnitude) {
  flow.validate();
  double scale = 0.0;
  if (max_magnitude) {
    scale = *max_magnitude;
  } else {
    std::vector<float> mags;
    mags.reserve(flow.u.size());
    for (int y = 0; y < flow.height; ++y) {
      for (int x = 0; x < flow.width; ++x) {
        if (flow.is_valid(x, y)) mags.push_back(std::hypot(flow.u_at(x, y), flow.v_at(x, y)));
      }
    }
    if (!mags.empty()) {
      const auto k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(mags.size() - 1)));
      std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
      scale = mags[k];
    }
  }
  scale = std::max(scale, 1e-9);

  Frame out(flow.width, flow.height, 0.0f);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      if (!flow.is_valid(x, y)) continue;  // unknown flow stays black
      const double u = flow.u_at(x, y);
      const double v = flow.v_at(x, y);
      const double mag = std::hypot(u, v);
      const auto rgb = wheel_color(std::atan2(v, u), std::min(1.0, mag / scale));
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  }
  return out;
}

}  // namespace hybridflow
