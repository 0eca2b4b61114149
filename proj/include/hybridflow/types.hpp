#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace hybridflow {

/// Per-pixel boolean map, row-major, one byte per pixel (0 or 1).
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, bool fill = false)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool value) {
    bits[static_cast<std::size_t>(y) * width + x] = value ? 1 : 0;
  }
  std::size_t count() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

Mask mask_and(const Mask& a, const Mask& b);

/// Dense 2-D displacement field in pixels. u is horizontal (positive to the
/// right), v is vertical (positive downward). Components are stored planar.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::optional<Mask> valid;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0f),
        v(static_cast<std::size_t>(w) * h, 0.0f) {}

  static FlowField uniform(int w, int h, float du, float dv);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  float u_at(int x, int y) const { return u[index(x, y)]; }
  float v_at(int x, int y) const { return v[index(x, y)]; }
  bool is_valid(int x, int y) const { return !valid || valid->at(x, y); }

  /// Throws InvariantViolation when dimensions, mask shape or finiteness fail.
  void validate() const;

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// RGB image on the canonical [0,1] scale, interleaved channels, row-major.
struct Frame {
  static constexpr int kChannels = 3;

  int width = 0;
  int height = 0;
  std::vector<float> data;

  Frame() = default;
  Frame(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * kChannels, fill) {}

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  float at(int x, int y, int c) const { return data[index(x, y, c)]; }
  float& at(int x, int y, int c) { return data[index(x, y, c)]; }

  void validate() const;

  /// Snap every value to the nearest representable 8-bit level (round(v*255)/255).
  Frame quantized() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class Source { Synthetic, Real };

std::string_view to_string(Source source);

struct SampleTriplet {
  Frame i1, i2, i3;
  std::optional<FlowField> f12;
  std::optional<FlowField> f23;
  Source source = Source::Synthetic;
  /// True where the flow target is photometrically consistent.
  std::optional<Mask> occlusion12;
  std::optional<Mask> occlusion23;
  /// Optional frames preceding i1 (oldest first), used by multi-frame
  /// prediction inputs.
  std::vector<Frame> history;

  int width() const { return i1.width; }
  int height() const { return i1.height; }

  void validate() const;

  /// Same frames tagged REAL with all flow information removed.
  SampleTriplet without_ground_truth() const;
};

struct Minibatch {
  std::vector<SampleTriplet> samples;
  Source source = Source::Synthetic;

  void validate() const;
};

}  // namespace hybridflow
