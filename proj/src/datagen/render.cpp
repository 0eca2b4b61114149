#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "hybridflow/datagen.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/rng.hpp"

namespace hybridflow::datagen {

namespace {

using Rgb = std::array<double, 3>;

enum class TextureFamily { Smooth, Grainy };

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Wave {
  double kx = 0, ky = 0, phase = 0;
  Rgb amplitude{};
};

// A color field over a layer's local coordinates, so it moves with the layer.
class Texture {
 public:
  Texture(std::uint64_t seed, TextureFamily family) {
    Rng rng(hash_combine(seed, family == TextureFamily::Smooth ? 0x51 : 0x52));
    const bool smooth = family == TextureFamily::Smooth;
    base_ = hsv_to_rgb(rng.uniform(), smooth ? rng.uniform(0.6, 0.95) : rng.uniform(0.05, 0.3),
                       rng.uniform(0.35, 0.7));
    const int wave_count = smooth ? 3 : 4;
    for (int i = 0; i < wave_count; ++i) {
      const double wavelength = smooth ? rng.uniform(14.0, 40.0) : rng.uniform(3.0, 9.0);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      Wave w;
      w.kx = 2.0 * std::numbers::pi * std::cos(angle) / wavelength;
      w.ky = 2.0 * std::numbers::pi * std::sin(angle) / wavelength;
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      if (smooth) {
        for (auto& a : w.amplitude) a = rng.uniform(-0.15, 0.15);
      } else {
        const double gray = rng.uniform(-0.12, 0.12);
        for (auto& a : w.amplitude) a = gray + rng.uniform(-0.02, 0.02);
      }
      waves_.push_back(w);
    }
    if (!smooth) {
      grain_amplitude_ = rng.uniform(0.06, 0.12);
      grain_cell_ = rng.uniform(1.5, 3.0);
      grain_seed_ = rng.next();
    }
  }

  Rgb eval(double qx, double qy) const {
    Rgb out = base_;
    for (const auto& w : waves_) {
      const double s = std::sin(w.kx * qx + w.ky * qy + w.phase);
      for (int c = 0; c < 3; ++c) out[c] += w.amplitude[c] * s;
    }
    if (grain_amplitude_ > 0) {
      const double g = grain_amplitude_ * value_noise(qx / grain_cell_, qy / grain_cell_);
      for (auto& c : out) c += g;
    }
    return out;
  }

 private:
  double lattice(std::int64_t ix, std::int64_t iy) const {
    const std::uint64_t h = hash_combine(grain_seed_, hash_combine(static_cast<std::uint64_t>(ix),
                                                                   static_cast<std::uint64_t>(iy)));
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
  }

  // Smoothly interpolated lattice noise on [-1, 1].
  double value_noise(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double tx = fade(x - fx), ty = fade(y - fy);
    const double top = lattice(ix, iy) + tx * (lattice(ix + 1, iy) - lattice(ix, iy));
    const double bottom = lattice(ix, iy + 1) + tx * (lattice(ix + 1, iy + 1) - lattice(ix, iy + 1));
    return top + ty * (bottom - top);
  }

  Rgb base_{};
  std::vector<Wave> waves_;
  double grain_amplitude_ = 0.0;
  double grain_cell_ = 1.0;
  std::uint64_t grain_seed_ = 0;
};

bool inside_polygon(const std::vector<std::array<float, 2>>& vertices, double x, double y) {
  bool inside = false;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = vertices[i][0], yi = vertices[i][1];
    const double xj = vertices[j][0], yj = vertices[j][1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

bool inside_shape(const SceneObject& obj, double qx, double qy) {
  switch (obj.shape) {
    case ShapeKind::Rectangle:
      return std::abs(qx) <= obj.half_width && std::abs(qy) <= obj.half_height;
    case ShapeKind::Ellipse: {
      const double a = qx / obj.half_width, b = qy / obj.half_height;
      return a * a + b * b <= 1.0;
    }
    case ShapeKind::Polygon:
      return inside_polygon(obj.vertices, qx, qy);
  }
  return false;
}

// Object-local coordinates of image point (px, py) at time t. The motion is
// removed before the anchor so that whole-pixel translations are exact.
std::array<double, 2> object_local(const SceneObject& obj, double px, double py, double t) {
  const double dx = (px - obj.velocity_x * t) - obj.anchor_x;
  const double dy = (py - obj.velocity_y * t) - obj.anchor_y;
  if (obj.rotation_deg == 0.0f) return {dx, dy};
  const double theta = obj.rotation_deg * t * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * dx + s * dy, -s * dx + c * dy};
}

// Layer 0 is the background, layer k >= 1 is spec.objects[k - 1].
class SceneRenderer {
 public:
  SceneRenderer(const SceneSpec& spec, TextureFamily family) : spec_(spec) {
    background_ = std::make_unique<Texture>(spec.background_texture_seed, family);
    for (const auto& obj : spec.objects) textures_.emplace_back(obj.texture_seed, family);
    order_.resize(spec.objects.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    // Front to back: highest z first; among equal z the later object wins.
    std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
      const int za = spec.objects[a].z_order, zb = spec.objects[b].z_order;
      return za != zb ? za > zb : a > b;
    });
  }

  int layer_at(int x, int y, double t) const {
    for (std::size_t idx : order_) {
      const auto q = object_local(spec_.objects[idx], x, y, t);
      if (inside_shape(spec_.objects[idx], q[0], q[1])) return static_cast<int>(idx) + 1;
    }
    return 0;
  }

  std::vector<int> layer_map(double t) const {
    std::vector<int> ids(static_cast<std::size_t>(spec_.width) * spec_.height);
    for (int y = 0; y < spec_.height; ++y)
      for (int x = 0; x < spec_.width; ++x) ids[static_cast<std::size_t>(y) * spec_.width + x] = layer_at(x, y, t);
    return ids;
  }

  Rgb color(int layer, int x, int y, double t) const {
    if (layer == 0) {
      return background_->eval(x - spec_.background_velocity_x * t, y - spec_.background_velocity_y * t);
    }
    const auto q = object_local(spec_.objects[layer - 1], x, y, t);
    return textures_[layer - 1].eval(q[0], q[1]);
  }

  // Displacement from t to t + 1 of the layer's surface point at (x, y).
  std::array<double, 2> displacement(int layer, int x, int y, double t) const {
    if (layer == 0) return {spec_.background_velocity_x, spec_.background_velocity_y};
    const auto& obj = spec_.objects[layer - 1];
    if (obj.rotation_deg == 0.0f) return {obj.velocity_x, obj.velocity_y};
    // Position relative to the moving anchor at t, rotated by one more frame's angle.
    const double rx = (x - obj.velocity_x * t) - obj.anchor_x;
    const double ry = (y - obj.velocity_y * t) - obj.anchor_y;
    const double step = obj.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(step), s = std::sin(step);
    return {obj.velocity_x + (c * rx - s * ry - rx), obj.velocity_y + (s * rx + c * ry - ry)};
  }

  Frame render(const std::vector<int>& layers, double t) const {
    Frame frame(spec_.width, spec_.height);
    Rng noise(hash_combine(spec_.seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(t) + 1000)));
    const double offset = spec_.brightness_drift * t;
    for (int y = 0; y < spec_.height; ++y) {
      for (int x = 0; x < spec_.width; ++x) {
        const Rgb rgb = color(layers[static_cast<std::size_t>(y) * spec_.width + x], x, y, t);
        for (int c = 0; c < 3; ++c) {
          double value = rgb[c] + offset;
          if (spec_.noise_amplitude > 0) value += spec_.noise_amplitude * noise.normal();
          frame.at(x, y, c) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
      }
    }
    return frame.quantized();
  }

  // Flow from t to t + 1 and the mask of pixels whose surface point is still
  // visible (same layer under every bilinear tap) and in bounds at t + 1.
  std::pair<FlowField, Mask> flow(const std::vector<int>& layers_t, const std::vector<int>& layers_next,
                                  double t) const {
    const int w = spec_.width, h = spec_.height;
    FlowField f(w, h);
    Mask visible(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int layer = layers_t[static_cast<std::size_t>(y) * w + x];
        const auto d = displacement(layer, x, y, t);
        f.u[f.index(x, y)] = static_cast<float>(d[0]);
        f.v[f.index(x, y)] = static_cast<float>(d[1]);
        const double sx = x + static_cast<double>(f.u_at(x, y));
        const double sy = y + static_cast<double>(f.v_at(x, y));
        if (!(sx >= 0.0 && sx <= w - 1 && sy >= 0.0 && sy <= h - 1)) continue;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const int x1 = sx > x0 ? x0 + 1 : x0, y1 = sy > y0 ? y0 + 1 : y0;
        bool same = true;
        for (int yy = y0; yy <= y1 && same; ++yy)
          for (int xx = x0; xx <= x1 && same; ++xx) same = layers_next[static_cast<std::size_t>(yy) * w + xx] == layer;
        visible.set(x, y, same);
      }
    }
    return {std::move(f), std::move(visible)};
  }

 private:
  const SceneSpec& spec_;
  std::unique_ptr<Texture> background_;
  std::vector<Texture> textures_;
  std::vector<std::size_t> order_;
};

struct Rendered {
  SampleTriplet triplet;
  WithheldTruth truth;
};

Rendered render_scene(const SceneSpec& spec, TextureFamily family) {
  spec.validate();
  SceneRenderer renderer(spec, family);
  std::array<std::vector<int>, 3> layers;
  for (int t = 0; t < 3; ++t) layers[t] = renderer.layer_map(t);
  Rendered out;
  out.triplet.i1 = renderer.render(layers[0], 0);
  out.triplet.i2 = renderer.render(layers[1], 1);
  out.triplet.i3 = renderer.render(layers[2], 2);
  for (int k = spec.history_frames; k >= 1; --k) {
    out.triplet.history.push_back(renderer.render(renderer.layer_map(-k), -k));
  }
  auto [f12, occ12] = renderer.flow(layers[0], layers[1], 0);
  auto [f23, occ23] = renderer.flow(layers[1], layers[2], 1);
  out.truth = WithheldTruth{std::move(f12), std::move(f23), std::move(occ12), std::move(occ23)};
  return out;
}

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, "scene spec: " + what); };
  if (depth < 0 || depth > 10) fail("depth out of range");
  const int divisor = 1 << depth;
  if (width <= 0 || height <= 0 || width % divisor != 0 || height % divisor != 0) {
    fail("image size must be positive and divisible by 2^" + std::to_string(depth));
  }
  if (history_frames != 0 && history_frames != 2) fail("history_frames must be 0 or 2");
  if (!(noise_amplitude >= 0.0f) || !std::isfinite(noise_amplitude)) fail("noise amplitude must be finite and >= 0");
  if (!std::isfinite(brightness_drift)) fail("brightness drift must be finite");
  const double limit = std::min(width, height) / 4.0;
  auto check_velocity = [&](float vx, float vy, const std::string& who) {
    if (!std::isfinite(vx) || !std::isfinite(vy)) fail(who + " velocity is not finite");
    if (std::hypot(vx, vy) > limit) fail(who + " velocity exceeds a quarter of the image size");
  };
  check_velocity(background_velocity_x, background_velocity_y, "background");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    const std::string who = "object " + std::to_string(i);
    check_velocity(o.velocity_x, o.velocity_y, who);
    if (!std::isfinite(o.rotation_deg) || !std::isfinite(o.anchor_x) || !std::isfinite(o.anchor_y)) {
      fail(who + " has non-finite pose");
    }
    if (o.shape == ShapeKind::Polygon) {
      if (o.vertices.size() < 3) fail(who + " polygon needs at least 3 vertices");
    } else if (!(o.half_width > 0.0f) || !(o.half_height > 0.0f)) {
      fail(who + " extents must be positive");
    }
  }
}

SampleTriplet generate_triplet(const SceneSpec& spec) {
  auto r = render_scene(spec, TextureFamily::Smooth);
  r.triplet.source = Source::Synthetic;
  r.triplet.f12 = std::move(r.truth.f12);
  r.triplet.f23 = std::move(r.truth.f23);
  r.triplet.occlusion12 = std::move(r.truth.occlusion12);
  r.triplet.occlusion23 = std::move(r.truth.occlusion23);
  return std::move(r.triplet);
}

RealLikeTriplet generate_real_like_triplet(const SceneSpec& spec) {
  auto r = render_scene(spec, TextureFamily::Grainy);
  r.triplet.source = Source::Real;
  return RealLikeTriplet{std::move(r.triplet), std::move(r.truth)};
}

}  // namespace hybridflow::datagen
