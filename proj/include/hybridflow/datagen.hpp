#pragma once

// Procedural triplet generator with exact ground-truth flow, a
// distribution-shifted "real-like" renderer, and on-disk dataset management.
//
// Time convention: I1, I2, I3 are rendered at t = 0, 1, 2 and optional
// history frames at t = -2, -1. Pixel centers sit on integer coordinates.
// F12(p) is the displacement between t=0 and t=1 of the surface point visible
// at p in I1, anchored at the earlier frame (the convention of warp_frame).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hybridflow/types.hpp"

namespace hybridflow::datagen {

enum class ShapeKind { Rectangle, Ellipse, Polygon };

struct SceneObject {
  ShapeKind shape = ShapeKind::Rectangle;
  int z_order = 0;  // larger is closer to the viewer; ties go to the later object
  std::uint64_t texture_seed = 0;
  float velocity_x = 0.0f;  // px/frame
  float velocity_y = 0.0f;
  float rotation_deg = 0.0f;  // degrees/frame, about the anchor
  float anchor_x = 0.0f;      // shape center at t = 0
  float anchor_y = 0.0f;
  float half_width = 4.0f;  // rectangle / ellipse extents
  float half_height = 4.0f;
  /// Polygon vertices relative to the anchor (unrotated), any winding.
  std::vector<std::array<float, 2>> vertices;
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  /// Encoder depth the frames must be compatible with: both dims divisible by 2^depth.
  int depth = 4;
  std::uint64_t background_texture_seed = 0;
  float background_velocity_x = 0.0f;
  float background_velocity_y = 0.0f;
  std::vector<SceneObject> objects;
  float noise_amplitude = 0.0f;   // std of per-pixel Gaussian noise, [0,1] scale
  float brightness_drift = 0.0f;  // additive brightness change per frame
  /// 0, or 2 to also render the two frames preceding I1.
  int history_frames = 0;
  std::uint64_t seed = 0;

  /// Throws InvalidSpec.
  void validate() const;
};

/// Ground truth of a real-like triplet, kept apart from the training sample.
struct WithheldTruth {
  FlowField f12;
  FlowField f23;
  Mask occlusion12;
  Mask occlusion23;
};

struct RealLikeTriplet {
  SampleTriplet sample;  // source REAL, no flow
  WithheldTruth withheld;
};

/// Smooth textures, saturated palette. Occlusion masks are true where the
/// surface point stays visible and in bounds at the next frame.
SampleTriplet generate_triplet(const SceneSpec& spec);

/// Same geometry with the shifted appearance model: high-frequency grainy
/// textures, desaturated palette, plus the scene's noise and drift.
RealLikeTriplet generate_real_like_triplet(const SceneSpec& spec);

/// Randomization parameters for building datasets.
struct DatasetConfig {
  Source source = Source::Synthetic;
  std::uint64_t master_seed = 1;
  int width = 64;
  int height = 64;
  int depth = 4;
  int min_objects = 1;
  int max_objects = 4;
  float max_speed = 4.0f;             // object speed bound, px/frame
  float max_background_speed = 2.0f;  // background speed bound, px/frame
  float max_rotation_deg = 3.0f;
  /// Round all velocities to whole pixels and disable rotation.
  bool integer_motion = false;
  float noise_amplitude = 0.0f;
  float brightness_drift = 0.0f;
  int history_frames = 0;

  void validate() const;
  /// Defaults for the real-like domain (noise and drift enabled).
  static DatasetConfig real_like_defaults();
};

/// Per-sample seed: a hash of (master_seed, index).
std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t index);

/// Random scene drawn from the config's distribution; pure function of (config, seed).
SceneSpec random_scene(const DatasetConfig& config, std::uint64_t seed);

inline constexpr int kManifestFormatVersion = 1;

struct ManifestEntry {
  std::string i1, i2, i3;
  std::vector<std::string> history;
  // Present for synthetic datasets.
  std::optional<std::string> f12, f23, occ12, occ23;
  // Present for real-like datasets: paths into the withheld/ tree.
  std::optional<std::string> withheld_f12, withheld_f23, withheld_occ12, withheld_occ23;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::size_t sample_count = 0;
  Source source = Source::Synthetic;
  std::string config_hash;  // 16 hex digits
  int format_version = kManifestFormatVersion;
  int width = 0;
  int height = 0;
  std::vector<ManifestEntry> entries;
};

/// Stable hash of every field of the config.
std::string config_hash(const DatasetConfig& config);

/// Writes n samples under `out` plus manifest.json. Errors: InvalidConfig
/// (n == 0 or bad config), IoError.
DatasetManifest build_dataset(const DatasetConfig& config, std::size_t n, const std::filesystem::path& out);

/// Reads `root/manifest.json` (or the file itself when a path to it is given).
/// Errors: IoError, CorruptFile, FormatVersionMismatch.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Errors: IndexOutOfRange, CorruptFile, IoError.
SampleTriplet load_triplet(const DatasetManifest& manifest, std::size_t index);

/// Flow ground truth for a sample: from the sample itself for synthetic sets,
/// from the withheld tree for real-like ones. Errors: MissingGroundTruth,
/// IndexOutOfRange, CorruptFile.
WithheldTruth load_ground_truth(const DatasetManifest& manifest, std::size_t index);

}  // namespace hybridflow::datagen
