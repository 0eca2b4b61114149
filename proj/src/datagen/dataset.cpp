#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"

#include "hybridflow/datagen.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/flowio.hpp"
#include "hybridflow/png_io.hpp"
#include "hybridflow/rng.hpp"

namespace hybridflow::datagen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const DatasetConfig& c) {
  return json{{"source", std::string(to_string(c.source))},
              {"master_seed", c.master_seed},
              {"width", c.width},
              {"height", c.height},
              {"depth", c.depth},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"max_speed", c.max_speed},
              {"max_background_speed", c.max_background_speed},
              {"max_rotation_deg", c.max_rotation_deg},
              {"integer_motion", c.integer_motion},
              {"noise_amplitude", c.noise_amplitude},
              {"brightness_drift", c.brightness_drift},
              {"history_frames", c.history_frames}};
}

std::string sample_dir(std::size_t index) {
  std::string s = std::to_string(index);
  return s.size() >= 6 ? s : std::string(6 - s.size(), '0') + s;
}

std::array<double, 2> random_in_disk(Rng& rng, double radius) {
  const double r = radius * std::sqrt(rng.uniform());
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(a), r * std::sin(a)};
}

template <typename Fn>
auto as_corrupt(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoError) throw;
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
}

const ManifestEntry& entry_at(const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.entries.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "sample index " + std::to_string(index) + " out of range (count " +
                                                std::to_string(manifest.entries.size()) + ")");
  }
  return manifest.entries[index];
}

}  // namespace

void DatasetConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "dataset config: " + what); };
  if (depth < 0 || depth > 10) fail("depth out of range");
  if (width <= 0 || height <= 0 || width % (1 << depth) != 0 || height % (1 << depth) != 0) {
    fail("width and height must be positive multiples of 2^depth");
  }
  if (min_objects < 0 || max_objects < min_objects) fail("object count range is invalid");
  const double limit = std::min(width, height) / 4.0;
  if (!(max_speed >= 0.0f && max_speed <= limit)) fail("max_speed must lie in [0, size/4]");
  if (!(max_background_speed >= 0.0f && max_background_speed <= limit)) {
    fail("max_background_speed must lie in [0, size/4]");
  }
  if (!std::isfinite(max_rotation_deg) || max_rotation_deg < 0.0f) fail("max_rotation_deg must be >= 0");
  if (!(noise_amplitude >= 0.0f) || !std::isfinite(noise_amplitude)) fail("noise_amplitude must be >= 0");
  if (!std::isfinite(brightness_drift)) fail("brightness_drift must be finite");
  if (history_frames != 0 && history_frames != 2) fail("history_frames must be 0 or 2");
}

DatasetConfig DatasetConfig::real_like_defaults() {
  DatasetConfig c;
  c.source = Source::Real;
  c.noise_amplitude = 0.02f;
  c.brightness_drift = 0.015f;
  return c;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t index) {
  return hash_combine(master_seed, index);
}

SceneSpec random_scene(const DatasetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  auto velocity = [&](double bound) {
    auto v = random_in_disk(rng, bound);
    if (config.integer_motion) {
      v[0] = std::round(v[0]);
      v[1] = std::round(v[1]);
      // Rounding can push a vector just outside the disk.
      while (std::hypot(v[0], v[1]) > bound) {
        v[0] -= (v[0] > 0) - (v[0] < 0);
        v[1] -= (v[1] > 0) - (v[1] < 0);
      }
    }
    return v;
  };

  SceneSpec spec;
  spec.width = config.width;
  spec.height = config.height;
  spec.depth = config.depth;
  spec.seed = seed;
  spec.noise_amplitude = config.noise_amplitude;
  spec.brightness_drift = config.brightness_drift;
  spec.history_frames = config.history_frames;
  spec.background_texture_seed = rng.next();
  const auto bg = velocity(config.max_background_speed);
  spec.background_velocity_x = static_cast<float>(bg[0]);
  spec.background_velocity_y = static_cast<float>(bg[1]);

  const int count = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
  const double size = std::min(config.width, config.height);
  std::vector<int> z(count);
  for (int i = 0; i < count; ++i) z[i] = i;
  for (int i = count - 1; i > 0; --i) std::swap(z[i], z[rng.uniform_int(0, i)]);
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    obj.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    obj.z_order = z[i];
    obj.texture_seed = rng.next();
    const auto v = velocity(config.max_speed);
    obj.velocity_x = static_cast<float>(v[0]);
    obj.velocity_y = static_cast<float>(v[1]);
    obj.rotation_deg =
        config.integer_motion ? 0.0f : static_cast<float>(rng.uniform(-config.max_rotation_deg, config.max_rotation_deg));
    obj.anchor_x = static_cast<float>(rng.uniform(0.0, config.width));
    obj.anchor_y = static_cast<float>(rng.uniform(0.0, config.height));
    obj.half_width = static_cast<float>(rng.uniform(size / 10.0, size / 4.0));
    obj.half_height = static_cast<float>(rng.uniform(size / 10.0, size / 4.0));
    if (obj.shape == ShapeKind::Polygon) {
      const int n = static_cast<int>(rng.uniform_int(3, 6));
      std::vector<double> angles(n);
      for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      std::sort(angles.begin(), angles.end());
      const double radius = std::max(obj.half_width, obj.half_height);
      for (double a : angles) {
        const double r = radius * rng.uniform(0.6, 1.0);
        obj.vertices.push_back({static_cast<float>(r * std::cos(a)), static_cast<float>(r * std::sin(a))});
      }
    }
    spec.objects.push_back(std::move(obj));
  }
  return spec;
}

std::string config_hash(const DatasetConfig& config) {
  // FNV-1a over the canonical (sorted-key) JSON text.
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DatasetManifest build_dataset(const DatasetConfig& config, std::size_t n, const fs::path& out) {
  config.validate();
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "build_dataset: sample count must be at least 1");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out;
  manifest.sample_count = n;
  manifest.source = config.source;
  manifest.config_hash = config_hash(config);
  manifest.width = config.width;
  manifest.height = config.height;

  const bool real = config.source == Source::Real;
  for (std::size_t i = 0; i < n; ++i) {
    const SceneSpec spec = random_scene(config, sample_seed(config.master_seed, i));
    const std::string dir = sample_dir(i);
    fs::create_directories(out / dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + (out / dir).string() + ": " + ec.message());

    SampleTriplet sample;
    WithheldTruth truth;
    if (real) {
      auto r = generate_real_like_triplet(spec);
      sample = std::move(r.sample);
      truth = std::move(r.withheld);
    } else {
      sample = generate_triplet(spec);
    }

    ManifestEntry entry;
    entry.i1 = dir + "/i1.png";
    entry.i2 = dir + "/i2.png";
    entry.i3 = dir + "/i3.png";
    write_frame_png(out / entry.i1, sample.i1);
    write_frame_png(out / entry.i2, sample.i2);
    write_frame_png(out / entry.i3, sample.i3);
    for (std::size_t h = 0; h < sample.history.size(); ++h) {
      entry.history.push_back(dir + "/h" + std::to_string(h) + ".png");
      write_frame_png(out / entry.history.back(), sample.history[h]);
    }
    if (real) {
      const std::string wdir = "withheld/" + dir;
      fs::create_directories(out / wdir, ec);
      if (ec) throw Error(ErrorCode::IoError, "cannot create " + (out / wdir).string() + ": " + ec.message());
      entry.withheld_f12 = wdir + "/f12.flo";
      entry.withheld_f23 = wdir + "/f23.flo";
      entry.withheld_occ12 = wdir + "/occ12.png";
      entry.withheld_occ23 = wdir + "/occ23.png";
      write_flo_file(out / *entry.withheld_f12, truth.f12);
      write_flo_file(out / *entry.withheld_f23, truth.f23);
      write_mask_png(out / *entry.withheld_occ12, truth.occlusion12);
      write_mask_png(out / *entry.withheld_occ23, truth.occlusion23);
    } else {
      entry.f12 = dir + "/f12.flo";
      entry.f23 = dir + "/f23.flo";
      entry.occ12 = dir + "/occ12.png";
      entry.occ23 = dir + "/occ23.png";
      write_flo_file(out / *entry.f12, *sample.f12);
      write_flo_file(out / *entry.f23, *sample.f23);
      write_mask_png(out / *entry.occ12, *sample.occlusion12);
      write_mask_png(out / *entry.occ23, *sample.occlusion23);
    }
    manifest.entries.push_back(std::move(entry));
  }

  json samples = json::array();
  for (const auto& e : manifest.entries) {
    json j{{"i1", e.i1}, {"i2", e.i2}, {"i3", e.i3}};
    if (!e.history.empty()) j["history"] = e.history;
    auto put = [&](const char* key, const std::optional<std::string>& v) {
      if (v) j[key] = *v;
    };
    put("f12", e.f12);
    put("f23", e.f23);
    put("occ12", e.occ12);
    put("occ23", e.occ23);
    put("withheld_f12", e.withheld_f12);
    put("withheld_f23", e.withheld_f23);
    put("withheld_occ12", e.withheld_occ12);
    put("withheld_occ23", e.withheld_occ23);
    samples.push_back(std::move(j));
  }
  const json doc{{"format_version", manifest.format_version},
                 {"source", std::string(to_string(manifest.source))},
                 {"sample_count", manifest.sample_count},
                 {"width", manifest.width},
                 {"height", manifest.height},
                 {"config_hash", manifest.config_hash},
                 {"config", config_to_json(config)},
                 {"samples", samples}};
  const std::string text = doc.dump(2) + "\n";
  write_file_bytes_atomic(out / "manifest.json",
                          std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return manifest;
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  const auto bytes = read_file_bytes(file);
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const json doc = json::parse(bytes.begin(), bytes.end());
    m.format_version = doc.at("format_version").get<int>();
    if (m.format_version != kManifestFormatVersion) {
      throw Error(ErrorCode::FormatVersionMismatch,
                  "manifest format version " + std::to_string(m.format_version) + " is not supported");
    }
    const auto source = doc.at("source").get<std::string>();
    if (source == "synthetic") {
      m.source = Source::Synthetic;
    } else if (source == "real") {
      m.source = Source::Real;
    } else {
      throw Error(ErrorCode::CorruptFile, "unknown source tag '" + source + "'");
    }
    m.sample_count = doc.at("sample_count").get<std::size_t>();
    m.width = doc.at("width").get<int>();
    m.height = doc.at("height").get<int>();
    m.config_hash = doc.at("config_hash").get<std::string>();
    for (const auto& j : doc.at("samples")) {
      ManifestEntry e;
      e.i1 = j.at("i1").get<std::string>();
      e.i2 = j.at("i2").get<std::string>();
      e.i3 = j.at("i3").get<std::string>();
      if (j.contains("history")) e.history = j.at("history").get<std::vector<std::string>>();
      auto get = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key)) return std::nullopt;
        return j.at(key).get<std::string>();
      };
      e.f12 = get("f12");
      e.f23 = get("f23");
      e.occ12 = get("occ12");
      e.occ23 = get("occ23");
      e.withheld_f12 = get("withheld_f12");
      e.withheld_f23 = get("withheld_f23");
      e.withheld_occ12 = get("withheld_occ12");
      e.withheld_occ23 = get("withheld_occ23");
      const bool has_flow = e.f12 && e.f23;
      if ((m.source == Source::Synthetic) != has_flow || (m.source == Source::Real && (e.f12 || e.f23))) {
        throw Error(ErrorCode::CorruptFile, "manifest entry flow files disagree with source tag");
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, file.string() + ": " + e.what());
  }
  if (m.entries.size() != m.sample_count) {
    throw Error(ErrorCode::CorruptFile, file.string() + ": sample_count does not match entry list");
  }
  return m;
}

SampleTriplet load_triplet(const DatasetManifest& manifest, std::size_t index) {
  const auto& e = entry_at(manifest, index);
  auto frame = [&](const std::string& rel) {
    const fs::path p = manifest.root / rel;
    return as_corrupt(p, [&] { return read_frame_png(p); });
  };
  auto flow = [&](const std::string& rel) {
    const fs::path p = manifest.root / rel;
    return as_corrupt(p, [&] { return read_flo_file(p); });
  };
  auto mask = [&](const std::string& rel) {
    const fs::path p = manifest.root / rel;
    return as_corrupt(p, [&] { return read_mask_png(p); });
  };
  SampleTriplet s;
  s.source = manifest.source;
  s.i1 = frame(e.i1);
  s.i2 = frame(e.i2);
  s.i3 = frame(e.i3);
  for (const auto& h : e.history) s.history.push_back(frame(h));
  if (manifest.source == Source::Synthetic) {
    s.f12 = flow(*e.f12);
    s.f23 = flow(*e.f23);
    if (e.occ12) s.occlusion12 = mask(*e.occ12);
    if (e.occ23) s.occlusion23 = mask(*e.occ23);
  }
  try {
    s.validate();
  } catch (const Error& err) {
    throw Error(ErrorCode::CorruptFile, "sample " + std::to_string(index) + ": " + err.what());
  }
  return s;
}

WithheldTruth load_ground_truth(const DatasetManifest& manifest, std::size_t index) {
  const auto& e = entry_at(manifest, index);
  const bool synthetic = manifest.source == Source::Synthetic;
  const auto& f12 = synthetic ? e.f12 : e.withheld_f12;
  const auto& f23 = synthetic ? e.f23 : e.withheld_f23;
  const auto& occ12 = synthetic ? e.occ12 : e.withheld_occ12;
  const auto& occ23 = synthetic ? e.occ23 : e.withheld_occ23;
  if (!f12 || !f23) {
    throw Error(ErrorCode::MissingGroundTruth, "sample " + std::to_string(index) + " has no flow ground truth");
  }
  WithheldTruth t;
  auto load_flow = [&](const std::string& rel) {
    const fs::path p = manifest.root / rel;
    return as_corrupt(p, [&] { return read_flo_file(p); });
  };
  auto load_mask = [&](const std::optional<std::string>& rel, const FlowField& like) {
    if (!rel) return Mask(like.width, like.height, true);
    const fs::path p = manifest.root / *rel;
    return as_corrupt(p, [&] { return read_mask_png(p); });
  };
  t.f12 = load_flow(*f12);
  t.f23 = load_flow(*f23);
  t.occlusion12 = load_mask(occ12, t.f12);
  t.occlusion23 = load_mask(occ23, t.f23);
  return t;
}

}  // namespace hybridflow::datagen
