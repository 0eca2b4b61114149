#include "settings.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hybridflow::cli {

namespace {

using nlohmann::json;

std::vector<OptionSpec> build_catalog() {
  return {
      // outputs and inputs
      {"out", Kind::Text, "Output directory; every file the command writes goes under it"},
      {"data", Kind::Text, "Dataset directory (manifest.json inside)"},
      {"synthetic-data", Kind::Text, "Labeled synthetic training set"},
      {"real-data", Kind::Text, "Unlabeled real-like training set (any flow labels are ignored)"},
      {"synthetic-eval", Kind::Text, "Optional synthetic held-out set for the domain-shift report"},
      {"checkpoint", Kind::Text, "Trained checkpoint (.ckpt)"},
      {"resume", Kind::Text, "Checkpoint to continue training from"},
      {"i1", Kind::Text, "First observed frame (PNG)"},
      {"i2", Kind::Text, "Second observed frame (PNG)"},
      {"history", Kind::Text, "Comma-separated frames preceding I1, oldest first (4-frame models)"},
      {"out-flow", Kind::Text, "Predicted flow output (.flo, or .png for the KITTI encoding)"},
      {"out-frame", Kind::Text, "Predicted next frame output (PNG)"},
      {"input", Kind::Text, "Flow field to render (.flo or KITTI .png)", true},
      {"output", Kind::Text, "Color image to write (PNG); defaults to <input stem>_color.png", true},
      // dataset generation
      {"kind", Kind::Text, "Dataset kind: synthetic or real-like (default synthetic)"},
      {"count", Kind::Count, "Number of triplets to generate"},
      {"width", Kind::Integer, "Frame width in pixels (default 64)"},
      {"height", Kind::Integer, "Frame height in pixels (default 64)"},
      {"min-objects", Kind::Integer, "Minimum moving objects per scene (default 1)"},
      {"max-objects", Kind::Integer, "Maximum moving objects per scene (default 4)"},
      {"max-speed", Kind::Real, "Object speed bound in px/frame (default 4)"},
      {"max-background-speed", Kind::Real, "Background speed bound in px/frame (default 2)"},
      {"max-rotation", Kind::Real, "Object rotation bound in degrees/frame (default 3)"},
      {"integer-motion", Kind::Flag, "Round velocities to whole pixels and disable rotation"},
      {"noise", Kind::Real, "Per-pixel Gaussian noise std on the [0,1] scale"},
      {"drift", Kind::Real, "Additive brightness change per frame"},
      {"history-frames", Kind::Integer, "0, or 2 to also render two frames before I1"},
      // network
      {"mode", Kind::Text, "Task mode: flow+nextframe, nextflow+nextframe, flow or nextframe"},
      {"depth", Kind::Integer, "Encoder depth L; frame sizes must be divisible by 2^L"},
      {"alpha", Kind::Real, "Channel-width scale"},
      {"input-frames", Kind::Integer, "Observed frames fed to the network: 2 or 4"},
      // schedule
      {"preset", Kind::Text, "Defaults to start from: full (long schedule, L=6) or desk (2,000 iterations, L=4)"},
      {"cycles", Kind::Text, "Iteration cycle n1:n2, n1 real batches then n2 synthetic batches (e.g. 1:5)"},
      {"w1", Kind::Real, "Flow-loss weight"},
      {"w2", Kind::Real, "Frame-loss weight"},
      {"level-weights", Kind::Text, "Comma-separated per-level loss weights, coarsest first"},
      {"base-lr", Kind::Real, "Initial learning rate"},
      {"lr-drop-start", Kind::Count, "Iteration of the first learning-rate drop"},
      {"lr-drop-every", Kind::Count, "Iterations between later drops"},
      {"lr-drop-factor", Kind::Real, "Multiplier applied at each drop"},
      {"adam-beta1", Kind::Real, "Adam first-moment decay"},
      {"adam-beta2", Kind::Real, "Adam second-moment decay"},
      {"adam-epsilon", Kind::Real, "Adam denominator epsilon"},
      {"iterations", Kind::Count, "Total training iterations"},
      {"batch-size", Kind::Integer, "Minibatch size"},
      {"seed", Kind::Count, "Random seed (dataset master seed for gen-data)"},
      {"checkpoint-every", Kind::Count, "Checkpoint period in iterations; 0 writes only final.ckpt"},
      {"log-every", Kind::Count, "Print a progress line every N iterations; 0 disables (default 100)"},
      // evaluation
      {"task", Kind::Text, "flow, frame, domain-shift or sweep"},
      {"baseline", Kind::Text, "Evaluate a reference model instead of a checkpoint: copy-last-frame"},
      {"moving-threshold", Kind::Real, "Flow magnitude (px) above which a pixel counts as moving (default 0.5)"},
      {"seeds", Kind::Text, "Comma-separated training seeds for experiments (default 1,2,3)"},
      {"ratios", Kind::Text, "Comma-separated n1:n2 ratios for the sweep (default 0:1,1:9,1:5,1:1,4:1)"},
      {"max-magnitude", Kind::Real, "Flow magnitude mapped to full saturation (default: 99th percentile)"},
      {"allow-few", Kind::Flag, "Calibrate from fewer than 500 samples"},
  };
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string json_to_text(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (e.is_array() || e.is_object()) throw UsageError("config key '" + key + "': nested values are not allowed");
      if (!out.empty()) out += ',';
      out += json_to_text(key, e);
    }
    return out;
  }
  throw UsageError("config key '" + key + "' must be a string, number, boolean or array");
}

}  // namespace

const std::vector<OptionSpec>& option_catalog() {
  static const std::vector<OptionSpec> catalog = build_catalog();
  return catalog;
}

const OptionSpec& option_spec(const std::string& name) {
  for (const auto& s : option_catalog()) {
    if (s.name == name) return s;
  }
  throw std::logic_error("unregistered option " + name);
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

std::string env_name(std::string_view option) {
  std::string out = "HYBRIDFLOW_";
  for (char c : option) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& s : option_catalog()) keys.push_back(s.name);
  return keys;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::stringstream text;
  text << in.rdbuf();
  json j;
  try {
    j = json::parse(text.str());
  } catch (const json::exception& e) {
    throw UsageError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file '" + path.string() + "' must hold a JSON object");
  const auto keys = known_keys();
  std::map<std::string, std::string> values;
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw UsageError("config file '" + path.string() + "': unknown key '" + key + "'");
    }
    values[key] = json_to_text(key, value);
  }
  return values;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw UsageError("--" + name + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_count(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw UsageError("--" + name + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::pair<int, int> parse_ratio(const std::string& name, const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--" + name + ": expected n1:n2, got '" + text + "'");
  const auto n1 = parse_count(name, text.substr(0, colon));
  const auto n2 = parse_count(name, text.substr(colon + 1));
  if (n1 > 1000000 || n2 > 1000000) throw UsageError("--" + name + ": ratio terms are too large");
  return {static_cast<int>(n1), static_cast<int>(n2)};
}

std::optional<std::string> Settings::raw(const std::string& name) const {
  const auto it = values_.find(name);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Settings::text(const std::string& name, const std::string& fallback) const {
  return raw(name).value_or(fallback);
}

std::string Settings::required(const std::string& name) const {
  const auto v = raw(name);
  if (!v || v->empty()) throw UsageError(command_ + ": --" + name + " is required");
  return *v;
}

std::int64_t Settings::integer(const std::string& name, std::int64_t fallback) const {
  const auto v = raw(name);
  if (!v) return fallback;
  const std::string t = trim(*v);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw UsageError("--" + name + ": expected an integer, got '" + *v + "'");
  }
  return out;
}

std::uint64_t Settings::count(const std::string& name, std::uint64_t fallback) const {
  const auto v = raw(name);
  return v ? parse_count(name, *v) : fallback;
}

double Settings::real(const std::string& name, double fallback) const {
  const auto v = raw(name);
  return v ? parse_real(name, *v) : fallback;
}

bool Settings::flag(const std::string& name) const {
  const auto v = raw(name);
  if (!v) return false;
  std::string t = trim(*v);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw UsageError("--" + name + ": expected true or false, got '" + *v + "'");
}

std::vector<std::string> Settings::list(const std::string& name) const {
  const auto v = raw(name);
  return v ? split_list(*v) : std::vector<std::string>{};
}

}  // namespace hybridflow::cli
