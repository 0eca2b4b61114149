// Checkpoint container, all integers little-endian:
//
//   8 bytes   magic "HFLOWCKP"
//   u32       format version
//   u32       header length, then that many bytes of JSON:
//             {"config": {...}, "iteration": n, "metadata": {...}}
//   u32       record count, then per record:
//     u32 name length, name bytes   ("<layer>.weight", "<layer>.bias" or "extra/<name>")
//     u32 group                     (0 encoder, 1 flow decoder, 2 frame decoder, 255 extra)
//     u32 rank, i32 dims[rank]
//     f32 values[prod(dims)]

#include <bit>
#include <cstring>

#include "json.hpp"

#include "hybridflow/error.hpp"
#include "hybridflow/network.hpp"
#include "hybridflow/png_io.hpp"

namespace hybridflow::network {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'H', 'F', 'L', 'O', 'W', 'C', 'K', 'P'};
constexpr std::uint32_t kExtraGroup = 255;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void record(const std::string& name, std::uint32_t group, const std::vector<int>& shape, const std::vector<float>& v) {
    str(name);
    u32(group);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::IoError, path_ + ": checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Record {
  std::uint32_t group;
  std::vector<int> shape;
  std::vector<float> values;
};

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

std::string config_to_json(const NetworkConfig& config) {
  return json{{"depth", config.depth},
              {"alpha", config.alpha},
              {"input_frames", config.input_frames},
              {"mode", std::string(to_string(config.mode))}}
      .dump();
}

NetworkConfig config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    NetworkConfig c;
    c.depth = j.at("depth").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.input_frames = j.at("input_frames").get<int>();
    c.mode = parse_task_mode(j.at("mode").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("network config: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointFormatVersion);
  json header{{"config", json::parse(config_to_json(checkpoint.config))},
              {"iteration", checkpoint.iteration},
              {"metadata", json::parse(checkpoint.metadata)}};
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(2 * checkpoint.params.layers.size() + checkpoint.extra.size()));
  for (const auto& l : checkpoint.params.layers) {
    const auto group = static_cast<std::uint32_t>(l.group);
    w.record(l.name + ".weight", group, l.weight_shape, l.weights);
    w.record(l.name + ".bias", group, {static_cast<int>(l.bias.size())}, l.bias);
  }
  for (const auto& e : checkpoint.extra) {
    if (product(e.shape) != e.data.size()) throw Error(ErrorCode::ShapeMismatch, "extra record '" + e.name + "' shape");
    w.record("extra/" + e.name, kExtraGroup, e.shape, e.data);
  }
  write_file_bytes_atomic(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Reader r(bytes, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::IoError, path.string() + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, path.string() + ": checkpoint format version " +
                                                      std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointFormatVersion));
  }
  Checkpoint ckpt;
  try {
    const json header = json::parse(r.str());
    ckpt.config = config_from_json(header.at("config").dump());
    ckpt.iteration = header.at("iteration").get<std::uint64_t>();
    ckpt.metadata = header.at("metadata").dump();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": bad checkpoint header: " + e.what());
  }

  std::map<std::string, Record> records;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Record rec;
    rec.group = r.u32();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorCode::IoError, path.string() + ": implausible record rank");
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<int>(r.u32()));
    const std::size_t n = product(rec.shape);
    r.need(n * 4);
    rec.values.resize(n);
    for (auto& v : rec.values) v = std::bit_cast<float>(r.u32());
    records.emplace(name, std::move(rec));
  }
  if (!r.at_end()) throw Error(ErrorCode::IoError, path.string() + ": trailing bytes after records");

  // Parameters must match the architecture implied by the stored config.
  ckpt.params = init_parameters<float>(ckpt.config, 0);
  for (auto& l : ckpt.params.layers) {
    auto take = [&](const std::string& key, const std::vector<int>& shape, std::vector<float>& dst) {
      auto it = records.find(key);
      if (it == records.end()) throw Error(ErrorCode::ShapeMismatch, path.string() + ": missing record " + key);
      if (it->second.shape != shape || it->second.group != static_cast<std::uint32_t>(l.group)) {
        throw Error(ErrorCode::ShapeMismatch, path.string() + ": record " + key + " has the wrong shape");
      }
      dst = std::move(it->second.values);
      records.erase(it);
    };
    take(l.name + ".weight", l.weight_shape, l.weights);
    take(l.name + ".bias", {static_cast<int>(l.bias.size())}, l.bias);
  }
  for (auto& [name, rec] : records) {
    if (name.rfind("extra/", 0) != 0) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": unexpected record " + name);
    }
    ckpt.extra.push_back(ExtraRecord{name.substr(6), rec.shape, std::move(rec.values)});
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected)) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": checkpoint config " + config_to_json(ckpt.config) +
                                              " does not match " + config_to_json(expected));
  }
  return ckpt;
}

}  // namespace hybridflow::network
