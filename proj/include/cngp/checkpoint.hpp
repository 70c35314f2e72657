#pragma once

// Versioned single-file checkpoint: a JSON manifest (configuration, label
// registry, stored camera sets, named-tensor table) followed by the raw
// little-endian float32 tensor data.
//
// Layout:
//   bytes 0..7    "CNGPCKPT"
//   bytes 8..11   u32 format version
//   bytes 12..15  u32 reserved (0)
//   bytes 16..23  u64 manifest length M
//   bytes 24..    manifest (UTF-8 JSON), zero padded to a multiple of 16
//   data section  tensors at manifest offsets (relative to the section start)

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cngp/field_net.hpp"
#include "cngp/scene_data.hpp"

namespace cngp {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'N', 'G', 'P', 'C', 'K', 'P', 'T'};

struct StoredScene {
  std::vector<Camera> cameras;
  Color background{1.0f, 1.0f, 1.0f};

  friend bool operator==(const StoredScene&, const StoredScene&) = default;
};

struct Checkpoint {
  ModelParams<float> params;
  std::map<int, StoredScene> scenes;  // cameras kept per label for offline replay
  std::string profile = "desk";
  std::vector<std::string> history;

  std::string history_digest() const {
    std::uint64_t h = fnv1a("");
    for (const auto& e : history) h = fnv1a(e + "\n", h);
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }
};

inline Checkpoint make_checkpoint(ModelParams<float> params, std::string profile = "desk") {
  Checkpoint c;
  c.params = std::move(params);
  c.profile = std::move(profile);
  return c;
}

namespace detail {

inline nlohmann::json camera_json(const Camera& c) {
  nlohmann::json pose = nlohmann::json::array();
  for (const auto& row : c.pose) pose.push_back(row);
  return {{"width", c.width}, {"height", c.height}, {"focal", c.focal},
          {"near", c.near},   {"far", c.far},       {"pose", pose}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.focal = j.at("focal").get<double>();
  c.near = j.at("near").get<double>();
  c.far = j.at("far").get<double>();
  const auto& pose = j.at("pose");
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) c.pose[r][k] = pose.at(r).at(k).get<double>();
  return c;
}

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t read_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

inline std::size_t padded16(std::size_t n) { return (n + 15) / 16 * 16; }

}  // namespace detail

inline nlohmann::json grid_json(const HashGridConfig& g) {
  return {{"levels", g.levels},
          {"log2_table_size", g.log2_table_size},
          {"features", g.features},
          {"n_min", g.n_min},
          {"n_max", g.n_max},
          {"primes", g.primes}};
}

inline HashGridConfig grid_from_json(const nlohmann::json& j) {
  HashGridConfig g;
  g.levels = j.at("levels").get<int>();
  g.log2_table_size = j.at("log2_table_size").get<int>();
  g.features = j.at("features").get<int>();
  g.n_min = j.at("n_min").get<int>();
  g.n_max = j.at("n_max").get<int>();
  g.primes = j.at("primes").get<std::array<std::uint32_t, 4>>();
  return g;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const ModelParams<float>& p = ck.params;
  nlohmann::json m;
  m["format"] = "cngp-checkpoint";
  m["version"] = kCheckpointVersion;
  m["grid"] = grid_json(p.cfg);
  m["mode"] = to_string(p.mode);
  m["net"] = {{"width", p.dims.width}, {"feature_dim", p.dims.feature_dim}, {"pe_alpha", p.dims.pe_alpha}};
  m["labels"] = p.label_registry;
  m["scenes"] = nlohmann::json::array();
  for (const auto& [label, sc] : ck.scenes) {
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& c : sc.cameras) cams.push_back(detail::camera_json(c));
    m["scenes"].push_back({{"label", label}, {"background", sc.background}, {"cameras", cams}});
  }
  m["profile"] = ck.profile;
  m["history"] = ck.history;
  m["history_digest"] = ck.history_digest();

  std::string data;
  nlohmann::json tensors = nlohmann::json::array();
  p.tensors.for_each([&](const std::string& name, std::span<const float> v, const std::vector<std::size_t>& shape) {
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", shape}, {"offset", data.size()},
                       {"bytes", v.size() * 4}});
    for (float x : v) detail::append_u32(data, std::bit_cast<std::uint32_t>(x));
  });
  m["tensors"] = tensors;
  m["data_bytes"] = data.size();

  const std::string manifest = m.dump();
  std::string out(kCheckpointMagic, 8);
  detail::append_u32(out, kCheckpointVersion);
  detail::append_u32(out, 0);
  detail::append_u64(out, manifest.size());
  out += manifest;
  out.resize(detail::padded16(out.size()), '\0');
  out += data;
  return out;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("short write on checkpoint " + path.string());
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 24 || std::memcmp(b, kCheckpointMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(detail::read_le(b + 8, 4));
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t mlen = detail::read_le(b + 16, 8);
  if (mlen > bytes.size() - 24) throw FormatError("checkpoint: truncated manifest");
  const std::size_t data_start = detail::padded16(24 + mlen);
  if (data_start > bytes.size()) throw FormatError("checkpoint: truncated file");

  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.substr(24, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  std::vector<std::tuple<std::string, std::vector<std::size_t>, std::uint64_t, std::uint64_t>> entries;
  std::uint64_t data_bytes = 0;
  try {
    if (m.at("version").get<std::uint32_t>() != kCheckpointVersion) throw FormatError("checkpoint: manifest version mismatch");
    ModelParams<float>& p = ck.params;
    p.cfg = grid_from_json(m.at("grid"));
    validate(p.cfg);
    p.mode = conditioning_mode_from_string(m.at("mode").get<std::string>());
    p.dims.width = m.at("net").at("width").get<int>();
    p.dims.feature_dim = m.at("net").at("feature_dim").get<int>();
    p.dims.pe_alpha = m.at("net").at("pe_alpha").get<int>();
    p.label_registry = m.at("labels").get<std::vector<int>>();
    for (const auto& s : m.at("scenes")) {
      StoredScene sc;
      sc.background = s.at("background").get<Color>();
      for (const auto& c : s.at("cameras")) sc.cameras.push_back(detail::camera_from_json(c));
      ck.scenes[s.at("label").get<int>()] = std::move(sc);
    }
    ck.profile = m.at("profile").get<std::string>();
    ck.history = m.at("history").get<std::vector<std::string>>();
    data_bytes = m.at("data_bytes").get<std::uint64_t>();
    for (const auto& t : m.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") throw FormatError("checkpoint: unsupported dtype");
      entries.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::size_t>>(),
                           t.at("offset").get<std::uint64_t>(), t.at("bytes").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (m.value("history_digest", std::string()) != ck.history_digest()) {
    throw FormatError("checkpoint: history digest mismatch");
  }
  if (bytes.size() != data_start + data_bytes) throw FormatError("checkpoint: file size does not match manifest");

  // Offsets must lie inside the data section and must not overlap.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, shape, offset, nbytes] : entries) {
    if (offset > data_bytes || nbytes > data_bytes - offset) {
      throw FormatError("checkpoint: tensor " + name + " lies outside the data section");
    }
    ranges.emplace_back(offset, offset + nbytes);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw FormatError("checkpoint: overlapping tensor ranges");
  }

  ModelParams<float>& p = ck.params;
  p.tensors = ModelTensors<float>(p.cfg, p.mode, p.dims);
  std::size_t idx = 0;
  bool mismatch = false;
  std::string bad;
  p.tensors.for_each([&](const std::string& name, std::span<float> v, const std::vector<std::size_t>& shape) {
    if (idx >= entries.size()) {
      mismatch = true;
      bad = name;
      return;
    }
    const auto& [ename, eshape, offset, nbytes] = entries[idx++];
    if (ename != name || eshape != shape || nbytes != v.size() * 4) {
      mismatch = true;
      if (bad.empty()) bad = name;
      return;
    }
    const unsigned char* src = b + data_start + offset;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::read_le(src + 4 * i, 4)));
    }
  });
  if (mismatch || idx != entries.size()) {
    throw ValidationError("checkpoint: tensor table inconsistent with the grid/network configuration (at " +
                          (bad.empty() ? std::string("tensor count") : bad) + ")");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace cngp
