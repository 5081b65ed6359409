#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "filmens/model.hpp"

namespace filmens {

/// CRC32 (reflected, polynomial 0xEDB88320, zlib convention).
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'F', 'I', 'L', 'M', 'E', 'N', 'S', '1'};
inline constexpr int kCheckpointVersion = 1;

template <typename S>
const char* dtype_name() {
  if constexpr (sizeof(S) == 4) return "f32";
  else return "f64";
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"kind", to_string(c.kind)},
                        {"input_shape", c.input_shape},
                        {"num_classes", c.num_classes},
                        {"ensemble_size", c.ensemble_size},
                        {"gain", c.gain},
                        {"dropout_rate", c.dropout_rate},
                        {"widths", c.widths}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.input_shape = j.at("input_shape").get<Shape>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.ensemble_size = j.at("ensemble_size").get<std::size_t>();
  c.gain = j.at("gain").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.widths = j.at("widths").get<std::vector<std::size_t>>();
  return c;
}

inline void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

}  // namespace detail

/// Checkpoint layout: 8 magic bytes "FILMENS1", a little-endian u32 length
/// prefix, a UTF-8 JSON header (model config + buffer manifest with name,
/// shape, dtype and byte offset), the raw little-endian buffers in manifest
/// order, and a trailing CRC32 of everything before it.
template <typename S>
void save_checkpoint(Model<S>& model, const std::string& path, std::size_t trained_epochs = 0) {
  std::vector<NamedTensor<S>> entries = model.named_parameters();
  for (auto& b : model.named_buffers()) entries.push_back(b);

  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    manifest.push_back({{"name", e.name},
                        {"shape", e.tensor.shape()},
                        {"dtype", detail::dtype_name<S>()},
                        {"offset", offset}});
    offset += e.tensor.size() * sizeof(S);
  }
  nlohmann::json header{{"version", detail::kCheckpointVersion},
                        {"config", detail::config_to_json(model.config)},
                        {"trained_epochs", trained_epochs},
                        {"buffers", manifest}};
  const std::string header_str = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), std::begin(detail::kCheckpointMagic),
               std::end(detail::kCheckpointMagic));
  detail::append_u32(bytes, static_cast<std::uint32_t>(header_str.size()));
  bytes.insert(bytes.end(), header_str.begin(), header_str.end());
  for (const auto& e : entries) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.tensor.data());
    bytes.insert(bytes.end(), p, p + e.tensor.size() * sizeof(S));
  }
  detail::append_u32(bytes, crc32(bytes.data(), bytes.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_checkpoint: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("save_checkpoint: write failed on " + path);
}

/// Rebuilds the model from the stored config and restores every buffer.
/// Fails (without returning a partial model) on bad magic, version, CRC,
/// dtype, or shape; `expected_members` guards against loading a checkpoint
/// into a context built for a different ensemble size.
template <typename S>
Model<S> load_checkpoint(const std::string& path,
                         std::optional<std::size_t> expected_members = std::nullopt,
                         std::size_t* trained_epochs = nullptr) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("load_checkpoint: cannot open " + path);
  const auto total = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> bytes(total);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
  if (!f) throw FormatError("load_checkpoint: short read on " + path);

  if (total < 16 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 8) != 0)
    throw FormatError("load_checkpoint: " + path + " is not a FILMENS1 checkpoint");
  const std::uint32_t stored_crc = bytes[total - 4] | (bytes[total - 3] << 8) |
                                   (bytes[total - 2] << 16) |
                                   (static_cast<std::uint32_t>(bytes[total - 1]) << 24);
  const std::uint32_t actual_crc = crc32(bytes.data(), total - 4);
  if (stored_crc != actual_crc)
    throw FormatError("load_checkpoint: CRC mismatch in " + path + " (expected " +
                      std::to_string(stored_crc) + ", found " + std::to_string(actual_crc) + ")");
  std::uint32_t header_len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) |
                             (static_cast<std::uint32_t>(bytes[11]) << 24);
  if (12 + static_cast<std::size_t>(header_len) + 4 > total)
    throw FormatError("load_checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_checkpoint: bad header JSON in " + path + ": " + e.what());
  }
  const int version = header.at("version").get<int>();
  if (version != detail::kCheckpointVersion)
    throw FormatError("load_checkpoint: version mismatch (expected " +
                      std::to_string(detail::kCheckpointVersion) + ", found " +
                      std::to_string(version) + ")");
  ModelConfig config = detail::config_from_json(header.at("config"));
  if (trained_epochs)
    *trained_epochs = header.value("trained_epochs", std::size_t{0});
  if (expected_members && config.ensemble_size != *expected_members)
    throw FormatError("load_checkpoint: checkpoint has ensemble_size " +
                      std::to_string(config.ensemble_size) + ", context expects " +
                      std::to_string(*expected_members));

  Model<S> model = build_model<S>(config, std::uint64_t{0});
  std::vector<NamedTensor<S>> entries = model.named_parameters();
  for (auto& b : model.named_buffers()) entries.push_back(b);

  const std::size_t payload_base = 12 + header_len;
  const std::size_t payload_len = total - payload_base - 4;
  const auto& manifest = header.at("buffers");
  if (manifest.size() != entries.size())
    throw FormatError("load_checkpoint: manifest has " + std::to_string(manifest.size()) +
                      " buffers, model has " + std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& m = manifest[i];
    const std::string name = m.at("name").get<std::string>();
    if (name != entries[i].name)
      throw FormatError("load_checkpoint: buffer " + std::to_string(i) + " is '" + name +
                        "', model expects '" + entries[i].name + "'");
    if (m.at("dtype").get<std::string>() != detail::dtype_name<S>())
      throw FormatError("load_checkpoint: buffer '" + name + "' has dtype " +
                        m.at("dtype").get<std::string>() + ", expected " +
                        detail::dtype_name<S>());
    const Shape shape = m.at("shape").get<Shape>();
    if (shape != entries[i].tensor.shape())
      throw FormatError("load_checkpoint: buffer '" + name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(entries[i].tensor.shape()));
    const auto offset = m.at("offset").get<std::size_t>();
    const std::size_t nbytes = entries[i].tensor.size() * sizeof(S);
    if (offset + nbytes > payload_len)
      throw FormatError("load_checkpoint: buffer '" + name + "' overruns payload");
    std::memcpy(entries[i].tensor.data(), bytes.data() + payload_base + offset, nbytes);
  }
  return model;
}

}  // namespace filmens
