#pragma once

// Checkpoint file layout:
//   "SOUPCKPT" | version byte 0x01 | u64 LE header length | UTF-8 JSON header | f64 LE data
// Header: {config, lineage, seed, tensors: {name: {shape, offset}}}, offsets in bytes
// relative to the end of the header.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "soupkit/error.hpp"
#include "soupkit/io.hpp"
#include "soupkit/model.hpp"

namespace soupkit {

inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'U', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  nlohmann::ordered_json header;
  header["config"] = to_json(ckpt.config);
  header["lineage"] = ckpt.lineage;
  header["seed"] = ckpt.seed;
  nlohmann::ordered_json index = nlohmann::ordered_json::object();
  const auto units = enumerate_units(ckpt.config);
  std::uint64_t offset = 0;
  for (const auto& u : units) {
    const auto& t = ckpt.at(u);
    index[u.tensor_name()] = {{"shape", t.shape}, {"offset", offset}};
    offset += t.size() * sizeof(double);
  }
  header["tensors"] = std::move(index);
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  out.push_back(static_cast<char>(kCheckpointVersion));
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& u : units) {
    const auto& t = ckpt.at(u);
    const auto* bytes = reinterpret_cast<const char*>(t.data.data());
    out.append(bytes, t.size() * sizeof(double));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t prefix = sizeof kCheckpointMagic + 1 + 8;
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    fail("not a checkpoint: bad magic");
  if (bytes.size() < prefix) fail("checkpoint header truncated");
  if (static_cast<std::uint8_t>(bytes[sizeof kCheckpointMagic]) != kCheckpointVersion)
    fail("unsupported checkpoint version");
  const std::uint64_t header_len = detail::get_u64(bytes, sizeof kCheckpointMagic + 1);
  if (header_len > bytes.size() - prefix) fail("checkpoint header truncated");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + prefix,
                                           bytes.begin() + static_cast<long>(prefix + header_len));
  } catch (const nlohmann::json::exception& e) {
    fail("malformed checkpoint header: ", e.what());
  }

  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.lineage = header.at("lineage").get<std::vector<std::string>>();
    ckpt.seed = header.at("seed").get<std::int64_t>();
    for (const auto& [name, info] : header.at("tensors").items())
      entries.push_back({name, info.at("shape").get<Shape>(), info.at("offset").get<std::uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    fail("malformed checkpoint header: ", e.what());
  }

  const std::size_t data_begin = prefix + header_len;
  const std::uint64_t data_len = bytes.size() - data_begin;
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const bool last = i + 1 == entries.size();
    const std::uint64_t need = element_count(e.shape) * sizeof(double);
    if (e.offset > data_len || (last && data_len - e.offset < need))
      fail("unexpected end of tensor data in tensor '", e.name, "'");
    const std::uint64_t span = (last ? data_len : entries[i + 1].offset) - e.offset;
    if (span != need) {
      if (span % sizeof(double) != 0 || !last)
        fail("tensor '", e.name, "': shape ", shape_string(e.shape), " needs ",
             std::to_string(element_count(e.shape)), " values but ",
             std::to_string(span / sizeof(double)), " present");
      fail("trailing bytes after tensor '", e.name, "'");
    }
    Tensor t(e.shape);
    std::memcpy(t.data.data(), bytes.data() + data_begin + e.offset, need);
    if (!t.all_finite()) fail("tensor '", e.name, "': non-finite value");
    ckpt.tensors.emplace(e.name, std::move(t));
  }
  ckpt.validate();
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace soupkit
