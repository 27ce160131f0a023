#include "poco/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "poco/config.hpp"

namespace poco::pipeline {

namespace {
using nlohmann::json;
constexpr char kMagic[4] = {'P', 'O', 'C', 'O'};
constexpr std::size_t kPreamble = 4 + 4 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> encode_floats(const std::vector<float>& values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * 4);
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

json describe(const std::vector<model::NamedArray>& arrays, std::vector<std::uint8_t>& payload) {
  json list = json::array();
  for (const auto& a : arrays) {
    if (nn::shape_numel(a.shape) != a.values.size()) {
      throw CheckpointError(CheckpointFault::Inconsistent,
                            "array '" + a.name + "' holds " + std::to_string(a.values.size()) +
                                " values for shape " + nn::shape_string(a.shape));
    }
    const auto bytes = encode_floats(a.values);
    list.push_back({{"name", a.name},
                    {"shape", a.shape},
                    {"offset", payload.size()},
                    {"bytes", bytes.size()},
                    {"crc32", crc(bytes.data(), bytes.size())}});
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
  return list;
}

// Entries must tile the payload contiguously starting at `cursor`, which is advanced.
std::vector<model::NamedArray> read_arrays(const json& list, std::span<const std::uint8_t> payload,
                                           const std::string& origin, std::uint64_t& cursor) {
  std::vector<model::NamedArray> out;
  if (!list.is_array()) throw CheckpointError(CheckpointFault::Inconsistent, origin + ": tensor table is not a list");
  std::uint64_t& expected_offset = cursor;
  for (const auto& e : list) {
    model::NamedArray a;
    std::uint64_t offset = 0, bytes = 0;
    std::uint32_t sum = 0;
    try {
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<nn::Shape>();
      offset = e.at("offset").get<std::uint64_t>();
      bytes = e.at("bytes").get<std::uint64_t>();
      sum = e.at("crc32").get<std::uint32_t>();
    } catch (const json::exception& ex) {
      throw CheckpointError(CheckpointFault::Inconsistent, origin + ": malformed tensor entry: " + ex.what());
    }
    if (bytes != nn::shape_numel(a.shape) * 4) {
      throw CheckpointError(CheckpointFault::Inconsistent,
                            origin + ": tensor '" + a.name + "' declares " + std::to_string(bytes) +
                                " bytes for shape " + nn::shape_string(a.shape));
    }
    if (offset != expected_offset) {
      throw CheckpointError(CheckpointFault::Inconsistent,
                            origin + ": tensor '" + a.name + "' at offset " + std::to_string(offset) +
                                ", expected " + std::to_string(expected_offset));
    }
    if (offset + bytes > payload.size()) {
      throw CheckpointError(CheckpointFault::Truncated,
                            origin + ": payload ends before tensor '" + a.name + "' (needs " +
                                std::to_string(offset + bytes) + " bytes, have " +
                                std::to_string(payload.size()) + ")");
    }
    const auto* p = payload.data() + offset;
    if (crc(p, bytes) != sum) {
      throw CheckpointError(CheckpointFault::ChecksumMismatch,
                            origin + ": checksum mismatch in tensor '" + a.name + "'");
    }
    a.values.resize(bytes / 4);
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    expected_offset = offset + bytes;
    out.push_back(std::move(a));
  }
  return out;
}
}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> payload;
  json header;
  header["model"] = model_to_json(ckpt.model);
  header["tensors"] = describe(ckpt.arrays, payload);
  header["optimizer"] = describe(ckpt.optimizer, payload);
  header["parameter_count"] = model::Model<float>(ckpt.model, 0).parameter_count();
  header["metadata"] = ckpt.metadata;
  header["payload_bytes"] = payload.size();
  const auto text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + text.size() + payload.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointFault::BadMagic, origin + ": not a checkpoint (bad magic bytes)");
  }
  if (bytes.size() < kPreamble) throw CheckpointError(CheckpointFault::Truncated, origin + ": truncated preamble");
  const auto version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointFault::VersionMismatch,
                          origin + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - kPreamble) {
    throw CheckpointError(CheckpointFault::Truncated, origin + ": truncated header");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& ex) {
    throw CheckpointError(CheckpointFault::Inconsistent, origin + ": unreadable header: " + ex.what());
  }
  const auto payload = bytes.subspan(kPreamble + header_len);
  Checkpoint ckpt;
  std::size_t declared_params = 0;
  try {
    ckpt.model = model_from_json(header.at("model"));
    ckpt.metadata = header.at("metadata");
    const auto declared = header.at("payload_bytes").get<std::uint64_t>();
    if (declared > payload.size()) {
      throw CheckpointError(CheckpointFault::Truncated,
                            origin + ": payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                                std::to_string(declared));
    }
    if (declared < payload.size()) {
      throw CheckpointError(CheckpointFault::Inconsistent, origin + ": trailing bytes after payload");
    }
    std::uint64_t cursor = 0;
    ckpt.arrays = read_arrays(header.at("tensors"), payload, origin, cursor);
    declared_params = header.at("parameter_count").get<std::size_t>();
    ckpt.optimizer = read_arrays(header.at("optimizer"), payload, origin, cursor);
    if (cursor != declared) {
      throw CheckpointError(CheckpointFault::Inconsistent, origin + ": tensor table does not cover the payload");
    }
  } catch (const json::exception& ex) {
    throw CheckpointError(CheckpointFault::Inconsistent, origin + ": malformed header: " + ex.what());
  }
  // The arrays must fit the declared model exactly.
  model::Model<float> probe(ckpt.model, 0);
  try {
    probe.load_state(ckpt.arrays);
  } catch (const Error& ex) {
    throw CheckpointError(CheckpointFault::Inconsistent, origin + ": " + ex.what());
  }
  if (declared_params != probe.parameter_count()) {
    throw CheckpointError(CheckpointFault::Inconsistent, origin + ": parameter_count " + std::to_string(declared_params) +
                                                             " disagrees with the model config (" +
                                                             std::to_string(probe.parameter_count()) + ")");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "checkpoint", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "checkpoint", "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "checkpoint", "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : serialize(ckpt)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <typename T>
model::Model<T> restore_model(const Checkpoint& ckpt) {
  model::Model<T> m(ckpt.model, 0);
  m.load_state(ckpt.arrays);
  return m;
}

template model::Model<float> restore_model<float>(const Checkpoint&);
template model::Model<double> restore_model<double>(const Checkpoint&);

}  // namespace poco::pipeline
