#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poco/error.hpp"
#include "poco/model.hpp"

namespace poco::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On disk: "POCO", u32 version, u64 header length, JSON header, then the
/// float32 payloads. All integers and floats are little-endian.
struct Checkpoint {
  model::ModelConfig model;
  std::vector<model::NamedArray> arrays;     // model parameters and buffers
  std::vector<model::NamedArray> optimizer;  // optional optimizer moments
  nlohmann::json metadata = nlohmann::json::object();
};

enum class CheckpointFault { BadMagic, VersionMismatch, Truncated, Inconsistent, ChecksumMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& message)
      : Error(ErrorKind::Format, "checkpoint", message), fault_(fault) {}
  CheckpointFault fault() const noexcept { return fault_; }

 private:
  CheckpointFault fault_;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the serialized bytes.
std::string checkpoint_hash(const Checkpoint& ckpt);

/// Builds a model from the checkpoint's config and arrays.
template <typename T>
model::Model<T> restore_model(const Checkpoint& ckpt);

}  // namespace poco::pipeline
