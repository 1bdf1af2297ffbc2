#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmae/tensor.hpp"

namespace vmae {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Named float32 tensors plus ordered key=value metadata.
///
/// On disk: a text manifest followed by the concatenated little-endian
/// float32 payloads.
///
///   vmae-checkpoint 1
///   meta <key>=<value>                       (one per metadata entry)
///   tensor name=<n> shape=<a>x<b> offset=<bytes> dtype=f32le hash=<fnv1a64 hex>
///   payload_bytes=<total>
///   end
///   <payload>
struct Checkpoint {
  KeyValues meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  void set(const std::string& key, std::string value);
  std::optional<std::string> get(const std::string& key) const;
  /// Throws CheckpointError naming the key when absent.
  const std::string& require(const std::string& key) const;

  void add(std::string name, Tensor<float> tensor);
  const Tensor<float>* find(const std::string& name) const;
  const Tensor<float>& tensor(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

/// FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t size);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary and renames into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vmae
