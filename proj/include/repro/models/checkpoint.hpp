#pragma once

// RPKT checkpoint container.
//
//   offset  field
//   0       magic "RPKT"
//   4       u16 version (= 1)
//   6       u32 metadata byte length L
//   10      L bytes UTF-8 JSON metadata
//   10+L    u32 entry count
//   then per entry:
//           u16 name length, name bytes (UTF-8)
//           u8 dtype code (1 = float32)
//           u8 rank, rank x u32 dims
//           numel x 4 bytes little-endian values
//
// All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "repro/autodiff/parameter.hpp"

namespace repro::models {

inline constexpr char kCheckpointMagic[4] = {'R', 'P', 'K', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

struct CheckpointEntry {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  static Checkpoint from_store(const ad::ParameterStore& store, nlohmann::json metadata);
  /// Copies every entry into the store parameter of the same name and shape.
  void load_into(ad::ParameterStore& store) const;
  const CheckpointEntry& entry(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// SHA-256 of the serialized parameters of a store (names, shapes, values).
std::string parameter_checksum(const ad::ParameterStore& store);

}  // namespace repro::models
