#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prosynth/nn.hpp"

namespace ps {

/// Named-tensor archive with a JSON metadata manifest and a schema id.
/// Layout: magic "PSCK", schema u32, metadata (u64 length + UTF-8 JSON),
/// tensor count u32, then (name length u32, name, tensor blob) entries.
class Checkpoint {
 public:
  static constexpr std::uint32_t kSchemaVersion = 1;

  nlohmann::ordered_json metadata;

  void put(const std::string& name, Mat tensor);
  bool has(const std::string& name) const;
  const Mat& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Mat>>& tensors() const {
    return tensors_;
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// Stores every registry entry under prefix; optimizer state (adam_m/v)
  /// included when with_optimizer.
  void put_registry(const std::string& prefix, const nn::ParamRegistry& reg,
                    bool with_optimizer);
  /// Restores values (and optimizer state when present) into an
  /// already-constructed registry; shapes must match.
  void load_registry(const std::string& prefix, nn::ParamRegistry& reg) const;

 private:
  std::vector<std::pair<std::string, Mat>> tensors_;
};

}  // namespace ps
