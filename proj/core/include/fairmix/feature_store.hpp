#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fairmix {

/// Image id -> raw input vector. Rows are stored contiguously as float32 in
/// insertion order.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::size_t dims) : dims_(dims) {}

  std::size_t dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  /// Throws std::invalid_argument on a duplicate id or wrong dimension.
  void add(std::string id, std::span<const float> values);
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Throws std::out_of_range for an unknown id.
  std::span<const float> at(const std::string& id) const;
  std::span<float> mutable_at(const std::string& id);
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }

  /// Writes <path> (raw little-endian float32) and <path>.json sidecar
  /// {"dims", "count", "ids"}.
  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path);

  const std::vector<float>& raw() const noexcept { return data_; }

 private:
  std::size_t dims_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

}  // namespace fairmix
