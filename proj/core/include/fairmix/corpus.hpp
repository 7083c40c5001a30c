#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmix/distributions.hpp"
#include "fairmix/race.hpp"

namespace fairmix {

struct FaceBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct ImageRecord {
  std::string image_id;
  std::string subject_id;
  Race race = Race::African;
  std::string locator;  ///< file path, or "synthetic:<seed>"
  std::optional<FaceBox> box;
  std::optional<ImageSize> size;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Checks the record's face box against its dimensions; throws std::invalid_argument.
void validate_record(const ImageRecord& record);

/// Catalog CSV: image_id,subject_id,race,path,box_x,box_y,box_w,box_h,img_w,img_h.
/// Box and size columns may be empty.
std::vector<ImageRecord> read_catalog(const std::filesystem::path& path);
void write_catalog(const std::filesystem::path& path, std::span<const ImageRecord> catalog);

struct PoolSubject {
  std::string subject_id;
  Race race = Race::African;
  std::vector<std::string> image_ids;  ///< ascending
};

/// Per race, subjects ranked by descending image count (ties by subject id).
struct SubjectPool {
  PerRace<std::vector<PoolSubject>> ranked;
  std::size_t per_race_cap = 0;
  /// Races with fewer than per_race_cap eligible subjects.
  std::vector<Race> short_races;

  const std::vector<PoolSubject>& operator[](Race r) const { return ranked[index_of(r)]; }
  const PoolSubject* find(const std::string& subject_id) const;
};

/// Throws std::invalid_argument for an empty catalog.
SubjectPool build_subject_pool(std::span<const ImageRecord> catalog, std::size_t per_race_cap,
                               std::size_t images_per_subject);

struct ManifestEntry {
  std::string subject_id;
  Race race = Race::African;
  std::vector<std::string> image_ids;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::string experiment_id;
  std::string design;  ///< "distribution", "single-race", "growth-base", ...
  std::optional<RaceMix> mix;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  SubjectCounts subject_counts() const;
  PerRace<std::int64_t> image_counts() const;
  std::size_t image_count() const;
  /// Throws std::logic_error when an image id appears twice.
  void check_unique_images() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Top-ranked subjects per race; images drawn without replacement from a
/// per-subject stream keyed by (seed, subject id). Throws std::runtime_error
/// when a race's pool is too small.
DatasetManifest sample_manifest(const SubjectPool& pool, const SubjectCounts& counts,
                                std::size_t images_per_subject, std::uint64_t seed);

/// All weight on one race. With no images_per_subject every image of each
/// selected subject is used.
DatasetManifest single_race_manifest(const SubjectPool& pool, Race race, std::size_t subjects,
                                     std::uint64_t seed,
                                     std::optional<std::size_t> images_per_subject = std::nullopt);

enum class GrowthMode { MoreImages, MoreSubjects };

std::string_view growth_mode_name(GrowthMode m) noexcept;
GrowthMode parse_growth_mode(std::string_view text);

/// Base design: base_subjects x base_images per race. Growth adds either
/// extra_images to every existing subject of one race, or new_subjects with
/// new_subject_images each. Defaults give 12500 added images either way.
struct GrowthPreset {
  std::size_t base_subjects = 2500;
  std::size_t base_images = 10;
  std::size_t extra_images = 5;
  std::size_t new_subjects = 1250;
  std::size_t new_subject_images = 10;

  std::size_t added_images(GrowthMode m) const noexcept {
    return m == GrowthMode::MoreImages ? base_subjects * extra_images
                                       : new_subjects * new_subject_images;
  }
};

DatasetManifest growth_base_manifest(const SubjectPool& pool, const GrowthPreset& preset,
                                     std::uint64_t seed);

/// Adds data for one race to a base manifest; other races are untouched.
/// Throws std::runtime_error when the pool lacks spare images or subjects.
DatasetManifest grow_manifest(const DatasetManifest& base, Race race, GrowthMode mode,
                              const SubjectPool& pool, const GrowthPreset& preset,
                              std::uint64_t seed);

/// JSON-lines: a header object, then one object per subject.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace fairmix
