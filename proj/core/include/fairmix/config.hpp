#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmix/corpus.hpp"
#include "fairmix/augment.hpp"
#include "fairmix/cluster.hpp"
#include "fairmix/embednet.hpp"

namespace fairmix {

enum class Design { SingleRace, DistributionSweep, GrowthStudy, NoiseStudy };

/// "single-race", "sweep", "growth", "noise".
std::string_view design_name(Design d) noexcept;
Design parse_design(std::string_view text);

struct SyntheticCorpusSettings {
  std::size_t dims = 64;
  std::size_t subjects_per_race = 200;
  std::size_t images_per_subject = 6;
  std::size_t extra_images_max = 0;
  double sigma_between = 1.0;
  double sigma_within = 0.35;
  double off_block = 0.25;
  std::size_t test_subjects_per_race = 100;
  std::size_t test_images_per_subject = 6;
};

struct CorpusSettings {
  std::string source = "synthetic";  ///< "synthetic" or "catalog"
  SyntheticCorpusSettings synthetic;
  std::string catalog;   ///< training catalog CSV (catalog source)
  std::string features;  ///< feature store covering training and test images
};

struct PairSettings {
  std::string path;  ///< pair CSV (catalog source); synthetic pairs otherwise
  std::size_t pairs_per_race = 600;
  std::size_t folds = 10;
};

struct SamplingSettings {
  std::int64_t total_subjects = 200;
  std::size_t images_per_subject = 6;
  std::size_t single_race_subjects = 200;
  /// 0 means every image of each selected subject.
  std::size_t single_race_images = 0;
};

struct ClusterSettings {
  bool enabled = false;
  int k = 20;
  std::size_t samples_per_race = 400;
  double epsilon = 1e-6;
};

struct NoiseSettings {
  std::vector<double> probabilities{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  int grid = 4;
  int kmin = 11;
  int kmax = 21;
  double variance = 1.5;
};

struct ExperimentConfig {
  Design design = Design::DistributionSweep;
  std::uint64_t seed = 1;
  int trials = 5;
  std::vector<LossHead> heads{ArcFace{}};
  std::string output_dir;
  CorpusSettings corpus;
  PairSettings pairs;
  SamplingSettings sampling;
  /// head and seed are ignored here: heads come from `heads`, seeds from the
  /// experiment's seed hierarchy.
  TrainConfig train;
  ClusterSettings cluster;
  GrowthPreset growth;
  NoiseSettings noise;

  /// Throws std::invalid_argument on invalid fields or unreadable paths.
  void validate() const;
};

/// Desk-scale defaults for a design.
ExperimentConfig default_config(Design design);

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
/// Strict: unknown keys are rejected. Missing keys keep the design defaults.
ExperimentConfig config_from_json(const nlohmann::json& j, std::optional<Design> design = std::nullopt);

/// Sets a dotted key ("train.epochs") in `j`. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, std::string_view dotted_key, std::string_view value);

/// Defaults for the design, then the optional JSON file, then overrides.
ExperimentConfig build_config(Design design, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

/// Hex digest of the canonical config, ignoring output_dir.
std::string config_hash(const ExperimentConfig& cfg);

/// output_dir, prefixed by $FAIRMIX_OUTPUT_ROOT when relative; defaults to
/// "runs/<design>".
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

}  // namespace fairmix
