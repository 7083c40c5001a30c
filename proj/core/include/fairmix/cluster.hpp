#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "fairmix/race.hpp"

namespace fairmix {

/// Embeddings grouped by race; each matrix holds one embedding per row.
using RaceGroups = PerRace<Eigen::MatrixXd>;

struct ClusterConfig {
  int k = 20;
  std::size_t samples_per_race = 5000;
  std::uint64_t seed = 1;
  double epsilon = 1e-6;  ///< floor on neighbour distance for vote weights

  void validate() const;
};

using MembershipMatrix = std::array<std::array<double, kNumRaces>, kNumRaces>;

/// Per race: mean over images of 1 - cos(x_i, mu) with mu the raw mean
/// embedding. Throws std::invalid_argument on an empty group, a zero
/// embedding, or a zero mean vector.
PerRace<double> intra_race_cosine(const RaceGroups& groups);

struct KnnResult {
  /// M[true race][assigned race], fractions of the sampled images.
  MembershipMatrix membership{};
  /// Row indices (into each race's group) of the sampled images, ascending.
  PerRace<std::vector<Eigen::Index>> sampled;
  /// Assigned race of every sampled image, aligned with `sampled`.
  PerRace<std::vector<Race>> assigned;
};

/// Samples cfg.samples_per_race embeddings per race without replacement,
/// then classifies each by weighted k-NN voting over the pooled sample under
/// cosine distance, excluding the query itself. Throws std::invalid_argument
/// when a race has fewer embeddings than samples_per_race.
KnnResult knn_membership(const RaceGroups& groups, const ClusterConfig& cfg);

struct ClusterReport {
  PerRace<double> compactness{};
  MembershipMatrix membership{};
};

ClusterReport cluster_report(const RaceGroups& groups, const ClusterConfig& cfg);

/// {"compactness": {...}, "membership": [[...], ...], "races": [...]}
void write_cluster_json(const std::filesystem::path& path, const ClusterReport& report);
/// race,compactness,to_afr,to_asi,to_cau,to_ind
void write_cluster_csv(const std::filesystem::path& path, const ClusterReport& report);

}  // namespace fairmix
