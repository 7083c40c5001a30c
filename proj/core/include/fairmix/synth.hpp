#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairmix/corpus.hpp"
#include "fairmix/evalproto.hpp"
#include "fairmix/feature_store.hpp"

namespace fairmix {

/// Gaussian identity corpus: per race, identity means are drawn around a race
/// prototype and images around their identity mean.
struct SynthConfig {
  std::size_t dims = 64;
  /// Race prototype means; a race left empty gets a seeded N(0, I) prototype.
  PerRace<std::vector<double>> prototypes;
  double sigma_between = 1.0;
  double sigma_within = 0.35;
  /// Optional per-dimension multipliers on sigma_between, per race.
  PerRace<std::vector<double>> spread;
  std::size_t subjects_per_race = 200;
  std::size_t images_per_subject = 6;
  /// Each subject gets images_per_subject + U{0..extra_images_max} images.
  std::size_t extra_images_max = 0;
  std::uint64_t seed = 1;
  /// Prepended to subject and image ids so train and test corpora never collide.
  std::string id_prefix;

  /// Throws std::invalid_argument on non-positive spreads or dims < 2.
  void validate() const;
};

/// Desk-scale default: the feature space is split into four blocks and race r
/// varies identities mostly inside block r (multiplier 1 there, `off_block`
/// elsewhere).
SynthConfig block_structured_config(std::size_t dims, std::uint64_t seed, double off_block = 0.25);

struct SynthCorpus {
  std::vector<ImageRecord> catalog;
  FeatureStore features;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

/// Balanced verification pairs per race: every fold holds per_fold/2 matched
/// and per_fold/2 mismatched pairs. pairs_per_race must be a multiple of
/// 2*folds.
PairSet synth_pairs(const std::vector<ImageRecord>& catalog, std::size_t pairs_per_race,
                    std::size_t folds, std::uint64_t seed);

}  // namespace fairmix
