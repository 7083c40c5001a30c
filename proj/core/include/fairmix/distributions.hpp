#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/rational.hpp>

#include "fairmix/race.hpp"

namespace fairmix {

using Weight = boost::rational<std::int64_t>;

/// Composition of a training set over the four races, as exact fractions.
/// Always nonnegative and summing to exactly one.
class RaceMix {
 public:
  /// Throws std::invalid_argument unless every weight is >= 0 and they sum to 1.
  explicit RaceMix(const PerRace<Weight>& weights);

  static RaceMix uniform();
  /// All weight on one race.
  static RaceMix corner(Race r);

  const Weight& operator[](Race r) const noexcept { return weights_[index_of(r)]; }
  const PerRace<Weight>& weights() const noexcept { return weights_; }

  /// "num/den" per race, in canonical order.
  PerRace<std::string> to_strings() const;
  /// "1/4,1/4,1/4,1/4"
  std::string to_string() const;

  friend bool operator==(const RaceMix&, const RaceMix&) = default;

 private:
  PerRace<Weight> weights_;
};

std::string format_weight(const Weight& w);
/// Accepts "n/d", integers, and finite decimals ("0.25"); decimals are
/// converted exactly.
Weight parse_weight(std::string_view text);
/// Parses four comma- or space-separated weights.
RaceMix parse_mix(std::string_view text);

struct SubjectCounts {
  PerRace<std::int64_t> counts{};

  std::int64_t operator[](Race r) const noexcept { return counts[index_of(r)]; }
  std::int64_t total() const noexcept;
  friend bool operator==(const SubjectCounts&, const SubjectCounts&) = default;
};

/// One nested simplex: corners are permutations of (high, low, low, low).
struct SimplexLevel {
  Weight high;
  Weight low;
};

/// Outermost to innermost.
const std::array<SimplexLevel, 4>& simplex_levels();

/// Edge subdivision parameters between each pair of corners.
const std::array<Weight, 3>& edge_parameters();

/// The 89 mixes: uniform first, then for each level (outermost first) its four
/// corners in race order followed by the edge points in lexicographic
/// corner-pair order with ascending interpolation parameter.
std::vector<RaceMix> enumerate_simplex_points();

/// Nesting level (0 = outermost) of an enumerated mix; nullopt for the uniform
/// mix. Throws std::invalid_argument for mixes outside the enumeration.
std::optional<int> simplex_level_of(const RaceMix& mix);

/// Largest-remainder apportionment of `total` subjects. Quotas are evaluated
/// in percent space as percent(w) * total / 100 with percent(w) the correctly
/// rounded double of 100*w; the leftover units go to the largest fractional
/// remainders, earlier race first on ties. Throws for total < 1.
SubjectCounts mix_to_counts(const RaceMix& mix, std::int64_t total);

// ---------------------------------------------------------------------------
// Flattened tetrahedron net used to plot the enumeration.
//
// The big triangle has corners (0,0), (2,0), (1,sqrt3). Its central inverted
// triangle is the face omitting Indian, with African, Asian and Caucasian at
// the left, right and bottom edge midpoints. Each corner flap is the face
// omitting one of African/Asian/Caucasian and has an Indian vertex at a
// big-triangle corner.

struct NetPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const NetPoint&, const NetPoint&) = default;
};

struct PlotInstance {
  std::size_t point_index = 0;  ///< index into the input list
  Race face = Race::Indian;     ///< the race omitted by the sub-triangle
  int level = -1;               ///< nesting level; -1 for the uniform mix
  NetPoint position;
};

/// Position of race `vertex` within the sub-triangle omitting `face`.
/// Throws std::invalid_argument when vertex == face.
NetPoint net_vertex(Race face, Race vertex);
NetPoint net_centroid(Race face);

/// Lays out enumerated mixes on the net. Outermost-level instances that
/// coincide on edges shared by two sub-triangles are emitted once (in the
/// central triangle). 89 enumerated points give 181 instances.
std::vector<PlotInstance> net_layout(std::span<const RaceMix> points);

}  // namespace fairmix
