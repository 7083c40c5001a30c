#include "fairmix/distributions.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fairmix {

namespace {

const Weight kZero{0};
const Weight kOne{1};

std::int64_t parse_i64(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("malformed weight component: '" + std::string(s) + "'");
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

struct Enumeration {
  std::vector<RaceMix> points;
  std::vector<int> levels;  // -1 for uniform
};

const Enumeration& enumeration() {
  static const Enumeration e = [] {
    Enumeration out;
    out.points.push_back(RaceMix::uniform());
    out.levels.push_back(-1);
    const auto& levels = simplex_levels();
    for (std::size_t s = 0; s < levels.size(); ++s) {
      PerRace<PerRace<Weight>> corners{};
      for (std::size_t d = 0; d < kNumRaces; ++d) {
        corners[d].fill(levels[s].low);
        corners[d][d] = levels[s].high;
        out.points.emplace_back(corners[d]);
        out.levels.push_back(static_cast<int>(s));
      }
      for (std::size_t a = 0; a < kNumRaces; ++a) {
        for (std::size_t b = a + 1; b < kNumRaces; ++b) {
          for (const Weight& t : edge_parameters()) {
            PerRace<Weight> w{};
            for (std::size_t k = 0; k < kNumRaces; ++k) {
              w[k] = corners[a][k] + (corners[b][k] - corners[a][k]) * t;
            }
            out.points.emplace_back(w);
            out.levels.push_back(static_cast<int>(s));
          }
        }
      }
    }
    return out;
  }();
  return e;
}

const double kSqrt3 = std::sqrt(3.0);

}  // namespace

RaceMix::RaceMix(const PerRace<Weight>& weights) : weights_(weights) {
  Weight sum{0};
  for (const auto& w : weights_) {
    if (w < kZero) throw std::invalid_argument("race mix weight is negative");
    sum += w;
  }
  if (sum != kOne) {
    throw std::invalid_argument("race mix weights sum to " + format_weight(sum) + ", not 1");
  }
}

RaceMix RaceMix::uniform() { return RaceMix({Weight(1, 4), Weight(1, 4), Weight(1, 4), Weight(1, 4)}); }

RaceMix RaceMix::corner(Race r) {
  PerRace<Weight> w{kZero, kZero, kZero, kZero};
  w[index_of(r)] = kOne;
  return RaceMix(w);
}

PerRace<std::string> RaceMix::to_strings() const {
  PerRace<std::string> out;
  for (std::size_t i = 0; i < kNumRaces; ++i) out[i] = format_weight(weights_[i]);
  return out;
}

std::string RaceMix::to_string() const {
  const auto parts = to_strings();
  return parts[0] + "," + parts[1] + "," + parts[2] + "," + parts[3];
}

std::string format_weight(const Weight& w) {
  return std::to_string(w.numerator()) + "/" + std::to_string(w.denominator());
}

Weight parse_weight(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw std::invalid_argument("empty weight");
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    const auto num = parse_i64(trim(text.substr(0, slash)));
    const auto den = parse_i64(trim(text.substr(slash + 1)));
    if (den == 0) throw std::invalid_argument("zero denominator in weight");
    return Weight(num, den);
  }
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    const auto frac = text.substr(dot + 1);
    if (frac.size() > 15) throw std::invalid_argument("too many decimals in weight");
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    const std::string digits = std::string(text.substr(0, dot)) + std::string(frac);
    return Weight(parse_i64(digits), scale);
  }
  return Weight(parse_i64(text));
}

RaceMix parse_mix(std::string_view text) {
  PerRace<Weight> w{};
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find_first_of(", ;", pos), text.size());
    const auto tok = trim(text.substr(pos, end - pos));
    if (!tok.empty()) {
      if (n == kNumRaces) throw std::invalid_argument("race mix has more than four weights");
      w[n++] = parse_weight(tok);
    }
    pos = end + 1;
  }
  if (n != kNumRaces) throw std::invalid_argument("race mix needs exactly four weights");
  return RaceMix(w);
}

std::int64_t SubjectCounts::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

const std::array<SimplexLevel, 4>& simplex_levels() {
  static const std::array<SimplexLevel, 4> levels{{
      {Weight(1), Weight(0)},
      {Weight(3, 5), Weight(2, 15)},
      {Weight(2, 5), Weight(1, 5)},
      {Weight(3, 10), Weight(7, 30)},
  }};
  return levels;
}

const std::array<Weight, 3>& edge_parameters() {
  static const std::array<Weight, 3> t{Weight(1, 4), Weight(1, 2), Weight(3, 4)};
  return t;
}

std::vector<RaceMix> enumerate_simplex_points() { return enumeration().points; }

std::optional<int> simplex_level_of(const RaceMix& mix) {
  const auto& e = enumeration();
  for (std::size_t i = 0; i < e.points.size(); ++i) {
    if (e.points[i] == mix) {
      if (e.levels[i] < 0) return std::nullopt;
      return e.levels[i];
    }
  }
  throw std::invalid_argument("mix " + mix.to_string() + " is not an enumerated simplex point");
}

SubjectCounts mix_to_counts(const RaceMix& mix, std::int64_t total) {
  if (total < 1) throw std::invalid_argument("mix_to_counts: total must be >= 1");
  PerRace<double> remainder{};
  SubjectCounts out;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < kNumRaces; ++i) {
    const Weight pct = mix.weights()[i] * Weight(100);
    const double percent =
        static_cast<double>(pct.numerator()) / static_cast<double>(pct.denominator());
    const double quota = percent * static_cast<double>(total) / 100.0;
    const double base = std::floor(quota);
    out.counts[i] = static_cast<std::int64_t>(base);
    remainder[i] = quota - base;
    assigned += out.counts[i];
  }
  const std::int64_t leftover = total - assigned;
  if (leftover < 0 || leftover > static_cast<std::int64_t>(kNumRaces)) {
    throw std::logic_error("mix_to_counts: apportionment leftover out of range");
  }
  std::array<std::size_t, kNumRaces> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::int64_t k = 0; k < leftover; ++k) ++out.counts[order[static_cast<std::size_t>(k)]];
  return out;
}

NetPoint net_vertex(Race face, Race vertex) {
  if (face == vertex) throw std::invalid_argument("net_vertex: a face does not contain the race it omits");
  switch (vertex) {
    case Race::African:
      return {0.5, kSqrt3 / 2};
    case Race::Asian:
      return {1.5, kSqrt3 / 2};
    case Race::Caucasian:
      return {1.0, 0.0};
    case Race::Indian:
      break;
  }
  switch (face) {
    case Race::Caucasian:
      return {1.0, kSqrt3};
    case Race::Asian:
      return {0.0, 0.0};
    case Race::African:
      return {2.0, 0.0};
    case Race::Indian:
      break;
  }
  throw std::logic_error("unreachable");
}

NetPoint net_centroid(Race face) {
  NetPoint c;
  for (Race r : kAllRaces) {
    if (r == face) continue;
    const auto v = net_vertex(face, r);
    c.x += v.x / 3.0;
    c.y += v.y / 3.0;
  }
  return c;
}

std::vector<PlotInstance> net_layout(std::span<const RaceMix> points) {
  const auto& levels = simplex_levels();
  std::vector<PlotInstance> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const RaceMix& mix = points[i];
    const auto level = simplex_level_of(mix);
    if (!level) {
      for (Race face : kAllRaces) out.push_back({i, face, -1, net_centroid(face)});
      continue;
    }
    const Weight& low = levels[static_cast<std::size_t>(*level)].low;
    for (Race face : kAllRaces) {
      if (mix[face] != low) continue;
      // Outer-level points with no Indian weight lie on the central
      // triangle; their flap copies coincide with it and are dropped.
      if (*level == 0 && face != Race::Indian && mix[Race::Indian] == kZero) continue;
      const double rest = 1.0 - boost::rational_cast<double>(mix[face]);
      NetPoint p;
      for (Race r : kAllRaces) {
        if (r == face) continue;
        const double b = boost::rational_cast<double>(mix[r]) / rest;
        const auto v = net_vertex(face, r);
        p.x += b * v.x;
        p.y += b * v.y;
      }
      out.push_back({i, face, *level, p});
    }
  }
  return out;
}

}  // namespace fairmix
