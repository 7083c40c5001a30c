#include "fairmix/race.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>

namespace fairmix {

namespace {
constexpr std::array<std::string_view, kNumRaces> kNames{"African", "Asian", "Caucasian", "Indian"};
constexpr std::array<std::string_view, kNumRaces> kShort{"afr", "asi", "cau", "ind"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}
}  // namespace

std::string_view race_name(Race r) noexcept { return kNames[index_of(r)]; }
std::string_view race_short(Race r) noexcept { return kShort[index_of(r)]; }

Race parse_race(std::string_view text) {
  const std::string key = lower(text);
  for (std::size_t i = 0; i < kNumRaces; ++i) {
    if (key == lower(kNames[i]) || key == kShort[i]) return race_at(i);
  }
  throw std::invalid_argument("unknown race category: '" + std::string(text) + "'");
}

}  // namespace fairmix
