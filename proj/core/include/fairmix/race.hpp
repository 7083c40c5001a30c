#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace fairmix {

/// The four race categories, in canonical order. Every per-race array in the
/// library is indexed by this order.
enum class Race : std::uint8_t { African = 0, Asian = 1, Caucasian = 2, Indian = 3 };

inline constexpr std::size_t kNumRaces = 4;
inline constexpr std::array<Race, kNumRaces> kAllRaces{Race::African, Race::Asian, Race::Caucasian,
                                                       Race::Indian};

template <typename T>
using PerRace = std::array<T, kNumRaces>;

constexpr std::size_t index_of(Race r) noexcept { return static_cast<std::size_t>(r); }
constexpr Race race_at(std::size_t i) noexcept { return static_cast<Race>(i); }

/// "African", "Asian", ...
std::string_view race_name(Race r) noexcept;
/// "afr", "asi", "cau", "ind" (column suffixes in result tables).
std::string_view race_short(Race r) noexcept;

/// Accepts full names or short codes, case-insensitive. Throws std::invalid_argument.
Race parse_race(std::string_view text);

}  // namespace fairmix
