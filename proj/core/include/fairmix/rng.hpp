#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fairmix {

using Rng = std::mt19937_64;

/// Derives a child seed from a parent seed and a textual key. Streams are
/// keyed hierarchically (master -> trial -> stage) so that no two cells of an
/// experiment share a generator.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view key) noexcept;
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key) noexcept;

/// Folds a sequence of keys: derive(derive(parent, k0), k1)...
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::string_view> keys) noexcept;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) using the top 53 bits; independent of the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased integer in [0, n) by rejection. n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Standard normal via Box-Muller (deterministic across standard libraries).
double standard_normal(Rng& rng);

}  // namespace fairmix
