#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace invdse {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a(std::string_view s) noexcept;

/// Stable per-stream seed derived from a global seed and a stream name.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream) noexcept;

/// Seed for item `index` of a stream; used where work is split into independent units.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

}  // namespace invdse
