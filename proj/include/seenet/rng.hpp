#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seenet {

using Rng = std::mt19937_64;

/// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

/// Independent generator for a named sub-stream of a run seed ("split", "negatives", "temporal", "init", ...).
inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t salt = 0) {
    const std::uint64_t h = stable_hash(name);
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(h), std::uint32_t(h >> 32),
                      std::uint32_t(salt), std::uint32_t(salt >> 32)};
    return Rng(seq);
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace seenet
