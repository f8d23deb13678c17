#pragma once

#include <cstdint>
#include <random>

namespace autohedge {

/// SplitMix64 finaliser. Used to derive independent substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of substream `index` under `seed`. Distinct `tag`s give disjoint families
/// (training episodes, evaluation episodes, path blocks, ...).
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index,
                                       std::uint64_t tag = 0) noexcept {
    return splitmix64(splitmix64(seed ^ splitmix64(tag)) + index);
}

namespace stream_tag {
inline constexpr std::uint64_t path_block = 0x5041544842ULL;
inline constexpr std::uint64_t mc_batch = 0x4D43424154ULL;
inline constexpr std::uint64_t train_episode = 0x545241494EULL;
inline constexpr std::uint64_t eval_episode = 0x4556414CULL;
inline constexpr std::uint64_t holdout_episode = 0x484F4C44ULL;
inline constexpr std::uint64_t net_init = 0x494E4954ULL;
inline constexpr std::uint64_t exploration = 0x4558504CULL;
inline constexpr std::uint64_t replay = 0x5245504CULL;
}  // namespace stream_tag

/// Engine used everywhere a random stream is needed.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0, std::uint64_t tag = 0) {
    return Rng(substream_seed(seed, index, tag));
}

}  // namespace autohedge
