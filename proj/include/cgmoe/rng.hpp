#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cgmoe {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and a path of stream labels.
/// derive_seed(s, {a, b}) == derive_seed(derive_seed(s, {a}), {b}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t s = seed;
    for (const std::uint64_t label : path)
        s = mix64(s ^ mix64(label + 0x632be59bd9b4e019ULL));
    return s;
}

// Stream labels used when splitting seeds.
namespace stream {
constexpr std::uint64_t terminal_location = 1;
constexpr std::uint64_t terminal_noise = 2;
constexpr std::uint64_t pair_draw = 3;
constexpr std::uint64_t gain_noise = 4;
constexpr std::uint64_t train_set = 10;
constexpr std::uint64_t test_set = 11;
constexpr std::uint64_t cv_folds = 12;
constexpr std::uint64_t slice_queries = 13;
} // namespace stream

} // namespace cgmoe
