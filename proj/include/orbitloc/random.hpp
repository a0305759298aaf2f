#pragma once

// Seeded sampling helpers built directly on mt19937_64 output. The standard
// distributions and std::shuffle are implementation-defined, so they would
// break cross-platform reproducibility of seeded runs.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace orbitloc {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1).
inline double unit_uniform(Rng& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n), n > 0.
inline std::size_t uniform_index(Rng& gen, std::size_t n)
{
    // Lemire's multiply-shift; bias is below 2^-64 * n.
    return static_cast<std::size_t>((static_cast<unsigned __int128>(gen()) * n) >> 64);
}

template <typename T>
void shuffle(std::span<T> v, Rng& gen)
{
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[uniform_index(gen, i)]);
}

/// `k` distinct indices from [0, n) in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& gen)
{
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
        idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i)
        std::swap(idx[i], idx[i + uniform_index(gen, n - i)]);
    idx.resize(k);
    return idx;
}

} // namespace orbitloc
