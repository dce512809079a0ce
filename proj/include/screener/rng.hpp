#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace screener {

// splitmix64 finalizer, used both as a bit mixer and to derive independent
// sub-stream seeds from one run seed.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic seed for a tagged sub-task (tree index, bootstrap round, silo...).
// Order-independent parallel execution relies on every task deriving its own
// stream instead of sharing one generator.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(base ^ mix64(a)) ^ mix64(b ^ 0x5851f42d4c957f2dULL));
}

// mt19937_64 with hand-rolled draw helpers. The engine is bit-portable by
// standard; std::uniform_*_distribution is not, so the helpers below keep
// artifacts byte-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, n) via 128-bit multiply-shift (bias < n / 2^64).
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform_index(static_cast<std::size_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform_double() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

    // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::uint32_t> sample_indices(std::size_t n, std::size_t k);

    // Index drawn with probability proportional to the step sizes of a
    // cumulative weight array (cumulative[i] = w_0 + ... + w_i).
    std::size_t weighted_index(const std::vector<double>& cumulative);

private:
    std::mt19937_64 engine_;
};

inline std::vector<std::uint32_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) k = n;
    std::vector<std::uint32_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
    std::vector<std::uint32_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

inline std::size_t Rng::weighted_index(const std::vector<double>& cumulative) {
    const double total = cumulative.back();
    const double u = uniform_double() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    if (idx >= cumulative.size()) idx = cumulative.size() - 1;
    return idx;
}

}  // namespace screener
