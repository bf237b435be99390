#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace sake {

// splitmix64 finalizer; also used to combine seeds into substream keys.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// xoshiro256** seeded through splitmix64. Self-contained so every stream is
// bit-reproducible across platforms and standard-library versions; the
// std::<distribution> classes are implementation-defined and would break
// the determinism guarantees.
class RngStream {
public:
    explicit RngStream(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            x = mix64(x);
            word = x;
        }
        // All-zero state is invalid for xoshiro.
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; draws two uniforms per call so the
    // stream position never depends on a cached half-pair.
    double normal() {
        const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int(bounded(span));
    }

    // Independent substream keyed by `tag`; hashing keeps parallel and serial
    // schedules bit-identical regardless of draw order elsewhere.
    RngStream derive(uint64_t tag) const {
        return RngStream(hash_combine(hash_combine(state_[0], state_[3]), tag));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = bounded(uint64_t(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from {0..n-1}, sorted ascending.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
        shuffle(idx);
        idx.resize(size_t(k < n ? k : n));
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    // Lemire's multiply-shift bounded draw (negligible bias at these ranges).
    uint64_t bounded(uint64_t n) {
        return uint64_t((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    uint64_t state_[4];
};

}  // namespace sake
