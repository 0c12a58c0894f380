#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace codedkt {

// splitmix64 step; doubles as a stable mixing function for seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t s = a ^ 0x9e3779b97f4a7c15ULL;
    uint64_t h = splitmix64(s);
    s = h ^ b;
    return splitmix64(s);
}

inline uint64_t stable_hash(std::string_view text) {
    // FNV-1a, then one splitmix round to spread the bits.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

// Deterministic PRNG with explicit algorithms so that seeded runs are
// reproducible independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), returned in ascending order.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        if (k >= n) return idx;
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(k));
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace codedkt
